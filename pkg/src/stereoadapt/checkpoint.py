"""Flat binary checkpoint container.

Layout: a text preamble followed by raw float32 little-endian payload.

    SADCKPT 1\n
    <count>\n
    <name> <d0>x<d1>x...<dn> <byte offset>\n     (count lines)
    DATA\n
    <payload bytes>

Offsets are relative to the payload start.  Arrays are stored float32
regardless of runtime dtype.
"""

import numpy as np

from .errors import FileFormatError

MAGIC = b"SADCKPT"
VERSION = 1


def save_arrays(path, arrays):
    """Write an ordered {name: ndarray} mapping."""
    lines = [b"%s %d\n" % (MAGIC, VERSION), b"%d\n" % len(arrays)]
    payload = []
    offset = 0
    for name, arr in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise FileFormatError("invalid array name %r" % name)
        a = np.ascontiguousarray(arr, dtype="<f4")
        if a.ndim == 0:
            a = a.reshape(1)
        shape = "x".join(str(d) for d in a.shape)
        lines.append(("%s %s %d\n" % (name, shape, offset)).encode("ascii"))
        payload.append(a.tobytes())
        offset += a.nbytes
    lines.append(b"DATA\n")
    with open(path, "wb") as f:
        f.write(b"".join(lines))
        for chunk in payload:
            f.write(chunk)


def load_arrays(path):
    """Read a checkpoint back as an ordered {name: float32 ndarray}."""
    with open(path, "rb") as f:
        blob = f.read()

    def next_line(pos):
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise FileFormatError("%s: truncated header" % path)
        return blob[pos:nl], nl + 1

    line, pos = next_line(0)
    parts = line.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise FileFormatError("%s: bad magic %r" % (path, line[:32]))
    try:
        version = int(parts[1])
    except ValueError:
        raise FileFormatError("%s: bad version %r" % (path, parts[1]))
    if version != VERSION:
        raise FileFormatError("%s: unsupported version %d" % (path, version))

    line, pos = next_line(pos)
    try:
        count = int(line)
    except ValueError:
        raise FileFormatError("%s: bad entry count %r" % (path, line))
    if count < 0:
        raise FileFormatError("%s: negative entry count" % path)

    entries = []
    for _ in range(count):
        line, pos = next_line(pos)
        parts = line.split()
        if len(parts) != 3:
            raise FileFormatError("%s: malformed manifest line %r" % (path, line))
        name = parts[0].decode("ascii")
        try:
            shape = tuple(int(d) for d in parts[1].split(b"x"))
            offset = int(parts[2])
        except ValueError:
            raise FileFormatError("%s: malformed manifest line %r" % (path, line))
        if any(d < 0 for d in shape) or offset < 0:
            raise FileFormatError("%s: malformed manifest line %r" % (path, line))
        entries.append((name, shape, offset))

    line, pos = next_line(pos)
    if line != b"DATA":
        raise FileFormatError("%s: missing DATA separator" % path)
    payload = blob[pos:]

    out = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * n
        if end > len(payload):
            raise FileFormatError(
                "%s: array %s extends past the payload (%d > %d)"
                % (path, name, end, len(payload)))
        if name in out:
            raise FileFormatError("%s: duplicate array name %s" % (path, name))
        flat = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        out[name] = flat.reshape(shape).astype(np.float32)
    return out
