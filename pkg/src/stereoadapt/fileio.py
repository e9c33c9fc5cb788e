"""On-disk formats: images, disparity maps, sparse labels, sequences.

Disparities travel as 16-bit PNG with value = disparity * 256 and 0 meaning
invalid, or as PFM float maps (bottom-up row order, scale sign encoding
endianness).  Sparse labels use a small binary format with a text header.
Sequences are directories of numbered frames plus a key=value config file.
"""

import io
import json
import os
import re
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, FileFormatError, SequenceError

DISP_PNG_SCALE = 256.0


@dataclass
class StereoFrame:
    """One rectified stereo pair, optionally with ground truth."""

    left: np.ndarray  # (C, H, W) float32 in [0, 1]
    right: np.ndarray
    gt: Optional[np.ndarray] = None  # (H, W) float32
    valid: Optional[np.ndarray] = None  # (H, W) bool
    index: int = 0
    domain: str = ""

    @property
    def resolution(self):
        return self.left.shape[1:]


# ---------------------------------------------------------------------------
# PNG


def write_image_png(path, img):
    """Store a single-channel float image in [0, 1] as 16-bit gray PNG."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise FileFormatError("expected single-channel image, got shape %s"
                              % (img.shape,))
    arr = np.rint(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_image_png(path):
    """Read a PNG as (C, H, W) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise FileFormatError("%s: cannot decode PNG (%s)" % (path, exc))
    if mode in ("I;16", "I"):
        return (arr.astype(np.float32) / 65535.0)[None]
    if mode == "L":
        return (arr.astype(np.float32) / 255.0)[None]
    if mode == "RGB":
        return np.moveaxis(arr.astype(np.float32) / 255.0, -1, 0)
    raise FileFormatError("%s: unsupported PNG mode %s" % (path, mode))


def write_disparity_png(path, disp, valid=None):
    """16-bit disparity PNG: value = disparity * 256, 0 = invalid."""
    disp = np.asarray(disp, dtype=np.float64)
    if disp.ndim != 2:
        raise FileFormatError("disparity must be (H, W), got %s" % (disp.shape,))
    if valid is None:
        valid = np.isfinite(disp) & (disp > 0)
    raw = np.zeros(disp.shape, dtype=np.uint16)
    enc = np.clip(np.rint(disp * DISP_PNG_SCALE), 1, 65535)
    raw[valid] = enc[valid].astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_disparity_png(path):
    """Read a 16-bit disparity PNG back to (disp float32, valid bool)."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise FileFormatError("%s: cannot decode PNG (%s)" % (path, exc))
    if mode not in ("I;16", "I"):
        raise FileFormatError("%s: disparity PNG must be 16-bit gray, got %s"
                              % (path, mode))
    raw = arr.astype(np.float32)
    valid = raw > 0
    return raw / np.float32(DISP_PNG_SCALE), valid


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data, scale=1.0):
    """Write a float map as PFM (grayscale Pf or color PF).

    The stored scale's sign encodes endianness; data is written in the
    machine's float32 byte order, rows bottom-up per the format.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise FileFormatError("PFM data must be (H, W) or (H, W, 3), got %s"
                              % (data.shape,))
    if scale == 0:
        raise FileFormatError("PFM scale must be nonzero")
    little = np.little_endian
    signed = -abs(scale) if little else abs(scale)
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(b"%d %d\n" % (data.shape[1], data.shape[0]))
        f.write(("%.4f\n" % signed).encode("ascii"))
        f.write(np.flipud(data).astype("<f4" if little else ">f4").tobytes())


def read_pfm(path):
    """Read a PFM file; returns (data float32 top-down, scale)."""
    with open(path, "rb") as f:
        blob = f.read()

    def token(pos):
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        if pos == end:
            raise FileFormatError("%s: truncated PFM header" % path)
        return blob[pos:end], end

    magic, pos = token(0)
    if magic not in (b"Pf", b"PF"):
        raise FileFormatError("%s: not a PFM file (magic %r)" % (path, magic))
    color = magic == b"PF"
    try:
        wtok, pos = token(pos)
        htok, pos = token(pos)
        stok, pos = token(pos)
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise FileFormatError("%s: malformed PFM header" % path)
    if w <= 0 or h <= 0 or scale == 0:
        raise FileFormatError("%s: malformed PFM header" % path)
    pos += 1  # single whitespace byte after the scale line
    n = w * h * (3 if color else 1)
    dt = "<f4" if scale < 0 else ">f4"
    payload = blob[pos:pos + 4 * n]
    if len(payload) != 4 * n:
        raise FileFormatError("%s: PFM payload truncated (%d of %d bytes)"
                              % (path, len(payload), 4 * n))
    data = np.frombuffer(payload, dtype=dt).reshape(
        (h, w, 3) if color else (h, w))
    return np.flipud(data).astype(np.float32), abs(scale)


# ---------------------------------------------------------------------------
# sparse labels

SPARSE_MAGIC = b"SPARSE16"
_SPARSE_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("d", "<f4")])


def write_sparse_labels(path, disp, mask):
    """Write masked disparities as 'SPARSE16 W H N' + packed records."""
    disp = np.asarray(disp, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    if disp.shape != mask.shape or disp.ndim != 2:
        raise FileFormatError("disp and mask must be matching (H, W) arrays")
    h, w = disp.shape
    if w > 65535 or h > 65535:
        raise FileFormatError("extent %dx%d exceeds the 16-bit coordinate "
                              "range" % (w, h))
    ys, xs = np.nonzero(mask)
    rec = np.empty(len(ys), dtype=_SPARSE_RECORD)
    rec["x"] = xs
    rec["y"] = ys
    rec["d"] = disp[ys, xs]
    with open(path, "wb") as f:
        f.write(b"%s %d %d %d\n" % (SPARSE_MAGIC, w, h, len(rec)))
        f.write(rec.tobytes())


def read_sparse_labels(path, expected_shape=None):
    """Read sparse labels back to dense (disp, mask) arrays."""
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FileFormatError("%s: missing header line" % path)
    parts = blob[:nl].split()
    if len(parts) != 4 or parts[0] != SPARSE_MAGIC:
        raise FileFormatError("%s: bad header %r" % (path, blob[:nl][:64]))
    try:
        w, h, n = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise FileFormatError("%s: bad header %r" % (path, blob[:nl][:64]))
    if w <= 0 or h <= 0 or n < 0:
        raise FileFormatError("%s: bad extents %dx%d" % (path, w, h))
    if expected_shape is not None and (h, w) != tuple(expected_shape):
        raise FileFormatError("%s: extent %dx%d does not match expected %dx%d"
                              % (path, w, h, expected_shape[1],
                                 expected_shape[0]))
    payload = blob[nl + 1:]
    want = n * _SPARSE_RECORD.itemsize
    if len(payload) < want:
        raise FileFormatError("%s: payload truncated (%d of %d bytes)"
                              % (path, len(payload), want))
    rec = np.frombuffer(payload, dtype=_SPARSE_RECORD, count=n)
    if n and (int(rec["x"].max()) >= w or int(rec["y"].max()) >= h):
        raise FileFormatError("%s: record coordinates outside %dx%d"
                              % (path, w, h))
    disp = np.zeros((h, w), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    disp[rec["y"], rec["x"]] = rec["d"]
    mask[rec["y"], rec["x"]] = True
    return disp, mask


# ---------------------------------------------------------------------------
# key=value configs


def read_config(path):
    """Parse a key=value file ('#' comments, blank lines ignored)."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError("%s: %s" % (path, exc))
    for ln, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError("%s:%d: expected key=value, got %r"
                              % (path, ln, line.rstrip()))
        key, value = text.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("%s:%d: empty key" % (path, ln))
        if key in out:
            raise ConfigError("%s:%d: duplicate key %s" % (path, ln, key))
        out[key] = value
    return out


def write_config(path, values):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in values.items():
            f.write("%s = %s\n" % (key, value))


def config_get(cfg, key, kind, default=None, source="config"):
    """Typed lookup in a parsed config dict with a clear error message."""
    if key not in cfg:
        if default is None:
            raise ConfigError("%s: missing required key %s" % (source, key))
        return default
    raw = cfg[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError("%s: key %s: cannot parse %r as %s"
                          % (source, key, raw, kind.__name__))


# ---------------------------------------------------------------------------
# sequence directories

_FRAME_RE = re.compile(r"^(\d{6})\.png$")


def write_sequence(dirpath, frames, extra_meta=None):
    """Write frames into dirpath/{left,right,disp,nonocc}/NNNNNN.png."""
    os.makedirs(dirpath, exist_ok=True)
    for sub in ("left", "right", "disp", "nonocc"):
        os.makedirs(os.path.join(dirpath, sub), exist_ok=True)
    count = 0
    res = None
    domains = []
    for i, frame in enumerate(frames):
        name = "%06d.png" % i
        if res is None:
            res = frame.resolution
        elif frame.resolution != res:
            raise SequenceError("frame %d resolution %s differs from %s"
                                % (i, frame.resolution, res))
        write_image_png(os.path.join(dirpath, "left", name), frame.left)
        write_image_png(os.path.join(dirpath, "right", name), frame.right)
        if frame.gt is not None:
            write_disparity_png(os.path.join(dirpath, "disp", name), frame.gt,
                                frame.valid)
        if frame.valid is not None:
            nonocc = (frame.valid.astype(np.uint8)) * 255
            Image.fromarray(nonocc).save(
                os.path.join(dirpath, "nonocc", name))
        domains.append(frame.domain)
        count += 1
    if res is None:
        raise SequenceError("cannot write an empty sequence")
    meta = {"frames": count, "height": res[0], "width": res[1]}
    if any(domains):
        meta["domains"] = ",".join(domains)
    meta.update(extra_meta or {})
    write_config(os.path.join(dirpath, "seq.cfg"), meta)
    return meta


class SequenceReader:
    """Lazy reader over one sequence directory."""

    def __init__(self, dirpath):
        self.dirpath = dirpath
        cfg_path = os.path.join(dirpath, "seq.cfg")
        if not os.path.isdir(dirpath):
            raise SequenceError("%s is not a directory" % dirpath)
        self.meta = read_config(cfg_path) if os.path.exists(cfg_path) else {}
        left_dir = os.path.join(dirpath, "left")
        if not os.path.isdir(left_dir):
            raise SequenceError("%s has no left/ image directory" % dirpath)
        names = sorted(n for n in os.listdir(left_dir) if _FRAME_RE.match(n))
        if not names:
            raise SequenceError("%s contains no frames" % dirpath)
        self.names = names
        self.domains = (self.meta.get("domains", "").split(",")
                        if self.meta.get("domains") else [])

    def __len__(self):
        return len(self.names)

    def _load(self, i, name):
        def path(sub):
            return os.path.join(self.dirpath, sub, name)

        try:
            left = read_image_png(path("left"))
            right = read_image_png(path("right"))
        except FileFormatError as exc:
            raise SequenceError("frame %d (%s): %s" % (i, name, exc))
        gt = valid = None
        if os.path.exists(path("disp")):
            try:
                gt, gt_valid = read_disparity_png(path("disp"))
            except FileFormatError as exc:
                raise SequenceError("frame %d (%s): %s" % (i, name, exc))
            valid = gt_valid
        if os.path.exists(path("nonocc")):
            nonocc = np.asarray(Image.open(path("nonocc"))) > 0
            valid = nonocc if valid is None else (valid & nonocc)
        domain = self.domains[i] if i < len(self.domains) else ""
        return StereoFrame(left=left, right=right, gt=gt, valid=valid,
                           index=i, domain=domain)

    def __iter__(self):
        res = None
        for i, name in enumerate(self.names):
            frame = self._load(i, name)
            if res is None:
                res = frame.resolution
            elif frame.resolution != res:
                raise SequenceError(
                    "frame %d (%s): resolution %s differs from %s"
                    % (i, name, frame.resolution, res))
            yield frame


def chain_sequences(dirs):
    """Iterate several sequence directories as one stream.

    Frames are renumbered globally; a resolution change between directories
    raises, mirroring the single-directory contract.
    """
    readers = [SequenceReader(d) for d in dirs]
    index = 0
    res = None
    for reader in readers:
        for frame in reader:
            if res is None:
                res = frame.resolution
            elif frame.resolution != res:
                raise SequenceError(
                    "sequence %s switches resolution to %s (stream is %s)"
                    % (reader.dirpath, frame.resolution, res))
            frame.index = index
            yield frame
            index += 1


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
