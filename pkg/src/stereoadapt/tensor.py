"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor is a node in an implicit tape: each op records its parent tensors
and a backward closure on the output, so the graph lives exactly as long as
the outputs do.  ``backward`` walks the tape from a scalar root and can be
restricted to any subset of tensors; the restriction prunes whole branches
but is numerically exact (pruned-in nodes see the same upstream gradients a
full pass would deliver, in the same order).

Only the ops the stereo network and its losses need are provided.  Floating
dtypes are float32 for runtime and float64 for finite-difference checks;
operands of an op must agree.
"""

import numpy as np

from . import kernels as K
from .errors import GraphError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


def _check_float(arr, what):
    if arr.dtype not in _FLOAT_DTYPES:
        raise ShapeError("%s must be float32 or float64, got %s" % (what, arr.dtype))


def _check_same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(
                "dtype mismatch between operands: %s vs %s" % (dt, t.data.dtype))
    return dt


class Tensor:
    """Array node of the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents",
                 "backward_fn", "name")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(),
                 name=None):
        self.data = np.asarray(data)
        _check_float(self.data, "tensor data")
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents)
        self.op = op
        self.parents = tuple(parents)
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = self.name or self.op
        return "Tensor(%s, shape=%s, dtype=%s)" % (tag, self.shape, self.dtype)

    # A few operators for readability in loss code; everything maps onto the
    # explicit op functions below.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_const(self, 1.0 / other)

    def __neg__(self):
        return mul_const(self, -1.0)


def _result(data, op, parents, backward_fn):
    out = Tensor(data, op=op, parents=parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    return out


def _c(a):
    return np.ascontiguousarray(a)


# ---------------------------------------------------------------------------
# ops


def conv2d(x, w, b, stride=1, dilation=1):
    """2-d convolution (cross correlation) with symmetric zero padding.

    x (C, H, W), w (O, C, k, k) with k odd, b (O,).  Padding is
    ((k - 1) * dilation) // 2 per side so the output extent is exactly
    ceil(H / stride) x ceil(W / stride).
    """
    if x.ndim != 3 or w.ndim != 4 or b.ndim != 1:
        raise ShapeError("conv2d expects x (C,H,W), w (O,C,k,k), b (O,)")
    o, ci, k, k2 = w.shape
    if k != k2 or k % 2 != 1:
        raise ShapeError("conv2d kernels must be square with odd size, got %dx%d" % (k, k2))
    if ci != x.shape[0]:
        raise ShapeError("conv2d input has %d channels, kernel expects %d"
                         % (x.shape[0], ci))
    if b.shape[0] != o:
        raise ShapeError("bias length %d != %d output channels" % (b.shape[0], o))
    if stride < 1 or dilation < 1:
        raise ShapeError("stride and dilation must be >= 1")
    _check_same_dtype(x, w, b)

    _, h, wi = x.shape
    pad = ((k - 1) * dilation) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    y = K.conv2d_forward(_c(xp), _c(w.data), _c(b.data), stride, dilation)
    if y.shape[1] != -(-h // stride) or y.shape[2] != -(-wi // stride):
        raise ShapeError("conv2d output %s is not ceil(input/stride) of %s"
                         % (y.shape, x.shape))

    wd = _c(w.data)

    def backward_fn(gy, want):
        gxp, gw, gb = K.conv2d_backward(
            _c(xp), wd, _c(gy), stride, dilation, want[0], want[1], want[2])
        gx = None
        if want[0]:
            gx = gxp[:, pad:pad + h, pad:pad + wi] if pad else gxp
        return gx, gw, gb

    return _result(y, "conv2d", (x, w, b), backward_fn)


def leaky_relu(x, slope=0.2):
    """Elementwise max(v, slope*v); gradient at 0 takes the slope branch."""
    pos = x.data > 0
    y = np.where(pos, x.data, x.data * slope)

    def backward_fn(gy, want):
        return (np.where(pos, gy, gy * slope),)

    return _result(y, "leaky_relu", (x,), backward_fn)


def relu(x):
    return leaky_relu(x, slope=0.0)


def correlation(left, right, max_disp):
    """Horizontal correlation layer; see kernels.correlation_forward."""
    if left.shape != right.shape or left.ndim != 3:
        raise ShapeError("correlation expects two (C,H,W) tensors of equal "
                         "shape, got %s and %s" % (left.shape, right.shape))
    if max_disp < 0:
        raise ShapeError("max_disp must be >= 0")
    _check_same_dtype(left, right)
    y = K.correlation_forward(_c(left.data), _c(right.data), int(max_disp))
    ld, rd = _c(left.data), _c(right.data)

    def backward_fn(gy, want):
        return K.correlation_backward(ld, rd, _c(gy), int(max_disp),
                                      want[0], want[1])

    return _result(y, "correlation", (left, right), backward_fn)


def warp(src, disp):
    """Sample src at x - disp per row (clamped linear interpolation).

    src (C, H, W), disp (H, W).  The disparity gradient is zero where the
    sample clamped at the border.
    """
    if src.ndim != 3 or disp.ndim != 2 or src.shape[1:] != disp.shape:
        raise ShapeError("warp expects src (C,H,W) and disp (H,W) with "
                         "matching extents, got %s / %s"
                         % (src.shape, disp.shape))
    _check_same_dtype(src, disp)
    sd, dd = _c(src.data), _c(disp.data)
    y = K.warp_forward(sd, dd)

    def backward_fn(gy, want):
        return K.warp_backward(sd, dd, _c(gy), want[0], want[1])

    return _result(y, "warp", (src, disp), backward_fn)


_MATRIX_CACHE = {}


def _interp_matrix(n_out, n_in, dtype):
    key = (n_out, n_in, np.dtype(dtype).char)
    m = _MATRIX_CACHE.get(key)
    if m is None:
        m = K.bilinear_matrix(n_out, n_in, dtype=dtype)
        _MATRIX_CACHE[key] = m
    return m


def upsample_bilinear(x, factor, scale_values=False):
    """Bilinear upsampling by an integer factor on (C, H, W).

    With scale_values=True the samples are multiplied by the factor as well,
    which is what disparities need when moving to a finer grid.
    """
    if x.ndim != 3:
        raise ShapeError("upsample expects (C,H,W), got %s" % (x.shape,))
    factor = int(factor)
    if factor < 1:
        raise ShapeError("factor must be >= 1")
    _, h, w = x.shape
    ar = _interp_matrix(h * factor, h, x.dtype)
    ac = _interp_matrix(w * factor, w, x.dtype)
    y = np.matmul(np.matmul(ar, x.data), ac.T)
    if scale_values:
        y *= factor

    def backward_fn(gy, want):
        g = gy * factor if scale_values else gy
        return (np.matmul(np.matmul(ar.T, g), ac),)

    return _result(y, "upsample", (x,), backward_fn)


def concat_channels(tensors):
    """Concatenate (Ci, H, W) tensors along the channel axis."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    hw = tensors[0].shape[1:]
    for t in tensors:
        if t.ndim != 3 or t.shape[1:] != hw:
            raise ShapeError("concat operands must share spatial extents, got "
                             + ", ".join(str(t.shape) for t in tensors))
    _check_same_dtype(*tensors)
    y = np.concatenate([t.data for t in tensors], axis=0)
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward_fn(gy, want):
        parts = np.split(gy, splits, axis=0)
        return tuple(p if w else None for p, w in zip(parts, want))

    return _result(y, "concat", tensors, backward_fn)


def _binary_check(a, b, op):
    if a.shape != b.shape:
        raise ShapeError("%s operands must share shapes, got %s and %s"
                         % (op, a.shape, b.shape))
    _check_same_dtype(a, b)


def add(a, b):
    _binary_check(a, b, "add")

    def backward_fn(gy, want):
        return gy, gy

    return _result(a.data + b.data, "add", (a, b), backward_fn)


def sub(a, b):
    _binary_check(a, b, "sub")

    def backward_fn(gy, want):
        return gy, -gy

    return _result(a.data - b.data, "sub", (a, b), backward_fn)


def mul(a, b):
    _binary_check(a, b, "mul")
    ad, bd = a.data, b.data

    def backward_fn(gy, want):
        return (gy * bd if want[0] else None,
                gy * ad if want[1] else None)

    return _result(ad * bd, "mul", (a, b), backward_fn)


def div(a, b):
    _binary_check(a, b, "div")
    ad, bd = a.data, b.data
    y = ad / bd

    def backward_fn(gy, want):
        ga = gy / bd
        return (ga if want[0] else None,
                -(gy / bd) * y if want[1] else None)

    return _result(y, "div", (a, b), backward_fn)


def _const_check(x, c):
    c = np.asarray(c, dtype=x.dtype)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise ShapeError("constant of shape %s does not broadcast onto %s"
                         % (c.shape, x.shape))
    return c


def add_const(x, c):
    """x + c for a scalar or broadcastable constant array (not a Tensor)."""
    c = _const_check(x, c)

    def backward_fn(gy, want):
        return (gy,)

    return _result(x.data + c, "add_const", (x,), backward_fn)


def mul_const(x, c):
    """x * c for a scalar or broadcastable constant array (not a Tensor)."""
    c = _const_check(x, c)

    def backward_fn(gy, want):
        return (gy * c,)

    return _result(x.data * c, "mul_const", (x,), backward_fn)


def abs_(x):
    sgn = np.sign(x.data)

    def backward_fn(gy, want):
        return (gy * sgn,)

    return _result(np.abs(x.data), "abs", (x,), backward_fn)


def reshape(x, shape):
    old = x.shape
    y = x.data.reshape(shape)

    def backward_fn(gy, want):
        return (np.asarray(gy).reshape(old),)

    return _result(y, "reshape", (x,), backward_fn)


def channel_mean(x):
    """(C, H, W) -> (1, H, W) mean over channels."""
    if x.ndim != 3:
        raise ShapeError("channel_mean expects (C,H,W), got %s" % (x.shape,))
    c = x.shape[0]
    y = x.data.mean(axis=0, keepdims=True)

    def backward_fn(gy, want):
        return (np.broadcast_to(gy / c, x.shape),)

    return _result(y, "channel_mean", (x,), backward_fn)


def box_mean(x, window):
    """Local mean over a window x window box on the trailing two axes.

    Border windows shrink to the in-image part and are normalized by the
    actual pixel count, so statistics stay unbiased at the edges.
    """
    if window % 2 != 1 or window < 1:
        raise ShapeError("box window must be odd and positive, got %d" % window)
    r = window // 2
    h, w = x.shape[-2], x.shape[-1]
    counts = K.box_count(h, w, r, dtype=x.dtype)
    y = K.box_sum(x.data, r) / counts

    def backward_fn(gy, want):
        return (K.box_sum(np.asarray(gy) / counts, r),)

    return _result(y, "box_mean", (x,), backward_fn)


def mean(x):
    """Mean over all elements; returns a 0-d tensor."""
    n = x.size
    y = np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype)

    def backward_fn(gy, want):
        return (np.broadcast_to(np.asarray(gy, dtype=x.dtype) / n, x.shape),)

    return _result(y, "mean", (x,), backward_fn)


def sum_(x):
    """Sum over all elements; returns a 0-d tensor."""
    y = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)

    def backward_fn(gy, want):
        return (np.broadcast_to(np.asarray(gy, dtype=x.dtype), x.shape),)

    return _result(y, "sum", (x,), backward_fn)


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root):
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return topo, visited


def backward(root, wrt):
    """Accumulate d root / d t for every tensor t in wrt.

    root must be scalar (size 1).  Returns {tensor: ndarray} and also stores
    each gradient on the tensor's .grad.  Branches of the tape that cannot
    reach any requested tensor are skipped entirely; an empty wrt returns {}
    without touching the tape.  Requesting a tensor that is not part of the
    root's graph (or does not require grad) raises GraphError.
    """
    if root.data.size != 1:
        raise GraphError("backward root must be scalar, got shape %r"
                         % (root.shape,))
    targets = []
    seen = set()
    for t in wrt:
        if not isinstance(t, Tensor):
            raise GraphError("backward targets must be Tensors, got %r" % (t,))
        if not t.requires_grad:
            raise GraphError("target %r does not require grad" % (t,))
        if id(t) not in seen:
            seen.add(id(t))
            targets.append(t)
    if not targets:
        return {}

    topo, in_graph = _toposort(root)
    missing = [t for t in targets if id(t) not in in_graph]
    if missing:
        raise GraphError("targets not reachable from the root: %s"
                         % ", ".join(repr(t) for t in missing))

    target_ids = {id(t) for t in targets}
    needs = {}
    for node in topo:  # ancestors first
        nid = id(node)
        needs[nid] = nid in target_ids or any(
            needs[id(p)] for p in node.parents)

    grads = {id(root): np.ones(root.shape, dtype=root.dtype)}
    results = {}
    for node in reversed(topo):  # consumers before producers
        nid = id(node)
        g = grads.pop(nid, None)
        if g is None:
            continue
        if nid in target_ids:
            results[nid] = np.asarray(g)
        if node.backward_fn is None or not node.parents:
            continue
        want = tuple(needs[id(p)] and p.requires_grad for p in node.parents)
        if not any(want):
            continue
        pgrads = node.backward_fn(g, want)
        for p, pg, w in zip(node.parents, pgrads, want):
            if not w or pg is None:
                continue
            pid = id(p)
            if pid in grads:
                grads[pid] = grads[pid] + pg  # out of place: pg may alias g
            else:
                grads[pid] = pg
    out = {}
    for t in targets:
        g = np.ascontiguousarray(results[id(t)])
        t.grad = g
        out[t] = g
    return out
