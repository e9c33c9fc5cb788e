"""Vectorized numpy implementations of the hot kernels.

These mirror the compiled backend in ``_native`` function for function; the
package behaves identically (just slower on some shapes) when the extension
is not built.  All image-like arrays are channel-first ``(C, H, W)``, cost
volumes are ``(H, W, D)`` with the disparity hypothesis last.

Convolution kernels take pre-padded input; padding policy lives one level up
in the tensor ops.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

# ---------------------------------------------------------------------------
# convolution


def _conv_out_extent(padded, k, stride, dilation):
    eff = (k - 1) * dilation + 1
    return (padded - eff) // stride + 1


def _im2col(xp, k, stride, dilation, ho, wo):
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    cols = as_strided(
        xp,
        shape=(c, k, k, ho, wo),
        strides=(s0, s1 * dilation, s2 * dilation, s1 * stride, s2 * stride),
    )
    # reshape copies (the view is not contiguous), which is what we want
    # before handing the matrix to BLAS
    return cols.reshape(c * k * k, ho * wo)


def conv2d_forward(xp, w, b, stride, dilation):
    """2-d cross correlation on pre-padded input.

    xp : (C, Hp, Wp) padded input
    w  : (O, C, k, k) kernels, b : (O,) bias
    Returns (O, Ho, Wo).
    """
    o, _, k, _ = w.shape
    ho = _conv_out_extent(xp.shape[1], k, stride, dilation)
    wo = _conv_out_extent(xp.shape[2], k, stride, dilation)
    cols = _im2col(xp, k, stride, dilation, ho, wo)
    y = w.reshape(o, -1) @ cols
    y += b[:, None]
    return y.reshape(o, ho, wo)


def conv2d_backward(xp, w, gy, stride, dilation, need_gx=True, need_gw=True,
                    need_gb=True):
    """Gradients of conv2d_forward w.r.t. padded input, weights and bias.

    Returns (gxp, gw, gb); entries not requested come back as None.
    """
    o, c, k, _ = w.shape
    _, ho, wo = gy.shape
    g2 = gy.reshape(o, -1)

    gb = g2.sum(axis=1) if need_gb else None

    gw = None
    if need_gw:
        cols = _im2col(xp, k, stride, dilation, ho, wo)
        gw = (g2 @ cols.T).reshape(o, c, k, k)

    gxp = None
    if need_gx:
        gxp = np.zeros_like(xp)
        gcols = (w.reshape(o, -1).T @ g2).reshape(c, k, k, ho, wo)
        for ky in range(k):
            ys = slice(ky * dilation, ky * dilation + stride * (ho - 1) + 1, stride)
            for kx in range(k):
                xs = slice(kx * dilation, kx * dilation + stride * (wo - 1) + 1, stride)
                gxp[:, ys, xs] += gcols[:, ky, kx]
    return gxp, gw, gb


# ---------------------------------------------------------------------------
# correlation


def correlation_forward(left, right, max_disp):
    """Channel-mean dot product of left against horizontally shifted right.

    Output channel i holds shift s = i - max_disp (right sampled at x + s);
    positions where x + s falls outside the image are zero.
    """
    c, h, w = left.shape
    out = np.zeros((2 * max_disp + 1, h, w), dtype=left.dtype)
    inv_c = np.asarray(1.0 / c, dtype=left.dtype)
    for s in range(-max_disp, max_disp + 1):
        x0 = max(0, -s)
        x1 = min(w, w - s)
        if x0 >= x1:
            continue
        prod = left[:, :, x0:x1] * right[:, :, x0 + s:x1 + s]
        out[s + max_disp, :, x0:x1] = prod.sum(axis=0) * inv_c
    return out


def correlation_backward(left, right, gy, max_disp, need_gl=True, need_gr=True):
    c, h, w = left.shape
    inv_c = np.asarray(1.0 / c, dtype=left.dtype)
    gl = np.zeros_like(left) if need_gl else None
    gr = np.zeros_like(right) if need_gr else None
    for s in range(-max_disp, max_disp + 1):
        x0 = max(0, -s)
        x1 = min(w, w - s)
        if x0 >= x1:
            continue
        g = gy[s + max_disp, :, x0:x1] * inv_c
        if need_gl:
            gl[:, :, x0:x1] += g * right[:, :, x0 + s:x1 + s]
        if need_gr:
            gr[:, :, x0 + s:x1 + s] += g * left[:, :, x0:x1]
    return gl, gr


# ---------------------------------------------------------------------------
# horizontal warp


def _warp_coords(disp, w, dtype):
    xs = np.arange(w, dtype=dtype) - disp
    xsc = np.clip(xs, 0.0, w - 1.0)
    x0 = np.minimum(np.floor(xsc), w - 2).astype(np.intp) if w > 1 else \
        np.zeros_like(xsc, dtype=np.intp)
    frac = (xsc - x0).astype(dtype, copy=False)
    inside = (xs > 0.0) & (xs < w - 1.0)
    return x0, frac, inside


def warp_forward(src, disp):
    """Sample src at x - disp per row with linear interpolation.

    Out-of-range coordinates clamp to the border.  src is (C, H, W), disp is
    (H, W), output is (C, H, W).
    """
    c, h, w = src.shape
    if w == 1:
        return src.copy()
    x0, frac, _ = _warp_coords(disp, w, src.dtype)
    rows = np.arange(h)[:, None]
    g0 = src[:, rows, x0]
    g1 = src[:, rows, x0 + 1]
    return g0 + frac * (g1 - g0)


def warp_backward(src, disp, gy, need_gsrc=True, need_gdisp=True):
    """Gradients of warp_forward.

    The disparity gradient is zeroed where the sample coordinate was clamped
    (the output is locally constant there).
    """
    c, h, w = src.shape
    gsrc = np.zeros_like(src) if need_gsrc else None
    gdisp = None
    if w == 1:
        if need_gsrc:
            gsrc += gy
        if need_gdisp:
            gdisp = np.zeros_like(disp)
        return gsrc, gdisp
    x0, frac, inside = _warp_coords(disp, w, src.dtype)
    rows = np.arange(h)[None, :, None]
    chans = np.arange(c)[:, None, None]
    if need_gsrc:
        np.add.at(gsrc, (chans, rows, x0[None]), (1.0 - frac) * gy)
        np.add.at(gsrc, (chans, rows, x0[None] + 1), frac * gy)
    if need_gdisp:
        g1 = src[:, np.arange(h)[:, None], x0 + 1]
        g0 = src[:, np.arange(h)[:, None], x0]
        gdisp = -((g1 - g0) * gy).sum(axis=0)
        gdisp[~inside] = 0.0
    return gsrc, gdisp


# ---------------------------------------------------------------------------
# census / cost volumes


def census_transform(img, window):
    """Per-pixel binary descriptor: bit set where neighbour > centre.

    Bits are assigned in row-major window order with the centre skipped
    (bit 0 = top-left neighbour).  Borders replicate the edge rows/cols.
    Window must be odd and small enough for 64 bits.
    """
    r = window // 2
    h, w = img.shape
    pad = np.pad(img, r, mode="edge")
    desc = np.zeros((h, w), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[r + dy:r + dy + h, r + dx:r + dx + w]
            desc |= (nb > img).astype(np.uint64) << np.uint64(bit)
            bit += 1
    return desc


def hamming_volume(ca, cb, num_disp, max_cost, direction):
    """Hamming-distance cost volume between two census images.

    direction +1 compares cb at x - d (left reference), -1 compares cb at
    x + d (right reference).  Hypotheses with the comparison pixel outside
    the image get max_cost.
    """
    h, w = ca.shape
    vol = np.full((h, w, num_disp), np.float32(max_cost), dtype=np.float32)
    for d in range(num_disp):
        if d >= w:
            break
        if direction > 0:
            vol[:, d:, d] = np.bitwise_count(ca[:, d:] ^ cb[:, :w - d])
        else:
            vol[:, :w - d, d] = np.bitwise_count(ca[:, :w - d] ^ cb[:, d:])
    return vol


def box_sum(x, radius):
    """Un-normalized box-window sum over the trailing two axes.

    Windows shrink at the borders (no padding contribution).  Accumulation
    runs in float64 regardless of input dtype to keep long cumsums exact.
    """
    h, w = x.shape[-2], x.shape[-1]
    ii = np.zeros(x.shape[:-2] + (h + 1, w + 1), dtype=np.float64)
    ii[..., 1:, 1:] = np.cumsum(np.cumsum(x, axis=-2, dtype=np.float64), axis=-1)
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    out = (ii[..., y1[:, None], x1[None, :]] - ii[..., y0[:, None], x1[None, :]]
           - ii[..., y1[:, None], x0[None, :]] + ii[..., y0[:, None], x0[None, :]])
    return out.astype(x.dtype, copy=False)


def box_count(h, w, radius, dtype=np.float64):
    """Per-pixel count of in-image pixels inside the box window."""
    cy = (np.clip(np.arange(h) + radius + 1, 0, h)
          - np.clip(np.arange(h) - radius, 0, h))
    cx = (np.clip(np.arange(w) + radius + 1, 0, w)
          - np.clip(np.arange(w) - radius, 0, w))
    return np.asarray(np.outer(cy, cx), dtype=dtype)


def sad_volume(a, b, num_disp, window, direction):
    """Sum-of-absolute-differences cost volume over a square window.

    Pixels whose comparison column is outside the image contribute the
    maximum per-pixel difference (1.0 for images in [0, 1]); window sums use
    shrunken border windows scaled back to the full window area so border
    costs stay comparable.
    """
    h, w = a.shape
    r = window // 2
    area = float(window * window)
    counts = box_count(h, w, r)
    diffs = np.empty((num_disp, h, w), dtype=np.float64)
    for d in range(num_disp):
        layer = np.ones((h, w), dtype=np.float64)
        if d < w:
            if direction > 0:
                layer[:, d:] = np.abs(a[:, d:] - b[:, :w - d])
            else:
                layer[:, :w - d] = np.abs(a[:, :w - d] - b[:, d:])
        diffs[d] = layer
    sums = box_sum(diffs, r) / counts * area
    return np.ascontiguousarray(sums.transpose(1, 2, 0).astype(np.float32))


# ---------------------------------------------------------------------------
# scanline aggregation


def _sgm_delta(lp, p1, p2):
    """Transition term min(...) - min_k L(k) of the scanline recurrence.

    lp is (rows, D); returns the per-(row, d) increment over the raw cost.
    """
    m = lp.min(axis=-1)
    up = np.empty_like(lp)
    up[..., 1:] = lp[..., :-1] + p1
    up[..., 0] = np.inf
    down = np.empty_like(lp)
    down[..., :-1] = lp[..., 1:] + p1
    down[..., -1] = np.inf
    t = np.minimum(np.minimum(lp, up), np.minimum(down, m[..., None] + p2))
    return t - m[..., None]


def sgm_scan_x(cost, p1, p2):
    """Scanline aggregation along +x (predecessor is the same row, x - 1)."""
    h, w, d = cost.shape
    out = np.empty_like(cost)
    out[:, 0] = cost[:, 0]
    for x in range(1, w):
        out[:, x] = cost[:, x] + _sgm_delta(out[:, x - 1], p1, p2)
    return out


def sgm_scan_diag(cost, p1, p2):
    """Scanline aggregation along (+1, +1); row 0 restarts at the raw cost."""
    h, w, d = cost.shape
    out = np.empty_like(cost)
    out[:, 0] = cost[:, 0]
    for x in range(1, w):
        delta = _sgm_delta(out[:, x - 1], p1, p2)
        out[1:, x] = cost[1:, x] + delta[:-1]
        out[0, x] = cost[0, x]
    return out


# ---------------------------------------------------------------------------
# resampling helpers (numpy on both backends)


def bilinear_matrix(n_out, n_in, dtype=np.float64):
    """Interpolation matrix A with out = A @ in along one axis.

    Uses the half-pixel-centre convention: source coordinate of output o is
    (o + 0.5) * n_in / n_out - 0.5, clamped to the valid range.
    """
    a = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1:
        a[:, 0] = 1.0
        return a.astype(dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 2)
    f = src - i0
    a[np.arange(n_out), i0] = 1.0 - f
    a[np.arange(n_out), i0 + 1] += f
    return a.astype(dtype)
