"""Compiled kernel backend.

Function-for-function mirror of ``numpy_kernels``; see that module for the
reference semantics and array layout conventions.
"""

import numpy as np

cimport cython
from libc.math cimport fabs, floor

ctypedef fused floating:
    float
    double

cdef extern from *:
    """
    static inline int popcount64(unsigned long long x)
    { return __builtin_popcountll(x); }
    """
    int popcount64(unsigned long long x) nogil


cdef inline object _dtype_of(floating v):
    if floating is float:
        return np.float32
    return np.float64


# ---------------------------------------------------------------------------
# convolution


def conv2d_forward(floating[:, :, ::1] xp, floating[:, :, :, ::1] w,
                   floating[::1] b, int stride, int dilation):
    cdef Py_ssize_t C = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2]
    cdef Py_ssize_t O = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t eff = (k - 1) * dilation + 1
    cdef Py_ssize_t Ho = (Hp - eff) // stride + 1
    cdef Py_ssize_t Wo = (Wp - eff) // stride + 1
    out_arr = np.empty((O, Ho, Wo), dtype=_dtype_of(b[0]))
    cdef floating[:, :, ::1] y = out_arr
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, ix0
    cdef floating acc
    with nogil:
        for o in range(O):
            for oy in range(Ho):
                for ox in range(Wo):
                    acc = b[o]
                    ix0 = ox * stride
                    for c in range(C):
                        for ky in range(k):
                            iy = oy * stride + ky * dilation
                            for kx in range(k):
                                acc = acc + w[o, c, ky, kx] * xp[c, iy, ix0 + kx * dilation]
                    y[o, oy, ox] = acc
    return out_arr


def conv2d_backward(floating[:, :, ::1] xp, floating[:, :, :, ::1] w,
                    floating[:, :, ::1] gy, int stride, int dilation,
                    bint need_gx=True, bint need_gw=True, bint need_gb=True):
    cdef Py_ssize_t C = xp.shape[0]
    cdef Py_ssize_t O = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = gy.shape[1], Wo = gy.shape[2]
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy
    cdef floating acc, wv, g
    dt = _dtype_of(w[0, 0, 0, 0])

    gb_arr = None
    cdef floating[::1] gb
    if need_gb:
        gb_arr = np.empty(O, dtype=dt)
        gb = gb_arr
        with nogil:
            for o in range(O):
                acc = 0
                for oy in range(Ho):
                    for ox in range(Wo):
                        acc = acc + gy[o, oy, ox]
                gb[o] = acc

    gw_arr = None
    cdef floating[:, :, :, ::1] gw
    if need_gw:
        gw_arr = np.empty((O, C, k, k), dtype=dt)
        gw = gw_arr
        with nogil:
            for o in range(O):
                for c in range(C):
                    for ky in range(k):
                        for kx in range(k):
                            acc = 0
                            for oy in range(Ho):
                                iy = oy * stride + ky * dilation
                                for ox in range(Wo):
                                    acc = acc + gy[o, oy, ox] * xp[c, iy, ox * stride + kx * dilation]
                            gw[o, c, ky, kx] = acc

    gx_arr = None
    cdef floating[:, :, ::1] gxp
    if need_gx:
        gx_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=dt)
        gxp = gx_arr
        with nogil:
            for c in range(C):
                for o in range(O):
                    for ky in range(k):
                        for kx in range(k):
                            wv = w[o, c, ky, kx]
                            for oy in range(Ho):
                                iy = oy * stride + ky * dilation
                                for ox in range(Wo):
                                    gxp[c, iy, ox * stride + kx * dilation] += wv * gy[o, oy, ox]
    return gx_arr, gw_arr, gb_arr


# ---------------------------------------------------------------------------
# correlation


def correlation_forward(floating[:, :, ::1] left, floating[:, :, ::1] right,
                        int max_disp):
    cdef Py_ssize_t C = left.shape[0], H = left.shape[1], W = left.shape[2]
    cdef Py_ssize_t n = 2 * max_disp + 1
    out_arr = np.zeros((n, H, W), dtype=_dtype_of(left[0, 0, 0]))
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t s, ch, x0, x1, c, y, x
    cdef floating inv_c = <floating> (1.0 / C)
    with nogil:
        for s in range(-max_disp, max_disp + 1):
            ch = s + max_disp
            x0 = -s if s < 0 else 0
            x1 = W - s if s > 0 else W
            if x0 >= x1:
                continue
            for c in range(C):
                for y in range(H):
                    for x in range(x0, x1):
                        out[ch, y, x] += left[c, y, x] * right[c, y, x + s]
        for ch in range(n):
            for y in range(H):
                for x in range(W):
                    out[ch, y, x] *= inv_c
    return out_arr


def correlation_backward(floating[:, :, ::1] left, floating[:, :, ::1] right,
                         floating[:, :, ::1] gy, int max_disp,
                         bint need_gl=True, bint need_gr=True):
    cdef Py_ssize_t C = left.shape[0], H = left.shape[1], W = left.shape[2]
    dt = _dtype_of(left[0, 0, 0])
    gl_arr = np.zeros((C, H, W), dtype=dt) if need_gl else None
    gr_arr = np.zeros((C, H, W), dtype=dt) if need_gr else None
    cdef floating[:, :, ::1] gl = gl_arr if need_gl else left
    cdef floating[:, :, ::1] gr = gr_arr if need_gr else right
    cdef Py_ssize_t s, ch, x0, x1, c, y, x
    cdef floating inv_c = <floating> (1.0 / C)
    cdef floating g
    with nogil:
        for s in range(-max_disp, max_disp + 1):
            ch = s + max_disp
            x0 = -s if s < 0 else 0
            x1 = W - s if s > 0 else W
            if x0 >= x1:
                continue
            for c in range(C):
                for y in range(H):
                    for x in range(x0, x1):
                        g = gy[ch, y, x] * inv_c
                        if need_gl:
                            gl[c, y, x] += g * right[c, y, x + s]
                        if need_gr:
                            gr[c, y, x + s] += g * left[c, y, x]
    return gl_arr, gr_arr


# ---------------------------------------------------------------------------
# horizontal warp


def warp_forward(floating[:, :, ::1] src, floating[:, ::1] disp):
    cdef Py_ssize_t C = src.shape[0], H = src.shape[1], W = src.shape[2]
    if W == 1:
        return np.asarray(src).copy()
    out_arr = np.empty((C, H, W), dtype=_dtype_of(src[0, 0, 0]))
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, c, x0
    cdef floating xs, f, g0
    with nogil:
        for y in range(H):
            for x in range(W):
                xs = x - disp[y, x]
                if xs < 0:
                    xs = 0
                if xs > W - 1:
                    xs = <floating> (W - 1)
                x0 = <Py_ssize_t> floor(xs)
                if x0 > W - 2:
                    x0 = W - 2
                f = xs - x0
                for c in range(C):
                    g0 = src[c, y, x0]
                    out[c, y, x] = g0 + f * (src[c, y, x0 + 1] - g0)
    return out_arr


def warp_backward(floating[:, :, ::1] src, floating[:, ::1] disp,
                  floating[:, :, ::1] gy, bint need_gsrc=True,
                  bint need_gdisp=True):
    cdef Py_ssize_t C = src.shape[0], H = src.shape[1], W = src.shape[2]
    dt = _dtype_of(src[0, 0, 0])
    gsrc_arr = np.zeros((C, H, W), dtype=dt) if need_gsrc else None
    gdisp_arr = np.zeros((H, W), dtype=dt) if need_gdisp else None
    if W == 1:
        if need_gsrc:
            gsrc_arr += np.asarray(gy)
        return gsrc_arr, gdisp_arr
    cdef floating[:, :, ::1] gsrc = gsrc_arr if need_gsrc else src
    cdef floating[:, ::1] gdisp = gdisp_arr if need_gdisp else disp
    cdef Py_ssize_t y, x, c, x0
    cdef floating xs, xsc, f, g, gd
    cdef bint inside
    with nogil:
        for y in range(H):
            for x in range(W):
                xs = x - disp[y, x]
                xsc = xs
                if xsc < 0:
                    xsc = 0
                if xsc > W - 1:
                    xsc = <floating> (W - 1)
                x0 = <Py_ssize_t> floor(xsc)
                if x0 > W - 2:
                    x0 = W - 2
                f = xsc - x0
                inside = (xs > 0) and (xs < W - 1)
                gd = 0
                for c in range(C):
                    g = gy[c, y, x]
                    if need_gsrc:
                        gsrc[c, y, x0] += (1 - f) * g
                        gsrc[c, y, x0 + 1] += f * g
                    if need_gdisp:
                        gd += (src[c, y, x0 + 1] - src[c, y, x0]) * g
                if need_gdisp:
                    gdisp[y, x] = -gd if inside else 0
    return gsrc_arr, gdisp_arr


# ---------------------------------------------------------------------------
# census / cost volumes


def census_transform(floating[:, ::1] img, int window):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef int r = window // 2
    desc_arr = np.zeros((H, W), dtype=np.uint64)
    cdef unsigned long long[:, ::1] desc = desc_arr
    cdef Py_ssize_t y, x, yy, xx
    cdef int dy, dx, bit
    cdef floating ctr
    cdef unsigned long long bits
    with nogil:
        for y in range(H):
            for x in range(W):
                ctr = img[y, x]
                bits = 0
                bit = 0
                for dy in range(-r, r + 1):
                    yy = y + dy
                    if yy < 0:
                        yy = 0
                    if yy > H - 1:
                        yy = H - 1
                    for dx in range(-r, r + 1):
                        if dy == 0 and dx == 0:
                            continue
                        xx = x + dx
                        if xx < 0:
                            xx = 0
                        if xx > W - 1:
                            xx = W - 1
                        if img[yy, xx] > ctr:
                            bits |= (<unsigned long long> 1) << bit
                        bit += 1
                desc[y, x] = bits
    return desc_arr


def hamming_volume(unsigned long long[:, ::1] ca, unsigned long long[:, ::1] cb,
                   int num_disp, double max_cost, int direction):
    cdef Py_ssize_t H = ca.shape[0], W = ca.shape[1]
    vol_arr = np.empty((H, W, num_disp), dtype=np.float32)
    cdef float[:, :, ::1] vol = vol_arr
    cdef Py_ssize_t y, x, d, xx
    cdef float mc = <float> max_cost
    with nogil:
        for y in range(H):
            for x in range(W):
                for d in range(num_disp):
                    xx = x - d if direction > 0 else x + d
                    if 0 <= xx < W:
                        vol[y, x, d] = <float> popcount64(ca[y, x] ^ cb[y, xx])
                    else:
                        vol[y, x, d] = mc
    return vol_arr


def sad_volume(floating[:, ::1] a, floating[:, ::1] b, int num_disp,
               int window, int direction):
    cdef Py_ssize_t H = a.shape[0], W = a.shape[1]
    cdef int r = window // 2
    cdef double area = <double> (window * window)
    vol_arr = np.empty((H, W, num_disp), dtype=np.float32)
    cdef float[:, :, ::1] vol = vol_arr
    ii_arr = np.zeros((H + 1, W + 1), dtype=np.float64)
    cdef double[:, ::1] ii = ii_arr
    cdef Py_ssize_t y, x, d, xx, y0, y1, x0, x1
    cdef double v, s, cnt
    with nogil:
        for d in range(num_disp):
            for y in range(H):
                for x in range(W):
                    xx = x - d if direction > 0 else x + d
                    if 0 <= xx < W:
                        v = fabs(<double> a[y, x] - <double> b[y, xx])
                    else:
                        v = 1.0
                    ii[y + 1, x + 1] = v + ii[y, x + 1] + ii[y + 1, x] - ii[y, x]
            for y in range(H):
                y0 = y - r
                if y0 < 0:
                    y0 = 0
                y1 = y + r + 1
                if y1 > H:
                    y1 = H
                for x in range(W):
                    x0 = x - r
                    if x0 < 0:
                        x0 = 0
                    x1 = x + r + 1
                    if x1 > W:
                        x1 = W
                    s = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
                    cnt = <double> ((y1 - y0) * (x1 - x0))
                    vol[y, x, d] = <float> (s / cnt * area)
    return vol_arr


# ---------------------------------------------------------------------------
# scanline aggregation


def sgm_scan_x(floating[:, :, ::1] cost, double p1, double p2):
    cdef Py_ssize_t H = cost.shape[0], W = cost.shape[1], D = cost.shape[2]
    out_arr = np.empty((H, W, D), dtype=_dtype_of(cost[0, 0, 0]))
    cdef floating[:, :, ::1] out = out_arr
    cdef floating fp1 = <floating> p1, fp2 = <floating> p2
    cdef Py_ssize_t y, x, d
    cdef floating m, t, c
    with nogil:
        for y in range(H):
            for d in range(D):
                out[y, 0, d] = cost[y, 0, d]
            for x in range(1, W):
                m = out[y, x - 1, 0]
                for d in range(1, D):
                    if out[y, x - 1, d] < m:
                        m = out[y, x - 1, d]
                for d in range(D):
                    t = out[y, x - 1, d]
                    if d > 0:
                        c = out[y, x - 1, d - 1] + fp1
                        if c < t:
                            t = c
                    if d < D - 1:
                        c = out[y, x - 1, d + 1] + fp1
                        if c < t:
                            t = c
                    c = m + fp2
                    if c < t:
                        t = c
                    out[y, x, d] = cost[y, x, d] + t - m
    return out_arr


def sgm_scan_diag(floating[:, :, ::1] cost, double p1, double p2):
    cdef Py_ssize_t H = cost.shape[0], W = cost.shape[1], D = cost.shape[2]
    out_arr = np.empty((H, W, D), dtype=_dtype_of(cost[0, 0, 0]))
    cdef floating[:, :, ::1] out = out_arr
    cdef floating fp1 = <floating> p1, fp2 = <floating> p2
    cdef Py_ssize_t y, x, d
    cdef floating m, t, c
    with nogil:
        for y in range(H):
            for d in range(D):
                out[y, 0, d] = cost[y, 0, d]
        for x in range(1, W):
            for d in range(D):
                out[0, x, d] = cost[0, x, d]
            for y in range(1, H):
                m = out[y - 1, x - 1, 0]
                for d in range(1, D):
                    if out[y - 1, x - 1, d] < m:
                        m = out[y - 1, x - 1, d]
                for d in range(D):
                    t = out[y - 1, x - 1, d]
                    if d > 0:
                        c = out[y - 1, x - 1, d - 1] + fp1
                        if c < t:
                            t = c
                    if d < D - 1:
                        c = out[y - 1, x - 1, d + 1] + fp1
                        if c < t:
                            t = c
                    c = m + fp2
                    if c < t:
                        t = c
                    out[y, x, d] = cost[y, x, d] + t - m
    return out_arr
