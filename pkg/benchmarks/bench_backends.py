"""Timing comparison of the numpy kernels against the compiled ones.

Run as a script; prints a per-kernel table plus a whole-network
forward/backward comparison.  Exits gracefully when the compiled extension
is unavailable.
"""

import time

import numpy as np

from stereoadapt.kernels import numpy_kernels

try:
    from stereoadapt.kernels import _native as native_kernels
except ImportError:
    native_kernels = None

BACKENDS = ["numpy"] if native_kernels is None else ["numpy", "native", "auto"]


def timeit(fn, *args, repeat=20, **kwargs):
    fn(*args, **kwargs)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench_kernels():
    rng = np.random.default_rng(0)
    h, w = 96, 192
    img = rng.random((h, w), dtype=np.float32)
    img2 = rng.random((h, w), dtype=np.float32)
    feat = rng.random((16, h // 4, w // 4), dtype=np.float32)
    feat2 = rng.random((16, h // 4, w // 4), dtype=np.float32)
    # conv kernels take pre-padded input (padding lives in the tensor layer)
    x = np.pad(rng.random((16, h // 2, w // 2), dtype=np.float32),
               ((0, 0), (1, 1), (1, 1)))
    wgt = rng.random((32, 16, 3, 3), dtype=np.float32)
    bias = rng.random(32, dtype=np.float32)
    gy = rng.random((32, h // 2, w // 2), dtype=np.float32)
    disp = (rng.random((h, w), dtype=np.float32) * 8).astype(np.float32)
    gw = rng.random((1, h, w), dtype=np.float32)
    ca = numpy_kernels.census_transform(img, 5)
    cb = numpy_kernels.census_transform(img2, 5)
    vol = numpy_kernels.hamming_volume(ca, cb, 16, 24.0, 1)

    cases = [
        ("conv2d_forward", lambda k: k.conv2d_forward(x, wgt, bias, 1, 1)),
        ("conv2d_backward", lambda k: k.conv2d_backward(
            x, wgt, gy, 1, 1, True, True, True)),
        ("correlation_forward", lambda k: k.correlation_forward(feat, feat2, 2)),
        ("correlation_backward", lambda k: k.correlation_backward(
            feat, feat2, rng.random((5, h // 4, w // 4), dtype=np.float32), 2)),
        ("warp_forward", lambda k: k.warp_forward(img[None], disp)),
        ("warp_backward", lambda k: k.warp_backward(img[None], disp, gw)),
        ("census_transform", lambda k: k.census_transform(img, 5)),
        ("hamming_volume", lambda k: k.hamming_volume(ca, cb, 16, 24.0, 1)),
        ("sad_volume", lambda k: k.sad_volume(img, img2, 16, 9, 1)),
        ("sgm_scan_x", lambda k: k.sgm_scan_x(vol, 7.0, 84.0)),
        ("sgm_scan_diag", lambda k: k.sgm_scan_diag(vol, 7.0, 84.0)),
    ]

    print("kernel timings at %dx%d (best of 20, ms)" % (h, w))
    print("%-22s %10s %10s %8s" % ("kernel", "numpy", "native", "ratio"))
    for name, call in cases:
        t_np = timeit(call, numpy_kernels)
        if native_kernels is None:
            print("%-22s %10.3f %10s" % (name, t_np, "n/a"))
            continue
        t_nat = timeit(call, native_kernels)
        print("%-22s %10.3f %10.3f %7.1fx"
              % (name, t_np, t_nat, t_np / t_nat))


def bench_net():
    import os

    from stereoadapt import losses
    from stereoadapt import tensor as T
    from stereoadapt.net import NetConfig, StereoNet
    from stereoadapt.tensor import Tensor

    rng = np.random.default_rng(0)
    left = rng.random((1, 64, 128), dtype=np.float32)
    right = rng.random((1, 64, 128), dtype=np.float32)

    def one_pass(backend):
        os.environ["STEREOADAPT_BACKEND"] = backend
        import importlib

        import stereoadapt.kernels as K
        importlib.reload(K)
        net = StereoNet(NetConfig(in_channels=1, width_scale=0.25, levels=4),
                        seed=0)
        lt, rt = Tensor(left), Tensor(right)

        def run():
            pyr = net.forward(left, right)
            lv = losses.photometric_loss(lt, rt, pyr.full)
            T.backward(lv.node, [t for _, t in net.params.items()])

        return timeit(run, repeat=5)

    saved = os.environ.get("STEREOADAPT_BACKEND")
    try:
        print("\nnetwork forward+backward at 64x128 (best of 5, ms)")
        for backend in BACKENDS:
            print("%-8s %10.1f" % (backend, one_pass(backend)))
    finally:
        import importlib

        import stereoadapt.kernels as K
        if saved is None:
            os.environ.pop("STEREOADAPT_BACKEND", None)
        else:
            os.environ["STEREOADAPT_BACKEND"] = saved
        importlib.reload(K)


if __name__ == "__main__":
    bench_kernels()
    bench_net()
