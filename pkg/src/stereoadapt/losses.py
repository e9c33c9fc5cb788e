"""Self-supervised, proxy-supervised and pretraining losses.

All losses return a LossValue whose ``node`` is a live scalar tensor ready
for the reverse pass; functions can also be called on constant tensors just
to read the value (the photometric error metric does exactly that).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

# per-scale weights of the pretraining loss, index 0 = finest decoded map
PYRAMID_WEIGHTS = (0.005, 0.01, 0.02, 0.08, 0.32)


@dataclass
class PhotometricConfig:
    alpha: float = 0.85
    window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2


@dataclass
class LossValue:
    """Scalar loss with its tape node.

    skip means the loss is undefined for this frame (no supervised pixels)
    and no update should be taken from it; node is None in that case.
    """

    value: float
    node: Optional[Tensor]
    valid_px: Optional[int] = None
    skip: bool = False


def ssim(a, b, cfg=None):
    """Per-pixel structural similarity over a small box window.

    Local statistics use count-normalized box means, so border windows are
    unbiased.  Returns a tensor shaped like the inputs with values in
    [-1, 1] up to rounding.
    """
    cfg = cfg or PhotometricConfig()
    if a.shape != b.shape:
        raise ShapeError("ssim operands must share shapes, got %s and %s"
                         % (a.shape, b.shape))
    win = cfg.window
    mu_a = T.box_mean(a, win)
    mu_b = T.box_mean(b, win)
    mu_aa = T.mul(mu_a, mu_a)
    mu_bb = T.mul(mu_b, mu_b)
    mu_ab = T.mul(mu_a, mu_b)
    var_a = T.sub(T.box_mean(T.mul(a, a), win), mu_aa)
    var_b = T.sub(T.box_mean(T.mul(b, b), win), mu_bb)
    cov = T.sub(T.box_mean(T.mul(a, b), win), mu_ab)
    num = T.mul(T.add_const(T.mul_const(mu_ab, 2.0), cfg.c1),
                T.add_const(T.mul_const(cov, 2.0), cfg.c2))
    den = T.mul(T.add_const(T.add(mu_aa, mu_bb), cfg.c1),
                T.add_const(T.add(var_a, var_b), cfg.c2))
    return T.div(num, den)


def photometric_loss(left, right, disp, cfg=None):
    """Reprojection error of the left image against the warped right one.

    disp is the (1, H, W) disparity predicted for the left view.  The error
    mixes (1 - SSIM)/2 and absolute difference with weight alpha, averaged
    over channels then pixels.
    """
    cfg = cfg or PhotometricConfig()
    if disp.ndim != 3 or disp.shape[0] != 1:
        raise ShapeError("disparity must be (1, H, W), got %s" % (disp.shape,))
    if left.shape != right.shape or left.shape[1:] != disp.shape[1:]:
        raise ShapeError("photometric loss needs matching extents, got "
                         "left %s right %s disp %s"
                         % (left.shape, right.shape, disp.shape))
    rewarped = T.warp(right, T.reshape(disp, disp.shape[1:]))
    structural = T.add_const(
        T.mul_const(ssim(left, rewarped, cfg), -cfg.alpha / 2.0),
        cfg.alpha / 2.0)
    absolute = T.mul_const(T.abs_(T.sub(left, rewarped)), 1.0 - cfg.alpha)
    per_px = T.channel_mean(T.add(structural, absolute))
    node = T.mean(per_px)
    return LossValue(value=node.item(), node=node,
                     valid_px=int(per_px.size))


def confidence_mask(conf, eps):
    """Binary keep-mask from a confidence map: keep where conf >= eps."""
    conf = np.asarray(conf)
    if not 0.0 < eps <= 1.0:
        raise ShapeError("confidence threshold must be in (0, 1], got %r" % eps)
    mask = conf >= eps
    return mask, float(mask.mean()) if mask.size else 0.0


def proxy_loss(disp, labels, mask):
    """Masked L1 against distilled labels.

    disp (1, H, W) tensor, labels (H, W) array, mask (H, W) bool.  With an
    empty mask the loss is undefined and comes back with skip=True.
    """
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if disp.ndim != 3 or disp.shape[0] != 1:
        raise ShapeError("disparity must be (1, H, W), got %s" % (disp.shape,))
    if labels.shape != disp.shape[1:] or mask.shape != labels.shape:
        raise ShapeError("labels/mask extents %s / %s do not match disparity %s"
                         % (labels.shape, mask.shape, disp.shape))
    n = int(mask.sum())
    if n == 0:
        return LossValue(value=float("nan"), node=None, valid_px=0, skip=True)
    z = np.where(mask, labels, 0.0)[None].astype(str(disp.dtype))
    diff = T.abs_(T.sub(disp, Tensor(z)))
    node = T.mul_const(T.sum_(T.mul_const(diff, mask[None].astype(str(disp.dtype)))),
                       1.0 / n)
    return LossValue(value=node.item(), node=node, valid_px=n)


def multiscale_supervised_loss(pyramid, gt, valid, weights=PYRAMID_WEIGHTS):
    """Pretraining loss: weighted valid-masked L1 at every pyramid scale.

    Ground truth is pooled to each scale by averaging the valid pixels of
    every f x f cell and dividing by f to stay in that scale's disparity
    units; cells with no valid pixel drop out of that scale's mean.
    """
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if gt.shape != valid.shape:
        raise ShapeError("gt and valid extents differ: %s vs %s"
                         % (gt.shape, valid.shape))
    modules = sorted(pyramid.maps)
    if len(weights) < len(modules):
        raise ShapeError("need %d scale weights, got %d"
                         % (len(modules), len(weights)))
    # align to the coarse end so shallower pyramids keep the coarse-heavy
    # curriculum instead of inheriting only the tiny fine-scale weights
    offset = len(weights) - len(modules)
    node = None
    total_px = 0
    for m in modules:
        y = pyramid.maps[m]
        f = pyramid.factors[m]
        h, w = y.shape[1:]
        if gt.shape != (h * f, w * f):
            raise ShapeError("gt extent %s does not match pyramid scale %d"
                             % (gt.shape, f))
        vgrid = valid.reshape(h, f, w, f)
        cnt = vgrid.sum(axis=(1, 3))
        sums = (gt * valid).reshape(h, f, w, f).sum(axis=(1, 3))
        vmask = cnt > 0
        n = int(vmask.sum())
        if n == 0:
            continue
        z = np.zeros((h, w))
        z[vmask] = sums[vmask] / cnt[vmask] / f
        dt = str(y.dtype)
        diff = T.abs_(T.sub(y, Tensor(z[None].astype(dt))))
        masked = T.mul_const(diff, vmask[None].astype(dt))
        term = T.mul_const(T.sum_(masked), weights[offset + m - 1] / n)
        node = term if node is None else T.add(node, term)
        total_px += n
    if node is None:
        return LossValue(value=float("nan"), node=None, valid_px=0, skip=True)
    return LossValue(value=node.item(), node=node, valid_px=total_px)
