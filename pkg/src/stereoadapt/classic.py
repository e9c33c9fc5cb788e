"""Classical stereo matchers used to distill proxy labels.

Two matchers share one pipeline shape: build a cost volume, optionally
aggregate it along scanlines, pick the winner per pixel, refine to subpixel.
Both produce left- and right-referenced results so downstream filtering can
run consistency checks without a second matching pass from scratch.

Images are single-channel float in [0, 1]; multi-channel input is averaged.
Cost volumes are (H, W, D) float32 with the disparity hypothesis last and
D = max_disparity + 1.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import kernels as K
from .errors import ConfigError, ShapeError

SCAN_DIRECTIONS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
SCAN_DIRECTIONS_8 = SCAN_DIRECTIONS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass
class SgmConfig:
    max_disparity: int = 64
    p1: float = 7.0
    p2: float = 84.0
    paths: int = 4
    census_window: int = 5
    subpixel: bool = True

    def __post_init__(self):
        if self.max_disparity < 0:
            raise ConfigError("max_disparity must be >= 0")
        if not 0 <= self.p1 <= self.p2:
            raise ConfigError("penalties must satisfy 0 <= p1 <= p2, got "
                              "p1=%g p2=%g" % (self.p1, self.p2))
        if self.paths not in (4, 8):
            raise ConfigError("paths must be 4 or 8, got %r" % (self.paths,))
        if self.census_window % 2 != 1 or not 3 <= self.census_window <= 7:
            raise ConfigError("census window must be odd in [3, 7], got %r"
                              % (self.census_window,))

    @property
    def directions(self):
        return SCAN_DIRECTIONS_4 if self.paths == 4 else SCAN_DIRECTIONS_8


@dataclass
class BmConfig:
    max_disparity: int = 64
    window: int = 9
    subpixel: bool = True

    def __post_init__(self):
        if self.max_disparity < 0:
            raise ConfigError("max_disparity must be >= 0")
        if self.window % 2 != 1 or self.window < 1:
            raise ConfigError("matching window must be odd and positive")


@dataclass
class CostVolume:
    costs: np.ndarray  # (H, W, D) float32
    max_cost: float
    reference: str  # "left" or "right"

    @property
    def num_disp(self):
        return self.costs.shape[2]


@dataclass
class WtaSummary:
    """Per-pixel cost-curve summary captured at winner selection time.

    c1 is the winning cost, c2 the second smallest overall, c2m the smallest
    cost among local minima other than the winner (falling back to c2 when
    the curve has no second local minimum).
    """

    c1: np.ndarray
    c2: np.ndarray
    c2m: np.ndarray


@dataclass
class MatchResult:
    disp: np.ndarray  # (H, W) float32, left reference
    disp_right: np.ndarray  # (H, W) float32, right reference
    volume: CostVolume  # left-referenced volume the winner came from
    summary: WtaSummary  # left
    summary_right: WtaSummary

    @property
    def max_disparity(self):
        return self.volume.num_disp - 1


def to_gray(img):
    """Average channels of (C, H, W) or pass (H, W) through, as float32."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ShapeError("expected (H, W) or (C, H, W) image, got %s"
                         % (img.shape,))
    return np.ascontiguousarray(img, dtype=np.float32)


def census_transform(img, window=5):
    """64-bit census descriptor per pixel; see kernels.census_transform."""
    if window % 2 != 1 or not 3 <= window <= 7:
        raise ConfigError("census window must be odd in [3, 7], got %r"
                          % (window,))
    return K.census_transform(to_gray(img), window)


def build_cost_volume(left, right, max_disparity, metric="census",
                      reference="left", census_window=5, sad_window=9):
    """Matching-cost volume between two rectified images.

    metric "census" uses Hamming distance between census descriptors,
    "sad" a window sum of absolute differences.  reference "left" compares
    against right pixels at x - d, "right" against left pixels at x + d.
    """
    if reference not in ("left", "right"):
        raise ConfigError("reference must be 'left' or 'right'")
    if max_disparity < 0:
        raise ConfigError("max_disparity must be >= 0")
    a = to_gray(left)
    b = to_gray(right)
    if a.shape != b.shape:
        raise ShapeError("image extents differ: %s vs %s" % (a.shape, b.shape))
    if reference == "right":
        a, b = b, a
    direction = 1 if reference == "left" else -1
    d = max_disparity + 1
    if metric == "census":
        ca = K.census_transform(a, census_window)
        cb = K.census_transform(b, census_window)
        max_cost = float(census_window * census_window - 1)
        costs = K.hamming_volume(ca, cb, d, max_cost, direction)
    elif metric == "sad":
        max_cost = float(sad_window * sad_window)
        costs = K.sad_volume(a, b, d, sad_window, direction)
    else:
        raise ConfigError("unknown cost metric %r" % (metric,))
    return CostVolume(costs=costs, max_cost=max_cost, reference=reference)


def wta(volume):
    """Winner-take-all disparity plus the cost-curve summary.

    Ties break toward the smaller disparity.
    """
    costs = volume.costs
    h, w, d = costs.shape
    disp = costs.argmin(axis=2).astype(np.int32)
    c1 = np.take_along_axis(costs, disp[..., None].astype(np.intp), 2)[..., 0]
    if d == 1:
        return disp, WtaSummary(c1=c1, c2=c1.copy(), c2m=c1.copy())
    c2 = np.partition(costs, 1, axis=2)[:, :, 1]

    inf = np.float32(np.inf)
    prev = np.concatenate([np.full((h, w, 1), inf, costs.dtype),
                           costs[:, :, :-1]], axis=2)
    nxt = np.concatenate([costs[:, :, 1:],
                          np.full((h, w, 1), inf, costs.dtype)], axis=2)
    local_min = (costs <= prev) & (costs <= nxt)
    local_min[np.arange(h)[:, None], np.arange(w)[None, :], disp] = False
    masked = np.where(local_min, costs, inf)
    c2m = masked.min(axis=2)
    none = ~np.isfinite(c2m)
    c2m[none] = c2[none]
    return disp, WtaSummary(c1=c1, c2=c2, c2m=c2m)


def subpixel_refine(volume, disp):
    """Parabola fit through the winner and its neighbours.

    Border winners and degenerate (non-convex) fits stay integer; offsets
    clamp to [-0.5, 0.5].
    """
    costs = volume.costs
    h, w, d = costs.shape
    out = disp.astype(np.float32)
    if d < 3:
        return out
    interior = (disp > 0) & (disp < d - 1)
    iy, ix = np.nonzero(interior)
    dd = disp[iy, ix]
    c0 = costs[iy, ix, dd - 1].astype(np.float64)
    c1 = costs[iy, ix, dd].astype(np.float64)
    c2 = costs[iy, ix, dd + 1].astype(np.float64)
    denom = c0 - 2.0 * c1 + c2
    ok = denom > 0
    off = np.zeros_like(denom)
    off[ok] = np.clip((c0[ok] - c2[ok]) / (2.0 * denom[ok]), -0.5, 0.5)
    out[iy, ix] += off.astype(np.float32)
    return out


def sgm_aggregate(volume, cfg):
    """Sum of scanline-aggregated costs over the configured directions.

    Every direction reduces to a single forward scan by transposing and/or
    flipping the volume first and undoing the transforms on the result.
    The per-direction bound L(p, d) <= C(p, d) + p2 is checked per pixel.
    """
    costs = volume.costs
    total = np.zeros_like(costs, dtype=np.float32)
    for dy, dx in cfg.directions:
        v = costs
        transposed = dx == 0
        if transposed:
            v = v.swapaxes(0, 1)
            dy, dx = dx, dy
        flip_x = dx < 0
        if flip_x:
            v = v[:, ::-1]
        flip_y = dy < 0
        if flip_y:
            v = v[::-1]
        v = np.ascontiguousarray(v)
        if dy == 0:
            path = K.sgm_scan_x(v, cfg.p1, cfg.p2)
        else:
            path = K.sgm_scan_diag(v, cfg.p1, cfg.p2)
        if not (path <= v + np.float32(cfg.p2 + 1e-3)).all():
            raise AssertionError("scanline cost exceeded raw cost + p2")
        if flip_y:
            path = path[::-1]
        if flip_x:
            path = path[:, ::-1]
        if transposed:
            path = path.swapaxes(0, 1)
        total += path
    n = len(cfg.directions)
    return CostVolume(costs=total,
                      max_cost=n * (volume.max_cost + cfg.p2),
                      reference=volume.reference)


def block_matching(left, right, cfg=None):
    """SAD block matching on both references, with subpixel refinement."""
    cfg = cfg or BmConfig()
    vol_l = build_cost_volume(left, right, cfg.max_disparity, metric="sad",
                              reference="left", sad_window=cfg.window)
    vol_r = build_cost_volume(left, right, cfg.max_disparity, metric="sad",
                              reference="right", sad_window=cfg.window)
    d_l, sum_l = wta(vol_l)
    d_r, sum_r = wta(vol_r)
    disp = subpixel_refine(vol_l, d_l) if cfg.subpixel else d_l.astype(np.float32)
    disp_r = subpixel_refine(vol_r, d_r) if cfg.subpixel else d_r.astype(np.float32)
    return MatchResult(disp=disp, disp_right=disp_r, volume=vol_l,
                       summary=sum_l, summary_right=sum_r)


def sgm(left, right, cfg=None):
    """Census-cost scanline-aggregated matching on both references."""
    cfg = cfg or SgmConfig()
    out = []
    vols = []
    for ref in ("left", "right"):
        vol = build_cost_volume(left, right, cfg.max_disparity, metric="census",
                                reference=ref, census_window=cfg.census_window)
        agg = sgm_aggregate(vol, cfg)
        d_int, summary = wta(agg)
        disp = subpixel_refine(agg, d_int) if cfg.subpixel else \
            d_int.astype(np.float32)
        out.append((disp, summary))
        vols.append(agg)
    (disp_l, sum_l), (disp_r, sum_r) = out
    return MatchResult(disp=disp_l, disp_right=disp_r, volume=vols[0],
                       summary=sum_l, summary_right=sum_r)
