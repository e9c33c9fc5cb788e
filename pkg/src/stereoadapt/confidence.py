"""Confidence estimation and proxy-label distillation.

A matcher result carries everything the measures need: the aggregated cost
volume on the left reference, the winner cost curve summaries on both
references, and both disparity maps.  All measures land in [0, 1] with
higher meaning more trustworthy, so they can be thresholded and combined
uniformly.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import classic, metrics
from .errors import ConfigError, ShapeError

_EPS = 1e-6

MEASURE_NAMES = ("msm", "pkrn", "wmn", "mlm", "lrd", "lrc")
COMBINE_RULES = ("min", "product", "mean")
FILTER_MODES = ("lr", "wild", "none")


# The lr check is binary, so anything in (0, 1] keeps exactly the pixels
# that passed.  The min rule over the six measures is dominated by the
# smallest-scale ones (wmn in particular), so the wild default sits much
# lower; 0.05 keeps roughly a quarter of the pixels on textured scenes.
MODE_DEFAULT_EPSILON = {"lr": 0.95, "wild": 0.05, "none": 0.95}


@dataclass
class FilterConfig:
    mode: str = "lr"  # "lr", "wild" or "none"
    epsilon: Optional[float] = None  # default depends on mode
    tau: float = 1.0
    combine: str = "min"

    def __post_init__(self):
        if self.mode not in FILTER_MODES:
            raise ConfigError("filter mode must be lr, wild or none, got %r"
                              % (self.mode,))
        if self.epsilon is None:
            self.epsilon = MODE_DEFAULT_EPSILON[self.mode]
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in (0, 1], got %r"
                              % (self.epsilon,))
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.combine not in COMBINE_RULES:
            raise ConfigError("combine must be one of %s" % (COMBINE_RULES,))


@dataclass
class ProxyLabels:
    """Sparse disparity supervision for one frame."""

    disp: np.ndarray  # (H, W) float32, meaningful where mask is set
    mask: np.ndarray  # (H, W) bool
    confidence: np.ndarray  # (H, W) float32 in [0, 1]

    @property
    def count(self):
        return int(self.mask.sum())

    @property
    def density(self):
        return float(self.mask.mean()) if self.mask.size else 0.0

    @property
    def empty(self):
        return self.count == 0


def left_right_check(disp_left, disp_right, tau=1.0):
    """Binary consistency: does the right view agree within tau pixels?

    Each left pixel looks up the right-referenced disparity at x - round(d);
    lookups that land outside the image count as inconsistent.
    """
    dl = np.asarray(disp_left, dtype=np.float32)
    dr = np.asarray(disp_right, dtype=np.float32)
    if dl.shape != dr.shape:
        raise ShapeError("disparity extents differ: %s vs %s"
                         % (dl.shape, dr.shape))
    h, w = dl.shape
    xr = np.arange(w)[None, :] - np.rint(dl).astype(np.int64)
    ok = (xr >= 0) & (xr < w)
    conf = np.zeros((h, w), dtype=np.float32)
    rows = np.arange(h)[:, None]
    looked = dr[rows, np.clip(xr, 0, w - 1)]
    conf[ok & (np.abs(dl - looked) <= tau)] = 1.0
    return conf


def compute_measures(match):
    """The six per-pixel confidence measures of a matcher result.

    msm  - how close the winning cost is to the volume's ceiling
    pkrn - margin of the runner-up cost, relative
    wmn  - margin of the best competing local minimum, ceiling-normalized
    mlm  - softmin probability mass of the winner over the cost curve
    lrd  - runner-up margin scaled by cross-view cost agreement, squashed
    lrc  - soft left-right disparity consistency
    """
    cmax = float(match.volume.max_cost)
    if cmax <= 0:
        raise ConfigError("cost volume ceiling must be positive")
    c1 = match.summary.c1.astype(np.float64)
    c2 = match.summary.c2.astype(np.float64)
    c2m = match.summary.c2m.astype(np.float64)
    h, w = c1.shape

    out = {}
    out["msm"] = 1.0 - c1 / cmax
    out["pkrn"] = (c2 - c1) / np.maximum(c2, _EPS)
    out["wmn"] = (c2m - c1) / cmax

    sigma = cmax / 8.0
    rel = (match.volume.costs.astype(np.float64) - c1[..., None]) / sigma
    out["mlm"] = 1.0 / np.exp(-rel).sum(axis=2)

    dl = match.disp
    rows = np.arange(h)[:, None]
    xr = np.arange(w)[None, :] - np.rint(dl).astype(np.int64)
    ok = (xr >= 0) & (xr < w)
    xr_c = np.clip(xr, 0, w - 1)

    c1r = match.summary_right.c1.astype(np.float64)[rows, xr_c]
    raw = (c2 - c1) / np.maximum(np.abs(c1 - c1r), _EPS)
    lrd = raw / (1.0 + raw)
    lrd[~ok] = 0.0
    out["lrd"] = lrd

    dr_at = match.disp_right.astype(np.float64)[rows, xr_c]
    lrc = 1.0 / (1.0 + np.abs(dl - dr_at))
    lrc[~ok] = 0.0
    out["lrc"] = lrc

    return {k: np.clip(v, 0.0, 1.0).astype(np.float32) for k, v in out.items()}


def combine_measures(measures, rule="min"):
    """Fuse measure maps into one confidence map."""
    if rule not in COMBINE_RULES:
        raise ConfigError("combine must be one of %s" % (COMBINE_RULES,))
    stack = np.stack([measures[k] for k in sorted(measures)], axis=0)
    if rule == "min":
        return stack.min(axis=0)
    if rule == "product":
        return stack.prod(axis=0)
    return stack.mean(axis=0)


def distill(left, right, matcher="sgm", filter_cfg=None, sgm_cfg=None,
            bm_cfg=None, gt=None, valid=None):
    """Run a classical matcher and filter its output into proxy labels.

    matcher "sgm" pairs with the left-right consistency filter, "bm" with
    the combined confidence measures ("wild" filtering); filter_cfg can
    override that pairing.  Returns (labels, report); when ground truth is
    supplied the report compares error rates before and after filtering.
    """
    if matcher == "sgm":
        match = classic.sgm(left, right, sgm_cfg or classic.SgmConfig())
        default_mode = "lr"
    elif matcher == "bm":
        match = classic.block_matching(left, right, bm_cfg or classic.BmConfig())
        default_mode = "wild"
    else:
        raise ConfigError("matcher must be 'sgm' or 'bm', got %r" % (matcher,))
    fcfg = filter_cfg or FilterConfig(mode=default_mode)

    if fcfg.mode == "none":
        conf = np.ones_like(match.disp, dtype=np.float32)
    elif fcfg.mode == "lr":
        conf = left_right_check(match.disp, match.disp_right, fcfg.tau)
    else:
        conf = combine_measures(compute_measures(match), fcfg.combine)

    mask = conf >= fcfg.epsilon
    labels = ProxyLabels(disp=match.disp.astype(np.float32), mask=mask,
                         confidence=conf)
    report = {
        "matcher": matcher,
        "filter": fcfg.mode,
        "epsilon": fcfg.epsilon,
        "density_pct": labels.density * 100.0,
        "count": labels.count,
    }
    if gt is not None:
        if valid is None:
            valid = np.isfinite(gt) & (np.asarray(gt) > 0)
        raw = metrics.compute_metrics(match.disp, gt, valid)
        filt = metrics.compute_metrics(match.disp, gt, valid & mask)
        report["raw_d1_all"] = raw.d1_all
        report["raw_epe"] = raw.epe
        report["filtered_d1_all"] = filt.d1_all
        report["filtered_epe"] = filt.epe
        report["filtered_px"] = filt.valid_px
    return labels, report
