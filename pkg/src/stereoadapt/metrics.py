"""Disparity evaluation metrics.

All metrics are computed against the frame that produced the prediction,
before any weight update, so a run log reflects what the network knew when
the frame arrived.
"""

from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import ShapeError
from .tensor import Tensor

# an estimate is an outlier when it is off by more than both of these
ABS_THRESHOLD = 3.0
REL_THRESHOLD = 0.05


@dataclass
class MetricsRecord:
    d1_all: float
    epe: float
    valid_px: int
    defined: bool


def compute_metrics(pred, gt, valid):
    """D1-all (percent of bad pixels) and end-point error over valid pixels.

    A pixel counts as bad when its absolute error exceeds 3 px and its
    relative error exceeds 5 percent of the true disparity.  With no valid
    pixels the record is flagged undefined instead of inventing numbers.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape or gt.shape != valid.shape:
        raise ShapeError("metrics operands must share extents, got %s %s %s"
                         % (pred.shape, gt.shape, valid.shape))
    n = int(valid.sum())
    if n == 0:
        return MetricsRecord(d1_all=float("nan"), epe=float("nan"),
                             valid_px=0, defined=False)
    err = np.abs(pred[valid] - gt[valid])
    bad = (err > ABS_THRESHOLD) & (err > REL_THRESHOLD * gt[valid])
    return MetricsRecord(
        d1_all=float(bad.mean() * 100.0),
        epe=float(err.mean()),
        valid_px=n,
        defined=True,
    )


def photometric_error(left, right, disp, cfg=None):
    """Reprojection error of a disparity map on a raw stereo pair.

    Shares the loss implementation exactly, so the logged metric and the
    self-supervised objective can never drift apart.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    disp = np.asarray(disp, dtype=np.float64)
    if disp.ndim == 2:
        disp = disp[None]
    return losses.photometric_loss(
        Tensor(left), Tensor(right), Tensor(disp), cfg).value
