"""Online adaptation engine.

Every incoming frame is predicted first and scored against whatever ground
truth it carries (metrics are always pre-update, so the log reflects what
the network knew when the frame arrived).  Depending on the mode the engine
then takes one momentum step on the whole network ("full" flavours) or on a
single module drawn from a softmax over a reward histogram ("mad"
flavours).  The "++" flavours replace the self-supervised photometric loss
with sparse labels distilled from a classical matcher.

The reward histogram tracks, per module, how much better the latest
finest-scale loss is than its linear extrapolation from the two previous
values; the module updated on the previous step gets the credit.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import confidence, losses, metrics
from . import tensor as T
from .classic import BmConfig, SgmConfig
from .errors import ConfigError, SequenceError
from .losses import PhotometricConfig
from .optim import MomentumSGD
from .tensor import Tensor

MODES = ("none", "full", "mad", "full++", "mad++")
PROXIES = ("none", "sgm", "bm")

# phi column encoding in run logs
PHI_NO_UPDATE = -1
PHI_FULL = 0


@dataclass
class EngineConfig:
    mode: str = "none"
    proxy: str = "none"
    every: int = 1  # update on every K-th frame
    lr: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.99  # histogram decay per update event
    gain: float = 0.01  # reward gain on the credited module
    epsilon: Optional[float] = None  # proxy filter threshold (mode default)
    tau: float = 1.0  # left-right check tolerance
    combine: str = "min"
    max_disparity: int = 64
    seed: int = 0
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode must be one of %s, got %r"
                              % (MODES, self.mode))
        if self.proxy not in PROXIES:
            raise ConfigError("proxy must be one of %s, got %r"
                              % (PROXIES, self.proxy))
        if self.mode.endswith("++") and self.proxy == "none":
            raise ConfigError("mode %s needs a proxy source" % self.mode)
        if self.every < 1:
            raise ConfigError("update interval must be >= 1")
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError("histogram decay must be in [0, 1]")

    @property
    def uses_proxy(self):
        return self.mode.endswith("++")

    @property
    def modular(self):
        return self.mode.startswith("mad")


@dataclass
class AdaptState:
    """Mutable between-frame state of the modular sampler."""

    histogram: np.ndarray  # (p,) float64 reward accumulator
    prev_loss: float = 0.0  # finest loss one update ago
    prev_loss2: float = 0.0  # finest loss two updates ago
    prev_phi: Optional[int] = None  # module updated on the previous event
    events: int = 0  # update events so far


@dataclass
class FrameRecord:
    frame: int
    d1_all: float
    epe: float
    photo_err: float
    loss: float
    phi: int
    ms: float


def softmax(h):
    h = np.asarray(h, dtype=np.float64)
    e = np.exp(h - h.max())
    return e / e.sum()


def sample_module(histogram, rng):
    """Draw a 1-based module index from softmax(histogram)."""
    probs = softmax(histogram)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1) + 1


def update_histogram(state, finest_loss, decay, gain):
    """One reward-bookkeeping step after a modular weight update.

    The expected loss is the linear extrapolation of the two previous
    finest losses; the (positive or negative) surprise is credited to the
    module updated on the previous event.  On the first event the history
    bootstraps to the current loss, making the first reward exactly zero.
    """
    if state.events == 0:
        state.prev_loss = finest_loss
        state.prev_loss2 = finest_loss
    expected = 2.0 * state.prev_loss - state.prev_loss2
    gamma = expected - finest_loss
    state.histogram *= decay
    if state.prev_phi is not None:
        state.histogram[state.prev_phi - 1] += gain * gamma
    state.prev_loss2 = state.prev_loss
    state.prev_loss = finest_loss
    state.events += 1
    return gamma


class AdaptEngine:
    """Binds a network, an optimizer and the adaptation policy."""

    def __init__(self, net, config=None, labels_for=None):
        self.net = net
        self.config = config or EngineConfig()
        self.optimizer = MomentumSGD(lr=self.config.lr,
                                     momentum=self.config.momentum)
        self.state = AdaptState(
            histogram=np.zeros(net.partition.count, dtype=np.float64))
        self.rng = np.random.default_rng(self.config.seed)
        self.update_counts = np.zeros(net.partition.count + 1, dtype=np.int64)
        self.labels_for: Optional[Callable] = labels_for
        self._frame_no = 0
        self._resolution = None
        self._filter_cfg = None
        if self.config.uses_proxy:
            mode = "lr" if self.config.proxy == "sgm" else "wild"
            self._filter_cfg = confidence.FilterConfig(
                mode=mode, epsilon=self.config.epsilon, tau=self.config.tau,
                combine=self.config.combine)
            self._sgm_cfg = SgmConfig(max_disparity=self.config.max_disparity)
            self._bm_cfg = BmConfig(max_disparity=self.config.max_disparity)

    # -- loss plumbing ----------------------------------------------------

    def _full_res_disp(self, pyramid, m):
        if m == 1:
            return pyramid.full
        return T.upsample_bilinear(pyramid.maps[m], pyramid.factors[m],
                                   scale_values=True)

    def _loss_for_module(self, pyramid, m, left_t, right_t, labels):
        disp = self._full_res_disp(pyramid, m)
        if self.config.uses_proxy:
            return losses.proxy_loss(disp, labels.disp, labels.mask)
        return losses.photometric_loss(left_t, right_t, disp,
                                       self.config.photometric)

    def _acquire_labels(self, frame):
        if self.labels_for is not None:
            return self.labels_for(frame)
        labels, _ = confidence.distill(
            frame.left, frame.right, matcher=self.config.proxy,
            filter_cfg=self._filter_cfg, sgm_cfg=self._sgm_cfg,
            bm_cfg=self._bm_cfg)
        return labels

    # -- stepping ---------------------------------------------------------

    def process_frame(self, frame):
        """Predict, score, and (maybe) adapt on one frame."""
        t0 = time.perf_counter()
        cfg = self.config
        if self._resolution is None:
            self._resolution = frame.resolution
        elif frame.resolution != self._resolution:
            raise SequenceError("frame %d resolution %s differs from %s"
                                % (frame.index, frame.resolution,
                                   self._resolution))

        pyramid = self.net.forward(frame.left, frame.right)
        pred = pyramid.full_map()

        if frame.gt is not None:
            valid = frame.valid if frame.valid is not None else frame.gt > 0
            rec = metrics.compute_metrics(pred, frame.gt, valid)
            d1, epe = rec.d1_all, rec.epe
        else:
            d1 = epe = float("nan")
        photo = metrics.photometric_error(frame.left, frame.right, pred,
                                          cfg.photometric)

        phi = PHI_NO_UPDATE
        loss_value = float("nan")
        do_update = (cfg.mode != "none"
                     and self._frame_no % cfg.every == 0)
        if do_update:
            phi, loss_value = self._adapt(pyramid, frame)
        self._frame_no += 1

        ms = (time.perf_counter() - t0) * 1e3
        return FrameRecord(frame=frame.index, d1_all=d1, epe=epe,
                           photo_err=photo, loss=loss_value, phi=phi, ms=ms)

    def _adapt(self, pyramid, frame):
        cfg = self.config
        labels = None
        if cfg.uses_proxy:
            labels = self._acquire_labels(frame)
            if labels is None or labels.empty:
                # nothing to learn from; leave weights and histogram alone
                return PHI_NO_UPDATE, float("nan")
        left_t = Tensor(np.asarray(frame.left, dtype=self.net.config.np_dtype))
        right_t = Tensor(np.asarray(frame.right, dtype=self.net.config.np_dtype))

        finest = self._loss_for_module(pyramid, 1, left_t, right_t, labels)
        if finest.skip:
            return PHI_NO_UPDATE, float("nan")

        if not cfg.modular:
            grads = T.backward(finest.node,
                               [t for _, t in self.net.params.items()])
            named = {t.name: g for t, g in grads.items()}
            self.optimizer.step(self.net.params, named)
            self.update_counts[0] += 1
            return PHI_FULL, finest.value

        phi = sample_module(self.state.histogram, self.rng)
        if phi == 1:
            chosen = finest
        else:
            chosen = self._loss_for_module(pyramid, phi, left_t, right_t,
                                           labels)
        if chosen.skip:
            return PHI_NO_UPDATE, float("nan")
        targets = [self.net.params[n] for n in self.net.partition.names(phi)]
        grads = T.backward(chosen.node, targets)
        named = {t.name: g for t, g in grads.items()}
        self.optimizer.step(self.net.params, named, decay_rest=True)
        update_histogram(self.state, finest.value, cfg.decay, cfg.gain)
        self.state.prev_phi = phi
        self.update_counts[phi] += 1
        return phi, finest.value

    # -- sequence driver --------------------------------------------------

    def run(self, frames, log=None):
        """Process an iterable of frames; returns (records, summary)."""
        records: List[FrameRecord] = []
        for frame in frames:
            rec = self.process_frame(frame)
            records.append(rec)
            if log is not None:
                log.write_record(rec)
        summary = self.summarize(records)
        if log is not None:
            log.write_summary(summary)
        return records, summary

    def summarize(self, records):
        cfg = self.config

        def clean_mean(values):
            arr = np.asarray([v for v in values], dtype=np.float64)
            finite = arr[np.isfinite(arr)]
            return float(finite.mean()) if finite.size else float("nan")

        summary = {
            "mode": cfg.mode,
            "proxy": cfg.proxy,
            "seed": cfg.seed,
            "every": cfg.every,
            "frames": len(records),
            "updates": int(self.update_counts.sum()),
            "full_updates": int(self.update_counts[0]),
            "module_updates": [int(v) for v in self.update_counts[1:]],
            "histogram": [float(v) for v in self.state.histogram],
            "mean_d1_all": clean_mean([r.d1_all for r in records]),
            "mean_epe": clean_mean([r.epe for r in records]),
            "mean_photo_err": clean_mean([r.photo_err for r in records]),
            "total_ms": float(sum(r.ms for r in records)),
            "median_ms": float(np.median([r.ms for r in records]))
            if records else float("nan"),
        }
        return summary


class RunLog:
    """CSV frame log plus JSON summary footer file.

    Numeric cells use repr(float), which round-trips exactly, so two runs
    that produce the same numbers produce byte-identical rows.
    """

    COLUMNS = ("frame", "d1_all", "epe", "photo_err", "loss", "phi", "ms")

    def __init__(self, path, config_echo=None, summary_path=None):
        self.path = path
        self.summary_path = summary_path or _sibling_json(path)
        self._f = open(path, "w", encoding="utf-8", newline="\n")
        for key, value in (config_echo or {}).items():
            self._f.write("# %s=%s\n" % (key, value))
        self._f.write(",".join(self.COLUMNS) + "\n")

    def write_record(self, rec):
        row = [str(rec.frame)]
        for v in (rec.d1_all, rec.epe, rec.photo_err, rec.loss):
            row.append(repr(float(v)))
        row.append(str(rec.phi))
        row.append(repr(float(rec.ms)))
        self._f.write(",".join(row) + "\n")

    def write_summary(self, summary):
        from .fileio import write_json

        self._f.flush()
        write_json(self.summary_path, summary)

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _sibling_json(path):
    base = path[:-4] if path.endswith(".csv") else path
    return base + ".summary.json"


def read_run_log(path):
    """Parse a run log CSV back into a list of FrameRecords."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header != list(RunLog.COLUMNS):
                    raise SequenceError("%s: unexpected run log columns %s"
                                        % (path, header))
                continue
            cells = line.split(",")
            records.append(FrameRecord(
                frame=int(cells[0]), d1_all=float(cells[1]),
                epe=float(cells[2]), photo_err=float(cells[3]),
                loss=float(cells[4]), phi=int(cells[5]), ms=float(cells[6])))
    if header is None:
        raise SequenceError("%s: empty run log" % path)
    return records


# ---------------------------------------------------------------------------
# pretraining


def pretrain(net, frames, lr=1e-4, momentum=0.9,
             weights=losses.PYRAMID_WEIGHTS, progress=None):
    """Supervised pretraining pass over an iterable of frames with gt.

    Updates all parameters with the multiscale loss; returns the per-frame
    loss values.
    """
    opt = MomentumSGD(lr=lr, momentum=momentum)
    history = []
    all_params = [t for _, t in net.params.items()]
    for i, frame in enumerate(frames):
        if frame.gt is None:
            raise SequenceError("pretraining frame %d has no ground truth"
                                % frame.index)
        pyramid = net.forward(frame.left, frame.right)
        valid = frame.valid if frame.valid is not None else frame.gt > 0
        lv = losses.multiscale_supervised_loss(pyramid, frame.gt, valid,
                                               weights)
        if lv.skip:
            history.append(float("nan"))
            continue
        grads = T.backward(lv.node, all_params)
        opt.step(net.params, {t.name: g for t, g in grads.items()})
        history.append(lv.value)
        if progress is not None:
            progress(i, lv.value)
    return history
