"""Compact pyramidal disparity network.

A shared-weight encoder turns both images into a feature pyramid; from the
coarsest level down, each scale correlates left features against (warped)
right features, decodes a disparity map, and hands a 2x upsampled copy to
the next finer scale to pre-align the right features there.  The finest
decoded map (quarter resolution) passes through a dilated refinement stack
before being upsampled to the input resolution.

The parameter set splits into p = levels - 1 disjoint modules that can be
trained independently: module 1 owns the first two encoder blocks plus the
finest decoder and the refinement stack, module i > 1 owns encoder block
i + 1 plus the decoder working on its output.
"""

import hashlib
from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import checkpoint
from . import tensor as T
from .errors import ConfigError, FileFormatError, NumericsError, ShapeError
from .tensor import Tensor

ENCODER_CHANNELS = (16, 32, 64, 96, 128, 192)
DECODER_CHANNELS = (128, 128, 96, 64, 32, 1)
REFINE_CHANNELS = (128, 128, 128, 64, 32, 1)
REFINE_DILATIONS = (1, 2, 4, 8, 16, 1)
LEAKY_SLOPE = 0.2


@dataclass
class NetConfig:
    in_channels: int = 3
    width_scale: float = 1.0
    levels: int = 6
    max_corr_disp: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if not 2 <= self.levels <= len(ENCODER_CHANNELS):
            raise ConfigError("levels must be in [2, %d], got %r"
                              % (len(ENCODER_CHANNELS), self.levels))
        if not 0 < self.width_scale <= 4:
            raise ConfigError("width_scale must be in (0, 4], got %r"
                              % (self.width_scale,))
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.max_corr_disp < 0:
            raise ConfigError("max_corr_disp must be >= 0")
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ConfigError("dtype must be float32 or float64")

    def scaled(self, c):
        return max(1, int(round(c * self.width_scale)))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def modules(self):
        return self.levels - 1

    @property
    def divisor(self):
        return 2 ** self.levels


class ParamStore:
    """Ordered name -> Tensor map for the trainable parameters."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name, array):
        if name in self._params:
            raise ConfigError("duplicate parameter name %s" % name)
        t = Tensor(array, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def arrays(self):
        return {name: t.data for name, t in self._params.items()}

    def digest(self, names=None):
        """sha256 over the raw bytes of the selected parameters."""
        h = hashlib.sha256()
        for name in (names if names is not None else self._params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data).tobytes())
        return h.hexdigest()

    def load_arrays(self, arrays, dtype=None):
        """Overwrite parameter values in place; name/shape sets must match."""
        mine = set(self._params)
        theirs = set(arrays)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ShapeError("parameter set mismatch; missing %s, unexpected %s"
                             % (missing or "none", extra or "none"))
        bad = [n for n in self._params
               if tuple(arrays[n].shape) != self._params[n].data.shape]
        if bad:
            raise ShapeError("shape mismatch for parameters: %s" % ", ".join(bad))
        for name, t in self._params.items():
            t.data = np.ascontiguousarray(arrays[name],
                                          dtype=dtype or t.data.dtype)


class ModulePartition:
    """Disjoint cover of the parameter names by trainable modules (1-based)."""

    def __init__(self, groups):
        self.groups = {m: tuple(names) for m, names in groups.items()}
        self._owner = {}
        for m, names in self.groups.items():
            for n in names:
                if n in self._owner:
                    raise ConfigError("parameter %s in two modules" % n)
                self._owner[n] = m

    @property
    def count(self):
        return len(self.groups)

    def names(self, m):
        if m not in self.groups:
            raise ConfigError("module index %r out of range 1..%d"
                              % (m, self.count))
        return self.groups[m]

    def module_of(self, name):
        return self._owner[name]

    def validate(self, store):
        covered = set(self._owner)
        names = set(store.names())
        if covered != names:
            raise ConfigError("partition does not cover the parameter set")


def _conv_names(prefix):
    return prefix + ".w", prefix + ".b"


class StereoNet:
    """The network: configuration plus parameter store plus partition."""

    def __init__(self, config, seed=0, params=None):
        self.config = config
        self.params = ParamStore()
        self._build_structure()
        if params is not None:
            self.params.load_arrays(params, dtype=config.np_dtype)
        else:
            self._init_weights(seed)
        self.partition.validate(self.params)

    # -- construction -----------------------------------------------------

    def _build_structure(self):
        cfg = self.config
        self._shapes = {}
        groups = {m: [] for m in range(1, cfg.modules + 1)}

        def declare(prefix, cin, cout, module, k=3):
            wn, bn = _conv_names(prefix)
            self._shapes[wn] = (cout, cin, k, k)
            self._shapes[bn] = (cout,)
            groups[module] += [wn, bn]

        cin = cfg.in_channels
        for i in range(1, cfg.levels + 1):
            cout = cfg.scaled(ENCODER_CHANNELS[i - 1])
            module = 1 if i <= 2 else i - 1
            declare("enc%da" % i, cin, cout, module)
            declare("enc%db" % i, cout, cout, module)
            cin = cout

        corr_ch = 2 * cfg.max_corr_disp + 1
        for m in range(1, cfg.modules + 1):
            feat_ch = cfg.scaled(ENCODER_CHANNELS[m])
            cin = feat_ch + corr_ch + (0 if m == cfg.modules else 1)
            for j, c in enumerate(DECODER_CHANNELS, start=1):
                cout = c if c == 1 else cfg.scaled(c)
                declare("dec%d.c%d" % (m, j), cin, cout, m)
                cin = cout

        cin = 1 + cfg.scaled(ENCODER_CHANNELS[1])
        for j, c in enumerate(REFINE_CHANNELS, start=1):
            cout = c if c == 1 else cfg.scaled(c)
            declare("ref.c%d" % j, cin, cout, 1)
            cin = cout

        for name, shape in self._shapes.items():
            self.params.add(name, np.zeros(shape, dtype=cfg.np_dtype))
        self.partition = ModulePartition(groups)

    def _init_weights(self, seed):
        rng = np.random.default_rng(seed)
        dt = self.config.np_dtype
        for name, t in self.params.items():
            if name.endswith(".b"):
                continue
            if name == "ref.c6.w":
                continue  # residual stack starts as identity
            fan_in = int(np.prod(t.data.shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            t.data = rng.normal(0.0, std, size=t.data.shape).astype(dt)

    # -- building blocks --------------------------------------------------

    def _conv(self, prefix, x, stride=1, dilation=1):
        wn, bn = _conv_names(prefix)
        return T.conv2d(x, self.params[wn], self.params[bn],
                        stride=stride, dilation=dilation)

    def _encode(self, x):
        feats = []
        for i in range(1, self.config.levels + 1):
            x = T.leaky_relu(self._conv("enc%da" % i, x, stride=2), LEAKY_SLOPE)
            x = T.leaky_relu(self._conv("enc%db" % i, x), LEAKY_SLOPE)
            feats.append(x)
        return feats

    def _decode_stack(self, m, x):
        for j in range(1, len(DECODER_CHANNELS) + 1):
            x = self._conv("dec%d.c%d" % (m, j), x)
            if j < len(DECODER_CHANNELS):
                x = T.leaky_relu(x, LEAKY_SLOPE)
        return x

    def _refine_stack(self, x):
        for j in range(1, len(REFINE_CHANNELS) + 1):
            x = self._conv("ref.c%d" % j, x, dilation=REFINE_DILATIONS[j - 1])
            if j < len(REFINE_CHANNELS):
                x = T.leaky_relu(x, LEAKY_SLOPE)
        return x

    # -- public ops -------------------------------------------------------

    def decode(self, m, features, corr, up_disp=None):
        """Decoder for module m on (features, correlation, coarser disparity).

        Inputs are concatenated in that channel order; up_disp is absent at
        the coarsest scale only.  Returns the non-negative disparity map.
        """
        cfg = self.config
        if not 1 <= m <= cfg.modules:
            raise ShapeError("module index %d out of range" % m)
        if (up_disp is None) != (m == cfg.modules):
            raise ShapeError("up_disp must be given exactly when m < %d"
                             % cfg.modules)
        want_feat = cfg.scaled(ENCODER_CHANNELS[m])
        if features.shape[0] != want_feat:
            raise ShapeError("module %d expects %d feature channels, got %d"
                             % (m, want_feat, features.shape[0]))
        if corr.shape[0] != 2 * cfg.max_corr_disp + 1:
            raise ShapeError("correlation input must have %d channels"
                             % (2 * cfg.max_corr_disp + 1))
        parts = [features, corr]
        if up_disp is not None:
            if up_disp.shape[0] != 1:
                raise ShapeError("up_disp must have one channel")
            parts.append(up_disp)
        return T.relu(self._decode_stack(m, T.concat_channels(parts)))

    def refine(self, disp, features):
        """Residual refinement of the finest decoded disparity."""
        cfg = self.config
        want_feat = cfg.scaled(ENCODER_CHANNELS[1])
        if features.shape[0] != want_feat:
            raise ShapeError("refinement expects %d feature channels, got %d"
                             % (want_feat, features.shape[0]))
        if disp.shape[0] != 1 or disp.shape[1:] != features.shape[1:]:
            raise ShapeError("refinement inputs must share extents, got %s / %s"
                             % (disp.shape, features.shape))
        residual = self._refine_stack(T.concat_channels([disp, features]))
        return T.relu(T.add(disp, residual))

    def forward(self, left, right):
        """Full pyramid pass; returns a DisparityPyramid of live tensors."""
        cfg = self.config
        left = np.asarray(left, dtype=cfg.np_dtype)
        right = np.asarray(right, dtype=cfg.np_dtype)
        for name, img in (("left", left), ("right", right)):
            if img.ndim != 3 or img.shape[0] != cfg.in_channels:
                raise ShapeError("%s image must be (%d, H, W), got %s"
                                 % (name, cfg.in_channels, img.shape))
        if left.shape != right.shape:
            raise ShapeError("stereo pair extents differ: %s vs %s"
                             % (left.shape, right.shape))
        h, w = left.shape[1:]
        if h % cfg.divisor or w % cfg.divisor:
            raise ShapeError("input extents %dx%d must be multiples of %d"
                             % (h, w, cfg.divisor))

        lt, rt = Tensor(left), Tensor(right)
        fl = self._encode(lt)
        fr = self._encode(rt)

        maps = {}
        up = None
        for m in range(cfg.modules, 0, -1):
            f_left, f_right = fl[m], fr[m]
            if up is None:
                corr = T.correlation(f_left, f_right, cfg.max_corr_disp)
                dec_in = T.concat_channels([f_left, corr])
            else:
                warped = T.warp(f_right, T.reshape(up, up.shape[1:]))
                corr = T.correlation(f_left, warped, cfg.max_corr_disp)
                dec_in = T.concat_channels([f_left, corr, up])
            y = T.relu(self._decode_stack(m, dec_in))
            if m == 1:
                residual = self._refine_stack(T.concat_channels([y, fl[1]]))
                y = T.relu(T.add(y, residual))
            maps[m] = y
            if m > 1:
                up = T.upsample_bilinear(y, 2, scale_values=True)

        full = T.upsample_bilinear(maps[1], 4, scale_values=True)
        if not np.isfinite(full.data).all():
            raise NumericsError("forward produced non-finite disparities")
        factors = {m: 2 ** (m + 1) for m in maps}
        return DisparityPyramid(maps=maps, factors=factors, full=full)

    # -- persistence ------------------------------------------------------

    def save(self, path):
        cfg = self.config
        arrays = {
            "_cfg.in_channels": np.float32(cfg.in_channels),
            "_cfg.width_scale": np.float32(cfg.width_scale),
            "_cfg.levels": np.float32(cfg.levels),
            "_cfg.max_corr_disp": np.float32(cfg.max_corr_disp),
        }
        arrays.update(self.params.arrays())
        checkpoint.save_arrays(path, arrays)

    @classmethod
    def load(cls, path, dtype="float32"):
        arrays = checkpoint.load_arrays(path)
        try:
            cfg = NetConfig(
                in_channels=int(arrays.pop("_cfg.in_channels")[0]),
                width_scale=float(arrays.pop("_cfg.width_scale")[0]),
                levels=int(arrays.pop("_cfg.levels")[0]),
                max_corr_disp=int(arrays.pop("_cfg.max_corr_disp")[0]),
                dtype=dtype,
            )
        except KeyError as exc:
            raise FileFormatError("%s: missing config entry %s" % (path, exc))
        return cls(cfg, params=arrays)


@dataclass
class DisparityPyramid:
    """Live output tensors of one forward pass.

    maps[m] is the (1, H/f, W/f) disparity of module m with f = factors[m];
    full is the finest map upsampled (and value-scaled) to input resolution.
    """

    maps: Dict[int, Tensor]
    factors: Dict[int, int]
    full: Tensor

    def full_map(self):
        return np.asarray(self.full.data[0])
