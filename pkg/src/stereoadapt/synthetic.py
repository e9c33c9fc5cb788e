"""Synthetic rectified stereo sequences with dense ground truth.

Scenes are layered fronto-parallel planes over a background, all carrying
tileable value-noise textures that can be sampled at fractional coordinates,
so the same world re-renders consistently from any camera offset.  The
camera oscillates laterally; every plane drifts proportionally to its
disparity, which gives temporally coherent parallax.  The right view is
painted far-to-near (a z-buffer in disparity order) and the validity mask
marks pixels whose match is visible in the right view.

Domain shifts are photometric: each segment of the schedule can re-grade
brightness, contrast, gamma and sensor noise of both views while geometry
and ground truth stay untouched.
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError
from .fileio import StereoFrame


@dataclass
class SegmentSpec:
    """A run of frames sharing one photometric grading."""

    frames: int
    domain: str = "A"
    brightness: float = 0.0
    contrast: float = 1.0
    gamma: float = 1.0
    noise: float = 0.0
    blur: float = 0.0  # Gaussian sigma in pixels; 0 disables

    def __post_init__(self):
        if self.frames <= 0:
            raise ConfigError("segment frame count must be positive")
        if self.contrast <= 0 or self.gamma <= 0:
            raise ConfigError("contrast and gamma must be positive")
        if self.noise < 0 or self.blur < 0:
            raise ConfigError("noise and blur sigmas must be >= 0")


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 128
    max_disparity: int = 24
    num_planes: int = 4
    background_disparity: int = 2
    camera_amplitude: float = 6.0
    camera_period: float = 60.0
    texture_scale: float = 1.0  # multiplies texture periods; <1 means finer
    segments: List[SegmentSpec] = field(
        default_factory=lambda: [SegmentSpec(frames=100)])

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("scene extent must be at least 8x8")
        if not 0 < self.background_disparity <= self.max_disparity:
            raise ConfigError("background disparity must be in (0, max]")
        if self.max_disparity >= self.width:
            raise ConfigError("max disparity must be below the image width")
        if self.num_planes < 0:
            raise ConfigError("num_planes must be >= 0")
        if not self.segments:
            raise ConfigError("at least one segment is required")
        if self.camera_period <= 0:
            raise ConfigError("camera period must be positive")
        if self.texture_scale <= 0:
            raise ConfigError("texture scale must be positive")

    @property
    def total_frames(self):
        return sum(s.frames for s in self.segments)

    def segment_at(self, t):
        for seg in self.segments:
            if t < seg.frames:
                return seg
            t -= seg.frames
        raise ConfigError("frame index %d beyond the schedule" % t)


def _gaussian_blur(img, sigma):
    """Separable Gaussian with reflected borders."""
    radius = max(1, int(round(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, ((0, 0), (radius, radius)), mode="reflect")
    rows = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, pad)
    pad = np.pad(rows, ((radius, radius), (0, 0)), mode="reflect")
    return np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, pad)


class _Texture:
    """Tileable multi-octave value noise, sampled at float coordinates."""

    def __init__(self, rng, base_period, octaves=3, contrast=0.45):
        self.layers = []
        period = float(base_period)
        amp = 1.0
        for _ in range(octaves):
            size = max(4, int(round(256.0 / period)))
            self.layers.append((rng.random((size, size)) - 0.5, period, amp))
            period /= 2.0
            amp /= 2.0
        self.contrast = contrast
        self.offset = 0.5 + (rng.random() - 0.5) * 0.2

    def sample(self, xs, ys):
        acc = np.zeros(np.broadcast(xs, ys).shape, dtype=np.float64)
        for grid, period, amp in self.layers:
            n = grid.shape[0]
            gx = np.asarray(xs, dtype=np.float64) / period
            gy = np.asarray(ys, dtype=np.float64) / period
            x0 = np.floor(gx)
            y0 = np.floor(gy)
            fx = gx - x0
            fy = gy - y0
            ix = x0.astype(np.int64) % n
            iy = y0.astype(np.int64) % n
            ix1 = (ix + 1) % n
            iy1 = (iy + 1) % n
            v00 = grid[iy, ix]
            v01 = grid[iy, ix1]
            v10 = grid[iy1, ix]
            v11 = grid[iy1, ix1]
            top = v00 + fx * (v01 - v00)
            bot = v10 + fx * (v11 - v10)
            acc += amp * (top + fy * (bot - top))
        return np.clip(self.offset + self.contrast * acc, 0.02, 0.98)


class _Plane:
    def __init__(self, disparity, x0, y0, w, h, texture):
        self.disparity = int(disparity)
        self.x0 = float(x0)
        self.y0 = float(y0)
        self.w = float(w)
        self.h = float(h)
        self.texture = texture


class Scene:
    """Frozen world geometry plus the frame renderer."""

    def __init__(self, spec, seed):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.seed = seed
        ts = spec.texture_scale
        self.background = _Texture(
            rng, base_period=ts * float(rng.integers(20, 33)))
        choices = np.arange(spec.background_disparity + 2,
                            spec.max_disparity + 1)
        n = min(spec.num_planes, len(choices))
        disps = rng.choice(choices, size=n, replace=False) if n else []
        self.planes = []
        for d in sorted(int(v) for v in disps):
            w = rng.integers(spec.width // 5, spec.width // 2 + 1)
            h = rng.integers(spec.height // 4, spec.height // 2 + 1)
            x0 = rng.integers(0, max(1, spec.width - w))
            y0 = rng.integers(0, max(1, spec.height - h))
            tex = _Texture(rng, base_period=ts * float(rng.integers(12, 25)))
            self.planes.append(_Plane(d, x0, y0, w, h, tex))

    def _camera_shift(self, t):
        spec = self.spec
        return spec.camera_amplitude * math.sin(
            2.0 * math.pi * t / spec.camera_period)

    def render(self, t):
        """Geometry-only frame t: images in [0, 1], gt and validity."""
        spec = self.spec
        h, w = spec.height, spec.width
        xg, yg = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        s = self._camera_shift(t)
        d_ref = float(spec.max_disparity)

        def layer_shift(d):
            return s * d / d_ref

        bg_shift = layer_shift(spec.background_disparity)
        left = self.background.sample(xg - bg_shift, yg)
        disp = np.full((h, w), float(spec.background_disparity))
        right = self.background.sample(xg + spec.background_disparity - bg_shift, yg)
        rdisp = np.full((h, w), float(spec.background_disparity))

        for plane in self.planes:  # ascending disparity: near planes last
            d = plane.disparity
            a = plane.x0 + layer_shift(d)
            inside_y = (yg >= plane.y0) & (yg < plane.y0 + plane.h)
            tex_y = yg - plane.y0

            m_l = inside_y & (xg >= a) & (xg < a + plane.w)
            left[m_l] = plane.texture.sample(xg[m_l] - a, tex_y[m_l])
            disp[m_l] = d

            m_r = inside_y & (xg >= a - d) & (xg < a - d + plane.w)
            right[m_r] = plane.texture.sample(xg[m_r] + d - a, tex_y[m_r])
            rdisp[m_r] = d

        xr = (xg - disp).astype(np.int64)
        valid = xr >= 0
        looked = rdisp[np.arange(h)[:, None], np.clip(xr, 0, w - 1)]
        valid &= looked == disp
        return left, right, disp, valid

    def frame(self, t):
        """Fully graded frame t as a StereoFrame."""
        spec = self.spec
        seg = spec.segment_at(t)
        left, right, disp, valid = self.render(t)
        noise_rng = np.random.default_rng([self.seed, t])
        out = []
        for img in (left, right):
            if seg.blur > 0:
                img = _gaussian_blur(img, seg.blur)
            g = np.clip(seg.contrast * (img - 0.5) + 0.5 + seg.brightness,
                        0.0, 1.0) ** seg.gamma
            if seg.noise > 0:
                g = np.clip(g + noise_rng.normal(0.0, seg.noise, g.shape),
                            0.0, 1.0)
            out.append(g.astype(np.float32)[None])
        return StereoFrame(left=out[0], right=out[1],
                           gt=disp.astype(np.float32),
                           valid=valid, index=t, domain=seg.domain)


def gen_frames(spec, seed, start=0, count=None):
    """Iterate frames [start, start+count) of the schedule."""
    scene = Scene(spec, seed)
    total = spec.total_frames
    if count is None:
        count = total - start
    if start < 0 or start + count > total:
        raise ConfigError("frame range [%d, %d) outside schedule of %d"
                          % (start, start + count, total))
    for t in range(start, start + count):
        yield scene.frame(t)


def parse_segments(text):
    """Parse 'frames:domain:brightness:contrast:gamma:noise:blur,...' specs.

    Numeric fields are optional from the right; 150:A,100:B:0.2:1.3 is a
    valid two-segment schedule.
    """
    segments = []
    for part in text.split(","):
        fields = [f.strip() for f in part.strip().split(":")]
        if not fields or not fields[0]:
            raise ConfigError("empty segment in %r" % text)
        try:
            frames = int(fields[0])
            seg = SegmentSpec(
                frames=frames,
                domain=fields[1] if len(fields) > 1 and fields[1] else "A",
                brightness=float(fields[2]) if len(fields) > 2 else 0.0,
                contrast=float(fields[3]) if len(fields) > 3 else 1.0,
                gamma=float(fields[4]) if len(fields) > 4 else 1.0,
                noise=float(fields[5]) if len(fields) > 5 else 0.0,
                blur=float(fields[6]) if len(fields) > 6 else 0.0,
            )
        except ValueError:
            raise ConfigError("cannot parse segment %r" % part)
        segments.append(seg)
    return segments


def scene_spec_from_config(cfg, source="config"):
    """Build a SceneSpec from a parsed key=value dict."""
    from .fileio import config_get

    segs = cfg.get("segments")
    segments = parse_segments(segs) if segs else None
    kwargs = dict(
        height=config_get(cfg, "height", int, 64, source),
        width=config_get(cfg, "width", int, 128, source),
        max_disparity=config_get(cfg, "max_disparity", int, 24, source),
        num_planes=config_get(cfg, "num_planes", int, 4, source),
        background_disparity=config_get(cfg, "background_disparity", int, 2,
                                        source),
        camera_amplitude=config_get(cfg, "camera_amplitude", float, 6.0,
                                    source),
        camera_period=config_get(cfg, "camera_period", float, 60.0, source),
        texture_scale=config_get(cfg, "texture_scale", float, 1.0, source),
    )
    if segments is not None:
        kwargs["segments"] = segments
    return SceneSpec(**kwargs)
