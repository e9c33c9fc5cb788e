"""Synthetic world: exact stereo geometry, grading, schedules."""

import numpy as np
import pytest

from stereoadapt.errors import ConfigError
from stereoadapt.synthetic import (Scene, SceneSpec, SegmentSpec, gen_frames,
                                   parse_segments, scene_spec_from_config)


def spec_with(**kw):
    base = dict(height=32, width=64, max_disparity=10,
                segments=[SegmentSpec(frames=12)])
    base.update(kw)
    return SceneSpec(**base)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SegmentSpec(frames=0)
    with pytest.raises(ConfigError):
        SegmentSpec(frames=5, contrast=0.0)
    with pytest.raises(ConfigError):
        SegmentSpec(frames=5, noise=-0.1)
    with pytest.raises(ConfigError):
        spec_with(height=4)
    with pytest.raises(ConfigError):
        spec_with(max_disparity=64)  # must stay below the width
    with pytest.raises(ConfigError):
        spec_with(segments=[])
    with pytest.raises(ConfigError):
        spec_with(num_planes=-1)
    with pytest.raises(ConfigError):
        spec_with(texture_scale=0.0)


def test_schedule_bookkeeping():
    spec = spec_with(segments=[SegmentSpec(frames=3, domain="A"),
                               SegmentSpec(frames=2, domain="B")])
    assert spec.total_frames == 5
    assert spec.segment_at(0).domain == "A"
    assert spec.segment_at(2).domain == "A"
    assert spec.segment_at(3).domain == "B"
    with pytest.raises(ConfigError):
        spec.segment_at(5)


def test_generation_is_deterministic():
    spec = spec_with(segments=[SegmentSpec(frames=4, noise=0.02)])
    a = list(gen_frames(spec, seed=7))
    b = list(gen_frames(spec, seed=7))
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.left, fb.left)
        np.testing.assert_array_equal(fa.right, fb.right)
        np.testing.assert_array_equal(fa.gt, fb.gt)
        np.testing.assert_array_equal(fa.valid, fb.valid)
    c = next(gen_frames(spec, seed=8))
    assert not np.array_equal(a[0].left, c.left)


def test_stereo_geometry_is_exact():
    # every valid left pixel must find the bitwise-identical sample at
    # x - d in the right view; disparities are integer by construction
    scene = Scene(spec_with(), seed=3)
    for t in (0, 5, 11):
        left, right, disp, valid = scene.render(t)
        h, w = disp.shape
        ys, xs = np.nonzero(valid)
        ds = disp[ys, xs].astype(np.int64)
        assert (np.mod(disp[valid], 1.0) == 0).all()
        np.testing.assert_array_equal(left[ys, xs], right[ys, xs - ds])


def test_validity_masks_occlusions_and_borders():
    scene = Scene(spec_with(), seed=3)
    left, right, disp, valid = scene.render(0)
    assert not valid[:, :2].any()  # leftmost columns can never match
    assert 0.5 < valid.mean() < 1.0
    assert disp.min() >= 2.0 and disp.max() <= 10.0


def test_grading_changes_pixels_not_geometry():
    plain = spec_with(segments=[SegmentSpec(frames=2)])
    graded = spec_with(segments=[SegmentSpec(
        frames=2, domain="B", brightness=-0.2, contrast=0.6, gamma=1.6)])
    fp = next(gen_frames(plain, seed=5))
    fg = next(gen_frames(graded, seed=5))
    np.testing.assert_array_equal(fp.gt, fg.gt)
    np.testing.assert_array_equal(fp.valid, fg.valid)
    assert not np.array_equal(fp.left, fg.left)
    assert fp.domain == "A" and fg.domain == "B"


def test_blur_and_noise_change_images():
    base = next(gen_frames(spec_with(), seed=5))
    blurred = next(gen_frames(spec_with(
        segments=[SegmentSpec(frames=12, blur=1.5)]), seed=5))
    noisy = next(gen_frames(spec_with(
        segments=[SegmentSpec(frames=12, noise=0.05)]), seed=5))
    assert not np.array_equal(base.left, blurred.left)
    assert not np.array_equal(base.left, noisy.left)
    # blur is deterministic smoothing: variance drops
    assert blurred.left.var() < base.left.var()


def test_camera_motion_controls_temporal_change():
    static = Scene(spec_with(camera_amplitude=0.0), seed=2)
    l0, _, _, _ = static.render(0)
    l5, _, _, _ = static.render(5)
    np.testing.assert_array_equal(l0, l5)
    moving = Scene(spec_with(camera_amplitude=6.0), seed=2)
    m0, _, _, _ = moving.render(0)
    m5, _, _, _ = moving.render(5)
    assert not np.array_equal(m0, m5)


def test_texture_scale_yields_a_different_world():
    coarse = Scene(spec_with(texture_scale=1.0), seed=4)
    fine = Scene(spec_with(texture_scale=0.5), seed=4)
    lc, _, dc, _ = coarse.render(0)
    lf, _, df, _ = fine.render(0)
    assert not np.array_equal(lc, lf)
    # still a well-formed scene with the same disparity budget
    assert df.min() >= 2.0 and df.max() <= 10.0


def test_gen_frames_slicing():
    spec = spec_with()
    full = list(gen_frames(spec, seed=9))
    part = list(gen_frames(spec, seed=9, start=4, count=3))
    assert [f.index for f in part] == [4, 5, 6]
    for fa, fb in zip(full[4:7], part):
        np.testing.assert_array_equal(fa.left, fb.left)
    with pytest.raises(ConfigError):
        list(gen_frames(spec, seed=9, start=10, count=5))
    with pytest.raises(ConfigError):
        list(gen_frames(spec, seed=9, start=-1))


def test_parse_segments_full_and_partial():
    segs = parse_segments("150:A,100:B:0.2:1.3:0.9:0.01:1.5")
    assert len(segs) == 2
    assert segs[0].frames == 150 and segs[0].domain == "A"
    assert segs[0].brightness == 0.0 and segs[0].blur == 0.0
    s = segs[1]
    assert (s.domain, s.brightness, s.contrast, s.gamma, s.noise, s.blur) == \
        ("B", 0.2, 1.3, 0.9, 0.01, 1.5)
    # empty domain field falls back to the default
    assert parse_segments("10::0.1")[0].domain == "A"
    with pytest.raises(ConfigError):
        parse_segments("150,,10")
    with pytest.raises(ConfigError):
        parse_segments("x:A")
    with pytest.raises(ConfigError):
        parse_segments("10:A:abc")


def test_scene_spec_from_config():
    cfg = {"height": "32", "width": "64", "max_disparity": "10",
           "segments": "5:A,5:B:0.1"}
    spec = scene_spec_from_config(cfg)
    assert spec.height == 32 and spec.width == 64
    assert spec.total_frames == 10
    assert spec.segments[1].brightness == 0.1
    defaults = scene_spec_from_config({})
    assert defaults.height == 64 and defaults.total_frames == 100
