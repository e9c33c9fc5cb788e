"""Census/SAD matching, scanline aggregation, winner selection."""

import numpy as np
import pytest

from stereoadapt import kernels as K
from stereoadapt.classic import (BmConfig, CostVolume, SgmConfig,
                                 block_matching, build_cost_volume,
                                 census_transform, sgm, sgm_aggregate,
                                 subpixel_refine, to_gray, wta)
from stereoadapt.errors import ConfigError, ShapeError

RNG = np.random.default_rng(33)


def shifted_pair(h=40, w=64, d=4, seed=0, smooth=True):
    """Rectified pair with constant true disparity d."""
    rng = np.random.default_rng(seed)
    wide = rng.random((h, w + d)).astype(np.float32)
    if smooth:
        # soften the texture so block costs have clean minima
        k = np.ones(3) / 3.0
        wide = np.apply_along_axis(lambda r: np.convolve(r, k, "same"), 1, wide)
        wide = np.apply_along_axis(lambda c: np.convolve(c, k, "same"), 0, wide)
    left = wide[:, :w].copy()
    right = wide[:, d:].copy()
    return left, right


def vol(costs, max_cost=None, reference="left"):
    costs = np.asarray(costs, dtype=np.float32)
    return CostVolume(costs=costs,
                      max_cost=float(costs.max() if max_cost is None else max_cost),
                      reference=reference)


def test_to_gray_accepts_both_layouts():
    g = to_gray(np.ones((3, 4, 5)))
    assert g.shape == (4, 5) and g.dtype == np.float32
    flat = to_gray(np.full((4, 5), 0.5))
    np.testing.assert_allclose(flat, 0.5)
    with pytest.raises(ShapeError):
        to_gray(np.ones(7))


def test_census_flat_image_all_zero_and_window_validation():
    assert (census_transform(np.full((9, 9), 0.3)) == 0).all()
    with pytest.raises(ConfigError):
        census_transform(np.zeros((9, 9)), window=4)
    with pytest.raises(ConfigError):
        census_transform(np.zeros((9, 9)), window=9)


def test_config_validation():
    with pytest.raises(ConfigError):
        SgmConfig(p1=5.0, p2=2.0)
    with pytest.raises(ConfigError):
        SgmConfig(p1=-1.0)
    with pytest.raises(ConfigError):
        SgmConfig(paths=3)
    with pytest.raises(ConfigError):
        SgmConfig(census_window=6)
    with pytest.raises(ConfigError):
        SgmConfig(max_disparity=-1)
    with pytest.raises(ConfigError):
        BmConfig(window=8)
    assert len(SgmConfig(paths=8).directions) == 8


def test_build_cost_volume_validation():
    img = np.zeros((8, 8), dtype=np.float32)
    with pytest.raises(ConfigError):
        build_cost_volume(img, img, 4, metric="nonesuch")
    with pytest.raises(ConfigError):
        build_cost_volume(img, img, 4, reference="center")
    with pytest.raises(ConfigError):
        build_cost_volume(img, img, -2)


def test_single_scan_hand_example():
    # raw costs per column: (1,0), (0,1), (1,0); p1=1, p2=2.
    # scan gives (1,0), (1,1), (1,0): the middle column becomes a tie that
    # winner selection must break toward d=0.
    costs = np.array([[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]], dtype=np.float32)
    path = K.sgm_scan_x(costs, 1.0, 2.0)
    np.testing.assert_array_equal(
        path, np.array([[[1, 0], [1, 1], [1, 0]]], dtype=np.float32))
    disp, _ = wta(vol(path))
    np.testing.assert_array_equal(disp, [[1, 0, 1]])


def test_wta_tie_breaks_to_smaller_disparity():
    disp, summary = wta(vol(np.zeros((3, 4, 6))))
    np.testing.assert_array_equal(disp, 0)
    np.testing.assert_array_equal(summary.c1, summary.c2)


def test_wta_summary_second_best_and_competing_minimum():
    # curve 5,1,4,2,6: winner d=1 (c1=1), second-lowest overall c2=2,
    # best competing local minimum also 2 (at d=3)
    curve = np.array([5.0, 1.0, 4.0, 2.0, 6.0], dtype=np.float32)
    disp, s = wta(vol(curve[None, None]))
    assert disp[0, 0] == 1
    assert s.c1[0, 0] == 1.0 and s.c2[0, 0] == 2.0 and s.c2m[0, 0] == 2.0
    # monotone curve has no second local minimum: c2m falls back to c2
    mono = np.array([0.0, 1.0, 2.0, 3.0], dtype=np.float32)
    _, s2 = wta(vol(mono[None, None]))
    assert s2.c2m[0, 0] == s2.c2[0, 0] == 1.0


def test_zero_penalty_aggregation_keeps_raw_winner():
    costs = RNG.random((12, 16, 8)).astype(np.float32)
    raw = vol(costs, max_cost=1.0)
    agg = sgm_aggregate(raw, SgmConfig(max_disparity=7, p1=0.0, p2=0.0))
    np.testing.assert_array_equal(wta(agg)[0], wta(raw)[0])


def test_aggregated_costs_respect_path_bound():
    costs = (RNG.random((10, 14, 6)) * 16).astype(np.float32)
    cfg = SgmConfig(max_disparity=5, p1=2.0, p2=9.0, paths=8)
    agg = sgm_aggregate(vol(costs, max_cost=16.0), cfg)
    bound = 8 * (costs + cfg.p2) + 1e-2
    assert (agg.costs <= bound).all()
    assert agg.max_cost == 8 * (16.0 + cfg.p2)
    assert agg.reference == "left"


def test_subpixel_recovers_quadratic_minimum():
    d_true = 3.3
    d_axis = np.arange(8, dtype=np.float64)
    curve = (d_axis - d_true) ** 2
    v = vol(curve[None, None])
    disp, _ = wta(v)
    refined = subpixel_refine(v, disp)
    np.testing.assert_allclose(refined[0, 0], d_true, atol=1e-6)


def test_subpixel_clamps_offset_and_keeps_borders_integer():
    # heavily skewed neighbours would push the fit past half a pixel
    curve = np.array([100.0, 1.0, 1.5, 200.0], dtype=np.float32)
    v = vol(curve[None, None])
    disp, _ = wta(v)
    refined = subpixel_refine(v, disp)
    assert abs(refined[0, 0] - disp[0, 0]) <= 0.5
    # winner on the border stays integer
    edge = vol(np.array([0.0, 1.0, 2.0], dtype=np.float32)[None, None])
    d_edge, _ = wta(edge)
    assert subpixel_refine(edge, d_edge)[0, 0] == 0.0
    # flat curve has no curvature: no refinement
    flat = vol(np.array([1.0, 1.0, 1.0], dtype=np.float32)[None, None])
    d_flat, _ = wta(flat)
    assert subpixel_refine(flat, d_flat)[0, 0] == d_flat[0, 0]


def test_sgm_recovers_constant_shift():
    left, right = shifted_pair(d=4)
    res = sgm(left, right, SgmConfig(max_disparity=12))
    interior = res.disp[6:-6, 10:-6]
    assert np.median(np.abs(interior - 4.0)) < 0.5
    assert res.max_disparity == 12
    assert res.disp.shape == left.shape
    assert res.disp_right.shape == left.shape


def test_block_matching_recovers_constant_shift():
    left, right = shifted_pair(d=3, seed=1)
    res = block_matching(left, right, BmConfig(max_disparity=10))
    interior = res.disp[6:-6, 8:-6]
    assert np.median(np.abs(interior - 3.0)) < 0.5


def test_left_and_right_references_are_consistent():
    left, right = shifted_pair(d=4, seed=2)
    res = sgm(left, right, SgmConfig(max_disparity=12))
    # right-reference disparity of a constant-shift scene is the same shift
    interior_r = res.disp_right[6:-6, 6:-10]
    assert np.median(np.abs(interior_r - 4.0)) < 0.5


def test_subpixel_toggle_produces_integer_maps():
    left, right = shifted_pair(d=2, h=24, w=32, seed=3)
    res = sgm(left, right, SgmConfig(max_disparity=8, subpixel=False))
    assert np.equal(np.mod(res.disp, 1.0), 0.0).all()
