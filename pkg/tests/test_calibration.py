import numpy as np
import pytest

from stereogaze.calibration import PolyMap2, apply, fit_poly_calibration, poly_basis
from stereogaze.errors import RankDeficient

GRID = np.array([[x, y] for y in (8.0, 0.0, -8.0) for x in (-14.0, 0.0, 14.0)])
WARP_A = np.array([0.3, 1.02, 0.01, 0.0008, -0.0015, 0.0006])
WARP_B = np.array([-0.2, -0.015, 0.97, 0.0004, 0.0009, -0.002])


def _warp(p):
    x, y = p[:, 0], p[:, 1]
    basis = np.column_stack([np.ones_like(x), x, y, x * y, x * x, y * y])
    return np.column_stack([basis @ WARP_A, basis @ WARP_B])


def test_identity_pairs_give_identity_map():
    pm = fit_poly_calibration(GRID, GRID)
    np.testing.assert_allclose(pm.a, [0, 1, 0, 0, 0, 0], atol=1e-10)
    np.testing.assert_allclose(pm.b, [0, 0, 1, 0, 0, 0], atol=1e-10)


def test_apply_examples():
    assert apply(PolyMap2.identity(), [3.2, -1.1]).tolist() == [3.2, -1.1]
    pm = PolyMap2([1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1])
    assert apply(pm, [2.0, 3.0]).tolist() == [1.0, 9.0]
    assert apply(pm, np.array([[2.0, 3.0]])).shape == (1, 2)


def test_known_quadratic_recovered_exactly():
    raw = GRID + np.array([0.4, -0.3])
    true = _warp(raw)
    pm = fit_poly_calibration(raw, true)
    assert pm.residual <= 1e-8
    np.testing.assert_allclose(pm.a, WARP_A, atol=1e-10)
    np.testing.assert_allclose(pm.b, WARP_B, atol=1e-10)
    assert np.abs(apply(pm, raw) - true).max() <= 1e-8


def test_warp_correction_generalizes(rng):
    # the true point is distorted by the inverse of a quadratic; fitting on the grid must reduce held-out error
    true = GRID
    raw = true.copy()
    for _ in range(50):  # fixed-point inverse of the warp
        raw = raw - (_warp(raw) - true)
    pm = fit_poly_calibration(raw, true)
    held_true = rng.uniform([-14, -8], [14, 8], size=(200, 2))
    held_raw = held_true.copy()
    for _ in range(50):
        held_raw = held_raw - (_warp(held_raw) - held_true)
    before = np.linalg.norm(held_raw - held_true, axis=1).mean()
    after = np.linalg.norm(apply(pm, held_raw) - held_true, axis=1).mean()
    assert after < before


def test_collinear_points_rank_deficient():
    pts = np.column_stack([np.linspace(-5, 5, 6), 2 * np.linspace(-5, 5, 6)])
    with pytest.raises(RankDeficient):
        fit_poly_calibration(pts, pts)
    with pytest.raises(RankDeficient):
        fit_poly_calibration(GRID[:5], GRID[:5])


def test_never_worse_than_identity_on_fit_points(rng):
    for _ in range(10):
        raw = GRID + rng.normal(0, 0.8, size=GRID.shape)
        pm = fit_poly_calibration(raw, GRID)
        rms_id = np.sqrt(np.mean(np.sum((raw - GRID) ** 2, axis=1)))
        assert pm.residual <= rms_id + 1e-12


def test_reordering_invariance(rng):
    raw = GRID + rng.normal(0, 0.5, size=GRID.shape)
    perm = rng.permutation(9)
    a = fit_poly_calibration(raw, GRID)
    b = fit_poly_calibration(raw[perm], GRID[perm])
    np.testing.assert_allclose(a.a, b.a, atol=1e-10)
    np.testing.assert_allclose(a.b, b.b, atol=1e-10)


def test_basis_and_serialization():
    assert poly_basis([2.0, 3.0]).tolist() == [[1, 2, 3, 6, 4, 9]]
    pm = fit_poly_calibration(GRID + 0.1, GRID)
    back = PolyMap2.from_dict(pm.to_dict())
    np.testing.assert_array_equal(back.a, pm.a)
    assert back.residual == pm.residual
