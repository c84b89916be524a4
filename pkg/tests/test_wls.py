import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.img import INVALID_DISPARITY, DisparityMap, GrayImage
from app.params import WlsParams
from app.wls import build_system, edge_weights, wls_energy, wls_refine


def params(lam=5, sigma=0.5, **kwargs):
    return WlsParams(sigma=sigma, **{"lambda": lam}, **kwargs)


def dense_solution(initial: DisparityMap, guide: GrayImage, p: WlsParams) -> np.ndarray:
    """Normal equations assembled pixel by pixel and solved densely."""
    valid = initial.valid_mask
    height, width = initial.shape
    coords = [(y, x) for y in range(height) for x in range(width) if valid[y, x]]
    index = {c: i for i, c in enumerate(coords)}
    if not coords:
        return initial.data.copy()
    intensity = guide.data.astype(float) / 255.0
    sigma = max(p.sigma, 0.01)

    a = np.eye(len(coords))
    for (y, x), i in index.items():
        for ny, nx in ((y, x + 1), (y + 1, x)):
            j = index.get((ny, nx))
            if j is None:
                continue
            w = math.exp(-((intensity[y, x] - intensity[ny, nx]) ** 2) / (2 * sigma * sigma))
            a[i, i] += p.lambda_ * w
            a[j, j] += p.lambda_ * w
            a[i, j] -= p.lambda_ * w
            a[j, i] -= p.lambda_ * w
    b = np.array([initial.data[c] for c in coords])
    out = initial.data.copy()
    for (y, x), v in zip(coords, np.linalg.solve(a, b)):
        out[y, x] = v
    return out


# ========================================
# Edge weights
# ========================================

def test_flat_guide_gives_unit_weights():
    w = edge_weights(GrayImage(np.full((3, 4), 90)), 0.5)
    assert np.allclose(w.horizontal, 1.0) and np.allclose(w.vertical, 1.0)
    assert w.horizontal.shape == (3, 3) and w.vertical.shape == (2, 4)


def test_full_range_edge_weight():
    w = edge_weights(GrayImage(np.array([[0, 255]])), 0.5)
    assert w.horizontal[0, 0] == pytest.approx(math.exp(-2.0))


def test_tiny_sigma_collapses_on_edges():
    guide = GrayImage(np.array([[0, 0, 255]]))
    w = edge_weights(guide, 0.0)
    assert w.horizontal[0, 0] == 1.0
    assert w.horizontal[0, 1] < 1e-100


def test_system_is_symmetric():
    rng = np.random.default_rng(1)
    initial = DisparityMap(rng.uniform(0, 10, size=(4, 5)))
    guide = GrayImage(rng.integers(0, 256, size=(4, 5)))
    a, b = build_system(initial, guide, params())
    assert abs(a - a.T).max() < 1e-12
    assert b.shape == (20,)


# ========================================
# Refinement
# ========================================

def test_constant_map_is_fixed_point():
    initial = DisparityMap.constant(6, 5, 7.0)
    guide = GrayImage(np.random.default_rng(2).integers(0, 256, size=(5, 6)))
    result = wls_refine(initial, guide, params(lam=1))
    assert result.converged
    assert np.allclose(result.disparity.data, 7.0)


def test_spike_pulled_toward_neighbours():
    initial = DisparityMap(np.array([[0.0, 10.0, 0.0]]))
    guide = GrayImage(np.full((1, 3), 128))
    p = params(lam=1000, max_iterations=500, tolerance=1e-10)
    result = wls_refine(initial, guide, p)
    out = result.disparity.data[0]
    # rows of I + λL sum to 1: the total is kept and strong smoothing spreads it evenly
    assert out.sum() == pytest.approx(10.0, abs=1e-6)
    assert out[1] == pytest.approx(10.0 / 3.0, abs=1e-2)
    assert np.allclose(out, dense_solution(initial, guide, p)[0], atol=1e-6)
    assert out[0] == pytest.approx(out[2])
    assert wls_energy(result.disparity, initial, guide, p) < wls_energy(initial, initial, guide, p)


def test_matches_dense_solve_on_2x2():
    rng = np.random.default_rng(7)
    initial = DisparityMap(rng.uniform(0, 20, size=(2, 2)))
    guide = GrayImage(np.full((2, 2), 40))
    p = params(lam=5, tolerance=1e-12, max_iterations=100)
    result = wls_refine(initial, guide, p)
    assert np.allclose(result.disparity.data, dense_solution(initial, guide, p), atol=1e-6)


def test_invalid_pixels_stay_invalid():
    data = np.array([[1.0, INVALID_DISPARITY, 3.0], [2.0, 2.0, INVALID_DISPARITY]])
    initial = DisparityMap(data)
    result = wls_refine(initial, GrayImage(np.full((2, 3), 10)), params())
    assert np.array_equal(result.disparity.valid_mask, initial.valid_mask)


def test_all_invalid_map_returned_unchanged():
    initial = DisparityMap.constant(4, 4, INVALID_DISPARITY)
    result = wls_refine(initial, GrayImage(np.zeros((4, 4))), params())
    assert result.converged and result.iterations == 0
    assert np.array_equal(result.disparity.data, initial.data)


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(11)
    initial = DisparityMap(rng.uniform(0, 60, size=(20, 20)))
    guide = GrayImage(rng.integers(0, 256, size=(20, 20)))
    result = wls_refine(initial, guide, params(lam=100000, max_iterations=1, tolerance=1e-12))
    assert not result.converged
    assert result.iterations <= 1


@settings(max_examples=100, deadline=None)
@given(
    height=st.integers(1, 6),
    width=st.integers(1, 6),
    lam=st.integers(1, 1000),
    sigma=st.sampled_from([0.0, 0.1, 0.5, 0.9]),
    seed=st.integers(0, 2 ** 32 - 1),
)
def test_energy_descent_and_dense_oracle(height, width, lam, sigma, seed):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 63, size=(height, width))
    data[rng.random((height, width)) < 0.2] = INVALID_DISPARITY
    initial = DisparityMap(data)
    guide = GrayImage(rng.integers(0, 256, size=(height, width)))
    p = params(lam=lam, sigma=sigma, tolerance=1e-12, max_iterations=1000)

    result = wls_refine(initial, guide, p)
    assert wls_energy(result.disparity, initial, guide, p) <= wls_energy(initial, initial, guide, p) + 1e-6
    assert np.allclose(result.disparity.data, dense_solution(initial, guide, p), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), lam=st.integers(1, 100000))
def test_output_within_input_range(seed, lam):
    rng = np.random.default_rng(seed)
    initial = DisparityMap(rng.uniform(0, 63, size=(5, 7)))
    guide = GrayImage(rng.integers(0, 256, size=(5, 7)))
    out = wls_refine(initial, guide, params(lam=lam, tolerance=1e-10, max_iterations=500)).disparity.data
    assert out.min() >= initial.data.min() - 1e-4
    assert out.max() <= initial.data.max() + 1e-4
