"""
Semi-Global Block Matching
==========================

Pixel-wise SGBM on a rectified gray stereo pair:
1. Matching cost: Birchfield-Tomasi on intensities and on Sobel magnitudes,
   blended with the integer weight eta
2. Aggregation along 8 scanline directions, S(p, d) = sum_r L_r(p, d)
3. Winner-take-all selection + parabolic sub-pixel refinement
4. Post-processing: uniqueness check -> left-right check -> speckle filter

All costs are integers, so S and every filter decision are identical for
any evaluation order or worker count.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from app.img import (
    DimensionError,
    DisparityMap,
    GradientImage,
    GrayImage,
    INVALID_DISPARITY,
    require_same_shape,
    sobel_magnitude,
)
from app.params import MatchParams, ParameterSet
from app.wls import wls_refine

logger = logging.getLogger(__name__)

# Cost assigned when x - d falls left of the image
OUT_OF_RANGE_COST = 255

COST_DTYPE = np.int32


# ============================================================================
# DATA STRUCTURES
# ============================================================================

class Direction(Enum):
    """Aggregation directions as (dx, dy) steps; p - r is the predecessor."""
    EAST = (1, 0)
    WEST = (-1, 0)
    SOUTH = (0, 1)
    NORTH = (0, -1)
    SOUTH_EAST = (1, 1)
    NORTH_WEST = (-1, -1)
    SOUTH_WEST = (-1, 1)
    NORTH_EAST = (1, -1)


@dataclass(frozen=True)
class CostVolume:
    """Non-negative integer costs indexed (y, x, d)."""
    costs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.costs)
        if arr.ndim != 3:
            raise DimensionError(f"CostVolume must be 3-D (y, x, d), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("CostVolume costs must be integers")
        if arr.size and arr.min() < 0:
            raise ValueError("CostVolume costs must be non-negative")
        object.__setattr__(self, "costs", arr)

    @property
    def height(self) -> int:
        return int(self.costs.shape[0])

    @property
    def width(self) -> int:
        return int(self.costs.shape[1])

    @property
    def disparities(self) -> int:
        return int(self.costs.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.costs.shape


@dataclass
class PipelineResult:
    """Output of the full SGBM + WLS pipeline."""
    disparity: DisparityMap          # final (post-WLS) map
    raw_disparity: DisparityMap      # post-filter, pre-WLS map
    wls_converged: bool
    wls_iterations: int
    timings: Dict[str, float] = field(default_factory=dict)  # seconds per stage


# ============================================================================
# MATCHING COST
# ============================================================================

def _bt_cost(left: np.ndarray, right: np.ndarray, d_range: int) -> CostVolume:
    if left.shape != right.shape:
        raise DimensionError(f"left {left.shape} and right {right.shape} differ in size")
    if d_range < 2:
        raise ValueError(f"disparity range must be >= 2, got {d_range}")

    height, width = left.shape
    il = left.astype(COST_DTYPE)
    ir = right.astype(COST_DTYPE)

    # I_r(q-1), I_r(q+1) with edge clamping
    ir_prev = np.concatenate([ir[:, :1], ir[:, :-1]], axis=1)
    ir_next = np.concatenate([ir[:, 1:], ir[:, -1:]], axis=1)
    i_max = np.maximum(np.maximum(ir_prev, ir), ir_next)
    i_min = np.minimum(np.minimum(ir_prev, ir), ir_next)

    costs = np.full((height, width, d_range), OUT_OF_RANGE_COST, dtype=COST_DTYPE)
    for d in range(min(d_range, width)):
        il_d = il[:, d:]
        above = il_d - i_max[:, :width - d]
        below = i_min[:, :width - d] - il_d
        costs[:, d:, d] = np.maximum(0, np.maximum(above, below))
    return CostVolume(costs)


def bt_gray_cost(left: GrayImage, right: GrayImage, d_range: int) -> CostVolume:
    """Birchfield-Tomasi cost on intensities; x - d < 0 costs OUT_OF_RANGE_COST."""
    return _bt_cost(left.data, right.data, d_range)


def bt_grad_cost(left_grad: GradientImage, right_grad: GradientImage, d_range: int) -> CostVolume:
    """Birchfield-Tomasi cost on gradient magnitudes."""
    return _bt_cost(left_grad.data, right_grad.data, d_range)


def combine_costs(gray: CostVolume, grad: CostVolume, eta: int) -> CostVolume:
    """C = floor(((100 - eta) * C_gray + eta * C_grad) / 100)."""
    if gray.shape != grad.shape:
        raise DimensionError(f"cost volumes differ in shape: {gray.shape} vs {grad.shape}")
    if not 1 <= eta <= 100:
        raise ValueError(f"eta must lie in [1, 100], got {eta}")
    blended = (100 - eta) * gray.costs.astype(COST_DTYPE) + eta * grad.costs.astype(COST_DTYPE)
    return CostVolume(blended // 100)


# ============================================================================
# AGGREGATION
# ============================================================================

def _path_step(prev: np.ndarray, alpha: int, beta: int) -> np.ndarray:
    """
    min{L(p-r, d), L(p-r, d±1) + alpha, min_k L(p-r, k) + beta} - min_k L(p-r, k)
    for a batch of predecessors `prev` of shape (n, D).
    """
    floor = prev.min(axis=1, keepdims=True)
    best = prev.copy()
    np.minimum(best[:, 1:], prev[:, :-1] + alpha, out=best[:, 1:])
    np.minimum(best[:, :-1], prev[:, 1:] + alpha, out=best[:, :-1])
    np.minimum(best, floor + beta, out=best)
    return best - floor


def aggregate_path(cost: CostVolume, direction: Direction, alpha: int, beta: int) -> CostVolume:
    """
    L_r along one direction. Pixels without an in-image predecessor start
    the path with L_r = C.
    """
    c = cost.costs.astype(COST_DTYPE, copy=False)
    height, width, _ = c.shape
    dx, dy = direction.value
    agg = np.empty_like(c)

    if dx != 0:
        # walk columns; each column is a batch of rows whose predecessors are
        # one column back and dy rows up/down
        columns = range(width) if dx > 0 else range(width - 1, -1, -1)
        for step, x in enumerate(columns):
            if step == 0:
                agg[:, x] = c[:, x]
                continue
            prev_col = agg[:, x - dx]
            if dy == 0:
                agg[:, x] = c[:, x] + _path_step(prev_col, alpha, beta)
            elif dy > 0:
                agg[0, x] = c[0, x]
                agg[1:, x] = c[1:, x] + _path_step(prev_col[:-1], alpha, beta)
            else:
                agg[-1, x] = c[-1, x]
                agg[:-1, x] = c[:-1, x] + _path_step(prev_col[1:], alpha, beta)
    else:
        rows = range(height) if dy > 0 else range(height - 1, -1, -1)
        for step, y in enumerate(rows):
            if step == 0:
                agg[y] = c[y]
                continue
            agg[y] = c[y] + _path_step(agg[y - dy], alpha, beta)

    return CostVolume(agg)


def aggregate_all(cost: CostVolume, alpha: int, beta: int, workers: int = 1) -> CostVolume:
    """S(p, d) = sum of L_r over the 8 directions."""
    directions = list(Direction)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(directions))) as pool:
            paths = list(pool.map(lambda r: aggregate_path(cost, r, alpha, beta), directions))
    else:
        paths = [aggregate_path(cost, r, alpha, beta) for r in directions]

    total = np.zeros(cost.shape, dtype=np.int64)
    for path in paths:
        total += path.costs
    return CostVolume(total)


# ============================================================================
# DISPARITY SELECTION
# ============================================================================

def select_disparity(aggregated: CostVolume) -> DisparityMap:
    """Winner-take-all; ties go to the smallest disparity."""
    return DisparityMap(np.argmin(aggregated.costs, axis=2).astype(np.float64))


def subpixel_refine(aggregated: CostVolume, d_star: DisparityMap) -> DisparityMap:
    """
    d_sub = d* + (S(d*-1) - S(d*+1)) / (2 * (S(d*-1) + S(d*+1) - 2 S(d*)))
    where 0 < d* < d_max and the denominator is positive; d* elsewhere.
    """
    s = aggregated.costs.astype(np.float64)
    d_max = aggregated.disparities - 1
    valid = d_star.valid_mask
    d_int = np.where(valid, d_star.data, 0).astype(np.int64)

    inner = valid & (d_int > 0) & (d_int < d_max)
    lo = np.clip(d_int - 1, 0, d_max)
    hi = np.clip(d_int + 1, 0, d_max)
    s_lo = np.take_along_axis(s, lo[..., None], axis=2)[..., 0]
    s_mid = np.take_along_axis(s, d_int[..., None], axis=2)[..., 0]
    s_hi = np.take_along_axis(s, hi[..., None], axis=2)[..., 0]

    denom = s_lo + s_hi - 2.0 * s_mid
    use = inner & (denom > 0)
    offset = np.zeros_like(s_mid)
    offset[use] = (s_lo[use] - s_hi[use]) / (2.0 * denom[use])

    return DisparityMap(np.where(valid, d_star.data + offset, INVALID_DISPARITY))


# ============================================================================
# POST-PROCESSING
# ============================================================================

def uniqueness_filter(aggregated: CostVolume, disparity: DisparityMap, gamma: int) -> DisparityMap:
    """
    Invalidates pixels where S_2 - S_1 < (gamma / 100) * S_1, with S_1 the
    minimum and S_2 the best cost at disparities not adjacent to the minimum.
    """
    s = aggregated.costs.astype(np.int64)
    d_best = np.argmin(s, axis=2)
    s1 = np.take_along_axis(s, d_best[..., None], axis=2)[..., 0]

    candidates = np.arange(aggregated.disparities)
    far = np.abs(candidates[None, None, :] - d_best[..., None]) > 1
    has_far = far.any(axis=2)
    s2 = np.where(far, s, np.iinfo(np.int64).max).min(axis=2)
    s2 = np.where(has_far, s2, s1)

    unique = ~has_far | (100 * (s2 - s1) >= gamma * s1)
    return disparity.with_invalid(disparity.valid_mask & ~unique)


def right_disparity(aggregated: CostVolume) -> np.ndarray:
    """D_R(x, y) = argmin_d S(x + d, y, d), reprojected from the left volume."""
    s = aggregated.costs
    height, width, n_disp = s.shape
    reprojected = np.full(s.shape, np.iinfo(np.int64).max, dtype=np.int64)
    for d in range(min(n_disp, width)):
        reprojected[:, :width - d, d] = s[:, d:, d]
    return np.argmin(reprojected, axis=2)


def lr_consistency(left_d: DisparityMap, aggregated: CostVolume, delta_lr: int) -> DisparityMap:
    """
    Invalidates pixels with |D_L(x, y) - D_R(x - D_L(x, y), y)| > delta_lr or
    whose projection falls outside the image.
    """
    d_right = right_disparity(aggregated)
    height, width = left_d.shape
    valid = left_d.valid_mask
    d_left = left_d.data

    xs = np.arange(width)[None, :].repeat(height, axis=0)
    ys = np.arange(height)[:, None].repeat(width, axis=1)
    x_right = xs - np.floor(np.where(valid, d_left, 0.0) + 0.5).astype(np.int64)
    inside = x_right >= 0

    matched = d_right[ys, np.clip(x_right, 0, width - 1)]
    consistent = inside & (np.abs(d_left - matched) <= delta_lr)
    return left_d.with_invalid(valid & ~consistent)


def speckle_filter(disparity: DisparityMap, window: int, delta: float) -> DisparityMap:
    """
    Invalidates 4-connected regions smaller than `window` pixels, where two
    neighbours belong to one region when |d(p) - d(q)| <= delta.
    """
    height, width = disparity.shape
    valid = disparity.valid_mask
    data = disparity.data
    index = np.arange(height * width).reshape(height, width)

    horizontal = valid[:, :-1] & valid[:, 1:] & (np.abs(data[:, :-1] - data[:, 1:]) <= delta)
    vertical = valid[:-1, :] & valid[1:, :] & (np.abs(data[:-1, :] - data[1:, :]) <= delta)
    rows = np.concatenate([index[:, :-1][horizontal], index[:-1, :][vertical]])
    cols = np.concatenate([index[:, 1:][horizontal], index[1:, :][vertical]])

    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(height * width,) * 2)
    n_regions, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels[valid.ravel()], minlength=n_regions)
    small = valid & (sizes[labels] < window).reshape(height, width)

    if small.any():
        logger.debug(f"🧹 Speckle filter removed {int(small.sum())} pixels")
    return disparity.with_invalid(small)


# ============================================================================
# PIPELINE
# ============================================================================

def run_sgbm(
    left: GrayImage,
    right: GrayImage,
    params: MatchParams,
    workers: int = 1,
    timings: Optional[Dict[str, float]] = None,
) -> DisparityMap:
    """
    sobel -> BT costs -> combine -> aggregate -> WTA -> sub-pixel ->
    uniqueness -> LR -> speckle.
    """
    require_same_shape(left, right)
    timings = timings if timings is not None else {}
    mark = time.perf_counter()

    def lap(stage: str):
        nonlocal mark
        now = time.perf_counter()
        timings[stage] = now - mark
        mark = now

    n_disp = params.num_disparities
    gray = bt_gray_cost(left, right, n_disp)
    grad = bt_grad_cost(sobel_magnitude(left), sobel_magnitude(right), n_disp)
    cost = combine_costs(gray, grad, params.eta)
    lap("cost")

    aggregated = aggregate_all(cost, params.alpha, params.beta, workers=workers)
    lap("aggregate")

    disparity = subpixel_refine(aggregated, select_disparity(aggregated))
    lap("select")

    disparity = uniqueness_filter(aggregated, disparity, params.gamma)
    disparity = lr_consistency(disparity, aggregated, params.delta_lr)
    disparity = speckle_filter(disparity, params.speckle_window, params.speckle_range)
    lap("filter")

    logger.debug(
        f"⏱️  SGBM {left.width}x{left.height}x{n_disp}: "
        + ", ".join(f"{k}={v * 1000:.1f}ms" for k, v in timings.items())
        + f", valid={disparity.valid_fraction() * 100:.1f}%"
    )
    return disparity


def run_pipeline(left: GrayImage, right: GrayImage, params: ParameterSet, workers: int = 1) -> PipelineResult:
    """SGBM followed by WLS refinement guided by the left image."""
    timings: Dict[str, float] = {}
    raw = run_sgbm(left, right, params.match, workers=workers, timings=timings)

    start = time.perf_counter()
    refined = wls_refine(raw, left, params.wls)
    timings["wls"] = time.perf_counter() - start

    return PipelineResult(
        disparity=refined.disparity,
        raw_disparity=raw,
        wls_converged=refined.converged,
        wls_iterations=refined.iterations,
        timings=timings,
    )
