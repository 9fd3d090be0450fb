"""Least-squares subproblem solvers for range-based localization.

A device seen from K known anchors gives K quadratic consistency
equations ``||d - a_i||^2 = (g * r_i)^2`` in the device position d and
its gain g. Subtracting a reference equation from the others cancels
``||d||^2``, leaving K-1 equations that are linear in (d, g^2):

    2 (a_ref - a_i)^T d + (r_ref^2 - r_i^2) g^2 = ||a_ref||^2 - ||a_i||^2

The complementary problem (anchor position from known devices) is the
same construction with g_j known, hence 3 unknowns. Both are solved via
an SVD-backed least squares (orthogonal factorization, minimum-norm on
rank deficiency), never via normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RangeMatrix, SolveConfig

MIN_DEVICES_PER_ANCHOR = 4  # 3 unknowns need >= 3 independent differenced equations

# Relative singular-value cutoff for the least-squares solves. Directions of
# the differenced system below this threshold are treated as degenerate and
# left at minimum norm instead of being amplified.
LSTSQ_RCOND = 1e-10


class TooFewAnchors(ValueError):
    """Device solve attempted with fewer measured anchors than required."""


class TooFewDevices(ValueError):
    """Anchor solve attempted with fewer than MIN_DEVICES_PER_ANCHOR devices."""


@dataclass(frozen=True)
class LinearSystem:
    """Differenced linear equations plus the indices that produced them."""

    matrix: np.ndarray
    rhs: np.ndarray
    reference: int
    provenance: tuple[int, ...]


@dataclass(frozen=True)
class DeviceFit:
    position: np.ndarray
    gain: float
    rank_deficient: bool = False
    gain_clamped: bool = False


@dataclass(frozen=True)
class AnchorFit:
    position: np.ndarray
    rank_deficient: bool = False


def _pick_reference(ranges: np.ndarray, policy: str) -> int:
    # Smallest range = strongest signal = smallest expected range error.
    if policy == "index-zero":
        return 0
    return int(np.argmin(ranges))


def build_device_system(anchors: np.ndarray, ranges: np.ndarray,
                        indices: np.ndarray, policy: str) -> LinearSystem:
    ref_local = _pick_reference(ranges, policy)
    a_ref, r_ref = anchors[ref_local], ranges[ref_local]
    others = np.arange(len(ranges)) != ref_local
    a_i, r_i = anchors[others], ranges[others]
    matrix = np.hstack([2.0 * (a_ref - a_i), (r_ref**2 - r_i**2)[:, None]])
    rhs = np.sum(a_ref**2) - np.sum(a_i**2, axis=1)
    return LinearSystem(matrix, rhs, int(indices[ref_local]), tuple(int(k) for k in indices[others]))


def build_anchor_system(devices: np.ndarray, gains: np.ndarray, ranges: np.ndarray,
                        indices: np.ndarray, policy: str) -> LinearSystem:
    ref_local = _pick_reference(ranges, policy)
    d_ref, s_ref = devices[ref_local], (gains[ref_local] * ranges[ref_local]) ** 2
    others = np.arange(len(ranges)) != ref_local
    d_j = devices[others]
    s_j = (gains[others] * ranges[others]) ** 2
    matrix = 2.0 * (d_ref - d_j)
    rhs = np.sum(d_ref**2) - np.sum(d_j**2, axis=1) - (s_ref - s_j)
    return LinearSystem(matrix, rhs, int(indices[ref_local]), tuple(int(k) for k in indices[others]))


def solve_device(anchor_positions, ranges, mask=None,
                 config: SolveConfig = SolveConfig()) -> DeviceFit:
    """Estimate one device's position and gain from known anchor positions.

    ``anchor_positions`` is (N, 3); ``ranges`` is the per-anchor measured
    range with an optional boolean ``mask`` selecting which entries exist.
    On exact data with >= 5 anchors in general position this recovers the
    true (position, gain). Rank-deficient geometry (e.g. collinear anchors)
    yields the minimum-norm solution with ``rank_deficient`` set instead of
    an error, so an outer loop can ride past transient degeneracy.
    """
    anchor_positions = np.asarray(anchor_positions, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    if mask is None:
        mask = np.ones(len(ranges), dtype=bool)
    indices = np.flatnonzero(mask)
    if len(indices) < config.min_anchors_per_device:
        raise TooFewAnchors(
            f"{len(indices)} measured anchors < required {config.min_anchors_per_device}")

    system = build_device_system(anchor_positions[indices], ranges[indices],
                                 indices, config.reference_policy)
    solution, _, rank, _ = np.linalg.lstsq(system.matrix, system.rhs, rcond=LSTSQ_RCOND)
    rank_deficient = rank < 4
    position, g_sq = solution[:3], float(solution[3])

    g_min, g_max = config.gain_bounds
    g_sq_clamped = float(np.clip(g_sq, g_min**2, g_max**2))
    gain_clamped = g_sq_clamped != g_sq
    if gain_clamped:
        # Re-solve for the position alone with the gain pinned at its bound.
        matrix = system.matrix[:, :3]
        rhs = system.rhs - system.matrix[:, 3] * g_sq_clamped
        position, _, rank3, _ = np.linalg.lstsq(matrix, rhs, rcond=LSTSQ_RCOND)
        rank_deficient = rank_deficient or rank3 < 3
    gain = float(np.sqrt(g_sq_clamped))

    if config.bbox is not None:
        position = config.bbox.clamp(position)
    return DeviceFit(position, gain, rank_deficient=bool(rank_deficient), gain_clamped=gain_clamped)


def solve_anchor(device_positions, gains, ranges, mask=None,
                 config: SolveConfig = SolveConfig()) -> AnchorFit:
    """Estimate one anchor's position from known device positions and gains."""
    device_positions = np.asarray(device_positions, dtype=float)
    gains = np.asarray(gains, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    if mask is None:
        mask = np.ones(len(ranges), dtype=bool)
    indices = np.flatnonzero(mask)
    if len(indices) < MIN_DEVICES_PER_ANCHOR:
        raise TooFewDevices(
            f"{len(indices)} measured devices < required {MIN_DEVICES_PER_ANCHOR}")

    system = build_anchor_system(device_positions[indices], gains[indices], ranges[indices],
                                 indices, config.reference_policy)
    position, _, rank, _ = np.linalg.lstsq(system.matrix, system.rhs, rcond=LSTSQ_RCOND)
    if config.bbox is not None:
        position = config.bbox.clamp(position)
    return AnchorFit(position, rank_deficient=bool(rank < 3))


def true_residual(anchor_positions, device_positions, gains, ranges: RangeMatrix) -> float:
    """Mean squared violation of the quadratic consistency equations.

    Per measured pair the violation is ``||d_j - a_i||^2 - g_j^2 r_ij^2``;
    the residual is the mean of its square over measured pairs. Zero exactly
    on consistent configurations, strictly positive off them.
    """
    anchors = np.asarray(anchor_positions, dtype=float)
    devices = np.asarray(device_positions, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if anchors.shape[0] != ranges.n_anchors or devices.shape[0] != ranges.n_devices:
        raise ValueError("estimate dimensions do not match the range matrix")
    n_measured = int(np.count_nonzero(ranges.mask))
    if n_measured == 0:
        return 0.0
    sq_dist = np.sum((anchors[:, None, :] - devices[None, :, :]) ** 2, axis=2)
    violation = sq_dist - (gains**2)[None, :] * ranges.ranges**2
    return float(np.sum(np.where(ranges.mask, violation, 0.0) ** 2) / n_measured)
