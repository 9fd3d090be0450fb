"""Alternating localization: random init, device/anchor sweeps, restarts.

Neither the anchor walk nor the devices have known positions, so the
joint problem is solved by alternating the two closed-form subproblems:
hold anchors fixed and solve every device (position + gain), then hold
devices fixed and solve every anchor, optionally re-normalizing the
cloud so it neither explodes nor collapses. The scheme is local, so
``solve_map`` runs several random restarts and keeps the one with the
lowest consistency residual.

The solution is identifiable only up to a similarity transform
(rotation, translation, reflection, scale-with-gain); accuracy claims
belong downstream, after alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import AnchorEstimate, BoundingBox, DeviceEstimate, MapSolution, RangeMatrix, SolveConfig
from .solver import MIN_DEVICES_PER_ANCHOR, solve_anchor, solve_device, true_residual

RESCALE_BAND = (0.1, 10.0)  # rms radius band, relative to the target, that skips rescaling


class InsufficientData(ValueError):
    """Too few anchors or devices for the joint problem to be determined."""


@dataclass(frozen=True)
class SolveState:
    """One iterate of the alternating algorithm (arrays, walk order)."""

    anchors: np.ndarray  # (N, 3)
    devices: np.ndarray  # (M, 3)
    gains: np.ndarray  # (M,)
    device_unset: np.ndarray  # (M,) bool, True until first successful solve
    device_low_evidence: np.ndarray  # (M,) bool
    device_rank_deficient: np.ndarray  # (M,) bool
    anchor_rank_deficient: np.ndarray  # (N,) bool
    anchor_stale: np.ndarray  # (N,) bool, kept previous estimate this sweep
    iteration: int = 0
    residual_history: tuple[float, ...] = field(default_factory=tuple)
    normalize_skipped: bool = False  # coincident-anchor degeneracy seen

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    @property
    def n_devices(self) -> int:
        return self.devices.shape[0]


def default_init_box(config: SolveConfig) -> BoundingBox:
    side = 2.0 * config.target_rms_radius
    return BoundingBox((0.0, 0.0, 0.0), (side, side, side))


def initialize(ranges: RangeMatrix, config: SolveConfig, restart_index: int = 0) -> SolveState:
    """Random anchor cloud; devices parked at its centroid until solved.

    Deterministic given (config.rng_seed, restart_index).
    """
    rng = np.random.default_rng([config.rng_seed, restart_index])
    box = config.bbox if config.bbox is not None else default_init_box(config)
    anchors = box.sample(rng, ranges.n_anchors)
    centroid = anchors.mean(axis=0)
    devices = np.tile(centroid, (ranges.n_devices, 1))
    gains = np.ones(ranges.n_devices)
    state = SolveState(
        anchors=anchors,
        devices=devices,
        gains=gains,
        device_unset=np.ones(ranges.n_devices, dtype=bool),
        device_low_evidence=np.zeros(ranges.n_devices, dtype=bool),
        device_rank_deficient=np.zeros(ranges.n_devices, dtype=bool),
        anchor_rank_deficient=np.zeros(ranges.n_anchors, dtype=bool),
        anchor_stale=np.zeros(ranges.n_anchors, dtype=bool),
    )
    residual = true_residual(anchors, devices, gains, ranges)
    return replace(state, residual_history=(residual,))


def iterate_once(state: SolveState, ranges: RangeMatrix, config: SolveConfig) -> SolveState:
    """One sweep: all devices from anchors, all anchors from devices.

    Solver failures never abort the sweep; the affected entity keeps its
    previous estimate and is flagged. Devices below the measurement
    threshold stay where they are (centroid placement from init, until
    evidence arrives) and are excluded from the anchor sweep so their
    placeholder positions cannot poison anchor estimates.
    """
    anchors = state.anchors.copy()
    devices = state.devices.copy()
    gains = state.gains.copy()
    unset = state.device_unset.copy()
    low_evidence = state.device_low_evidence.copy()
    dev_deficient = state.device_rank_deficient.copy()
    anc_deficient = state.anchor_rank_deficient.copy()
    stale = state.anchor_stale.copy()

    for j in range(state.n_devices):
        mask = ranges.mask[:, j]
        if np.count_nonzero(mask) < config.min_anchors_per_device:
            low_evidence[j] = True
            continue
        fit = solve_device(anchors, ranges.ranges[:, j], mask, config)
        devices[j] = fit.position
        gains[j] = fit.gain
        unset[j] = False
        low_evidence[j] = False
        dev_deficient[j] = fit.rank_deficient

    usable_devices = ~(low_evidence | unset)
    for i in range(state.n_anchors):
        mask = ranges.mask[i, :] & usable_devices
        if np.count_nonzero(mask) < MIN_DEVICES_PER_ANCHOR:
            stale[i] = True
            continue
        fit = solve_anchor(devices, gains, ranges.ranges[i, :], mask, config)
        anchors[i] = fit.position
        stale[i] = False
        anc_deficient[i] = fit.rank_deficient

    new_state = SolveState(
        anchors=anchors,
        devices=devices,
        gains=gains,
        device_unset=unset,
        device_low_evidence=low_evidence,
        device_rank_deficient=dev_deficient,
        anchor_rank_deficient=anc_deficient,
        anchor_stale=stale,
        iteration=state.iteration + 1,
        residual_history=state.residual_history,
        normalize_skipped=state.normalize_skipped,
    )
    if config.normalization_enabled:
        new_state = normalize(new_state, config)
    residual = true_residual(new_state.anchors, new_state.devices, new_state.gains, ranges)
    return replace(new_state, residual_history=state.residual_history + (residual,))


def normalize(state: SolveState, config: SolveConfig) -> SolveState:
    """Gauge fix: center the anchor cloud, rescale if badly sized.

    Translation and rescale are applied to anchors and devices together,
    and gains absorb the scale factor, so measured-range consistency (and
    hence the residual of a consistent state) is preserved. All-coincident
    anchors make the radius undefined; the state is returned unchanged
    with a diagnostic flag.
    """
    centroid = state.anchors.mean(axis=0)
    centered = state.anchors - centroid
    rho = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    if rho == 0.0:
        return replace(state, normalize_skipped=True)
    anchors = centered
    devices = state.devices - centroid
    gains = state.gains
    lo, hi = RESCALE_BAND
    if not lo * config.target_rms_radius <= rho <= hi * config.target_rms_radius:
        factor = config.target_rms_radius / rho
        anchors = anchors * factor
        devices = devices * factor
        gains = gains * factor
    return replace(state, anchors=anchors, devices=devices, gains=gains)


def solve_map(ranges: RangeMatrix, config: SolveConfig = SolveConfig()) -> MapSolution:
    """Run the full multi-restart alternating solve on a range matrix.

    Each restart iterates until the relative change of the residual drops
    below ``config.rel_tol`` or ``config.max_iters`` is hit; the restart
    with the lowest final residual wins (ties to the lowest index). Pure
    function of (ranges, config), bit-reproducible for a fixed seed.
    """
    if ranges.n_anchors < 5 or ranges.n_devices < MIN_DEVICES_PER_ANCHOR:
        raise InsufficientData(
            f"need >= 5 anchors and >= {MIN_DEVICES_PER_ANCHOR} devices, "
            f"got {ranges.n_anchors} x {ranges.n_devices}")

    best: SolveState | None = None
    best_restart = -1
    for restart in range(config.restarts):
        state = initialize(ranges, config, restart)
        for _ in range(config.max_iters):
            state = iterate_once(state, ranges, config)
            prev, cur = state.residual_history[-2], state.residual_history[-1]
            if prev == 0.0 and cur == 0.0:
                break
            if abs(prev - cur) / max(prev, 1e-300) < config.rel_tol:
                break
        if best is None or state.residual_history[-1] < best.residual_history[-1]:
            best = state
            best_restart = restart

    anchor_ids = ranges.anchor_ids or tuple(f"a{i:03d}" for i in range(ranges.n_anchors))
    device_ids = ranges.device_ids or tuple(f"d{j:03d}" for j in range(ranges.n_devices))
    devices = tuple(
        DeviceEstimate(
            device_ids[j], best.devices[j], float(best.gains[j]),
            low_evidence=bool(best.device_low_evidence[j] | best.device_unset[j]),
            rank_deficient=bool(best.device_rank_deficient[j]),
        )
        for j in range(ranges.n_devices)
    )
    anchors = tuple(
        AnchorEstimate(anchor_ids[i], best.anchors[i],
                       rank_deficient=bool(best.anchor_rank_deficient[i]))
        for i in range(ranges.n_anchors)
    )
    return MapSolution(
        devices=devices,
        anchors=anchors,
        residual=float(best.residual_history[-1]),
        iterations_used=best.iteration,
        restart_index=best_restart,
        seed=config.rng_seed,
        residual_history=tuple(best.residual_history),
    )
