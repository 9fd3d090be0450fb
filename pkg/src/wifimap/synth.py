"""Ground-truth scenario generator and forward RF model.

This is the independent oracle used by the test suite: it builds a known
geometry (devices plus a winding measurement walk) and emits the packet
stream a measuring device would record, so reconstruction accuracy can be
judged against the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BoundingBox, SCHEMA_VERSION, SchemaError, VERSION_KEY, _check_version
from .pathloss import PathLossParams, range_to_rssi

COINCIDENT_FLOOR = 1e-6  # distance floor; RSSI diverges at zero distance

DEFAULT_GAIN_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class WalkSpec:
    """Shape of the synthetic measurement walk."""

    n_anchors: int = 40
    waypoints: int = 6
    height_amplitude: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_anchors < 5:
            raise ValueError(f"n_anchors must be >= 5, got {self.n_anchors}")
        if self.waypoints < 2:
            raise ValueError(f"waypoints must be >= 2, got {self.waypoints}")
        if self.height_amplitude < 0:
            raise ValueError("height_amplitude must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """Ground truth geometry: device positions/gains and the anchor path."""

    bbox: BoundingBox
    device_ids: tuple[str, ...]
    device_positions: np.ndarray  # (M, 3)
    device_gains: np.ndarray  # (M,)
    anchor_path: np.ndarray  # (N, 3), walk order
    params: PathLossParams = PathLossParams()

    def __post_init__(self):
        positions = np.asarray(self.device_positions, dtype=float).reshape(-1, 3)
        gains = np.asarray(self.device_gains, dtype=float).reshape(-1)
        path = np.asarray(self.anchor_path, dtype=float).reshape(-1, 3)
        if len(self.device_ids) != len(positions) or len(gains) != len(positions):
            raise ValueError("device ids, positions and gains must align")
        if np.any(gains <= 0):
            raise ValueError("device gains must be > 0")
        for p in np.vstack([positions, path]):
            if not self.bbox.contains(p):
                raise ValueError(f"point {p} outside scenario bounding box")
        object.__setattr__(self, "device_positions", positions)
        object.__setattr__(self, "device_gains", gains)
        object.__setattr__(self, "anchor_path", path)

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_path)

    @property
    def anchor_ids(self) -> tuple[str, ...]:
        return tuple(anchor_label(i) for i in range(self.n_anchors))

    @property
    def diameter(self) -> float:
        pts = np.vstack([self.device_positions, self.anchor_path])
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff**2, axis=2))))

    def to_json(self) -> dict:
        return {
            VERSION_KEY: SCHEMA_VERSION,
            "bbox": self.bbox.to_json(),
            "devices": [
                {"mac": mac, "pos": [float(v) for v in pos], "gain": float(g)}
                for mac, pos, g in zip(self.device_ids, self.device_positions, self.device_gains)
            ],
            "anchors": [[float(v) for v in p] for p in self.anchor_path],
            "pathloss": {"tx_dbm": self.params.tx_dbm, "gamma": self.params.gamma},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        _check_version(obj)
        try:
            return cls(
                bbox=BoundingBox.from_json(obj["bbox"]),
                device_ids=tuple(d["mac"] for d in obj["devices"]),
                device_positions=np.array([d["pos"] for d in obj["devices"]], dtype=float),
                device_gains=np.array([d["gain"] for d in obj["devices"]], dtype=float),
                anchor_path=np.array(obj["anchors"], dtype=float),
                params=PathLossParams(float(obj["pathloss"]["tx_dbm"]), float(obj["pathloss"]["gamma"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad scenario document: {exc}") from exc


def anchor_label(i: int) -> str:
    """Walk-order anchor id; zero padded so lexicographic order = walk order."""
    if not 0 <= i < 1000:
        raise ValueError("anchor index out of the supported 0..999 range")
    return f"a{i:03d}"


def device_mac(j: int) -> str:
    """Deterministic locally-administered MAC for synthetic device j."""
    if not 0 <= j < 1 << 16:
        raise ValueError("device index out of range")
    return f"02:00:00:00:{(j >> 8) & 0xFF:02x}:{j & 0xFF:02x}"


@dataclass(frozen=True)
class PacketBatch:
    """Forward-model output: packets plus generation metadata.

    Iterates as the raw packet list so it can feed ``aggregate`` directly.
    """

    packets: tuple[tuple[str, str, float], ...]
    floored_pairs: tuple[tuple[str, str], ...] = field(default_factory=tuple)
    dropped_pairs: int = 0

    def __iter__(self):
        return iter(self.packets)

    def __len__(self):
        return len(self.packets)


def generate_scenario(bbox: BoundingBox, n_devices: int, walk: WalkSpec = WalkSpec(),
                      gain_range: tuple[float, float] = DEFAULT_GAIN_RANGE,
                      seed: int = 0,
                      params: PathLossParams = PathLossParams()) -> Scenario:
    """Draw a random scenario: devices in the box, a winding anchor walk.

    Devices are uniform in the box, gains log-uniform in ``gain_range``.
    The walk visits random interior waypoints piecewise-linearly, sampled
    at ``walk.n_anchors`` evenly spaced arclength stops, with a sinusoidal
    height modulation standing in for the user raising and lowering the
    measuring device. Fully deterministic given ``seed`` and ``walk``.
    """
    if n_devices < 4:
        raise ValueError(f"n_devices must be >= 4, got {n_devices}")
    lo_gain, hi_gain = gain_range
    if not (0 < lo_gain <= hi_gain):
        raise ValueError(f"bad gain_range {gain_range}")
    rng = np.random.default_rng([seed, walk.rng_seed])

    device_positions = bbox.sample(rng, n_devices)
    gains = np.exp(rng.uniform(math.log(lo_gain), math.log(hi_gain), size=n_devices))

    extent = bbox.hi - bbox.lo
    amplitude = min(walk.height_amplitude, 0.4 * extent[2])
    margin = 0.05 * extent + np.array([0.0, 0.0, amplitude])
    inner = BoundingBox(tuple(bbox.lo + margin), tuple(bbox.hi - margin))
    waypoints = inner.sample(rng, walk.waypoints)

    seg_lengths = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    total = float(np.sum(seg_lengths))
    if total <= 0:
        raise ValueError("degenerate walk: waypoints coincide")
    cum = np.concatenate([[0.0], np.cumsum(seg_lengths)])
    stops = np.linspace(0.0, total, walk.n_anchors)
    path = np.column_stack([np.interp(stops, cum, waypoints[:, k]) for k in range(3)])
    path[:, 2] += amplitude * np.sin(2.0 * np.pi * 3.0 * stops / total)
    path = np.clip(path, bbox.lo, bbox.hi)

    return Scenario(
        bbox=bbox,
        device_ids=tuple(device_mac(j) for j in range(n_devices)),
        device_positions=device_positions,
        device_gains=gains,
        anchor_path=path,
        params=params,
    )


def forward_rssi(scenario: Scenario, noise_sigma_db: float = 0.0,
                 packets_per_pair: int = 1, dropout_prob: float = 0.0,
                 seed: int = 0) -> PacketBatch:
    """Emit the RSSI packet stream the measuring device would record.

    Each (anchor, device) pair transmits ``packets_per_pair`` packets at
    the path-loss RSSI for distance/gain, plus i.i.d. Gaussian dB noise;
    whole pairs are dropped with probability ``dropout_prob``. Coincident
    anchor/device pairs are emitted at a floor distance (RSSI would be
    infinite) and flagged in the batch metadata.
    """
    if noise_sigma_db < 0:
        raise ValueError("noise_sigma_db must be >= 0")
    if not 0 <= dropout_prob < 1:
        raise ValueError("dropout_prob must be in [0, 1)")
    if packets_per_pair < 1:
        raise ValueError("packets_per_pair must be >= 1")
    rng = np.random.default_rng([seed])
    anchor_ids = scenario.anchor_ids
    packets: list[tuple[str, str, float]] = []
    floored: list[tuple[str, str]] = []
    dropped = 0
    for i, anchor in enumerate(scenario.anchor_path):
        for j, mac in enumerate(scenario.device_ids):
            if dropout_prob > 0 and rng.random() < dropout_prob:
                dropped += 1
                continue
            distance = float(np.linalg.norm(scenario.device_positions[j] - anchor))
            if distance < COINCIDENT_FLOOR:
                distance = COINCIDENT_FLOOR
                floored.append((anchor_ids[i], mac))
            base = range_to_rssi(distance / scenario.device_gains[j], scenario.params)
            if noise_sigma_db > 0:
                noise = rng.normal(0.0, noise_sigma_db, size=packets_per_pair)
            else:
                noise = np.zeros(packets_per_pair)
            packets.extend((anchor_ids[i], mac, float(base + eps)) for eps in noise)
    return PacketBatch(tuple(packets), tuple(floored), dropped)
