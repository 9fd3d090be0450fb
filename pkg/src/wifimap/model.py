"""Shared data model: measurements, range matrices, estimates, solutions.

All container types are treated as immutable after construction and are
safe to share across threads. File formats are versioned JSON / JSONL
documents carrying a ``mapifi_version`` field.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .pathloss import PathLossParams, rssi_to_range

SCHEMA_VERSION = 1
VERSION_KEY = "mapifi_version"

Packet = tuple[str, str, float]  # (anchor_id, device_mac, rssi_dbm)


class EmptyMeasurements(ValueError):
    """Raised when aggregation is asked to run on an empty packet list."""


class SchemaError(ValueError):
    """A JSON/JSONL document does not match the expected schema."""


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"position must be finite, got {a}")
    return a


@dataclass(frozen=True)
class BoundingBox:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounding box corners must be 3-vectors")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("bounding box corners must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate bounding box: {self.min_corner} !< {self.max_corner}")
        object.__setattr__(self, "min_corner", tuple(float(v) for v in lo))
        object.__setattr__(self, "max_corner", tuple(float(v) for v in hi))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.min_corner)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.max_corner)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def clamp(self, point) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=float), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, 3))

    def to_json(self) -> dict:
        return {"min_corner": list(self.min_corner), "max_corner": list(self.max_corner)}

    @classmethod
    def from_json(cls, obj: dict) -> "BoundingBox":
        try:
            return cls(tuple(obj["min_corner"]), tuple(obj["max_corner"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad bounding box object: {obj!r}") from exc


@dataclass(frozen=True)
class MeasurementSet:
    """Aggregated RSSI per (anchor, device) pair; missing pairs stay missing.

    ``entries`` maps (anchor_index, device_index) to (rssi_dbm, packet_count).
    Ids are kept in sorted order so the set is independent of packet order.
    """

    anchor_ids: tuple[str, ...]
    device_ids: tuple[str, ...]
    entries: dict[tuple[int, int], tuple[float, int]]

    def __post_init__(self):
        n, m = len(self.anchor_ids), len(self.device_ids)
        for (i, j), (rssi, count) in self.entries.items():
            if not (0 <= i < n and 0 <= j < m):
                raise ValueError(f"entry ({i},{j}) outside {n}x{m} id table")
            if count < 1:
                raise ValueError(f"packet_count must be >= 1, got {count} at ({i},{j})")
            if not math.isfinite(rssi):
                raise ValueError(f"aggregated RSSI must be finite at ({i},{j})")

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_ids)

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    def to_json(self) -> dict:
        return {
            VERSION_KEY: SCHEMA_VERSION,
            "anchor_ids": list(self.anchor_ids),
            "device_ids": list(self.device_ids),
            "entries": [
                {"anchor_index": i, "device_index": j, "rssi_dbm": rssi, "packet_count": count}
                for (i, j), (rssi, count) in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MeasurementSet":
        _check_version(obj)
        try:
            entries = {
                (int(e["anchor_index"]), int(e["device_index"])): (float(e["rssi_dbm"]), int(e["packet_count"]))
                for e in obj["entries"]
            }
            return cls(tuple(obj["anchor_ids"]), tuple(obj["device_ids"]), entries)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad measurement-set document: {exc}") from exc


@dataclass(frozen=True)
class RangeMatrix:
    """N x M uncalibrated ranges with a validity mask (True = measured)."""

    ranges: np.ndarray
    mask: np.ndarray
    anchor_ids: Optional[tuple[str, ...]] = None
    device_ids: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if ranges.ndim != 2 or ranges.shape != mask.shape:
            raise ValueError(f"ranges {ranges.shape} and mask {mask.shape} must be equal 2-D shapes")
        present = ranges[mask]
        if present.size and not (np.all(np.isfinite(present)) and np.all(present > 0)):
            raise ValueError("masked-present ranges must be finite and > 0")
        if self.anchor_ids is not None and len(self.anchor_ids) != ranges.shape[0]:
            raise ValueError("anchor_ids length does not match matrix")
        if self.device_ids is not None and len(self.device_ids) != ranges.shape[1]:
            raise ValueError("device_ids length does not match matrix")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "mask", mask)

    @property
    def n_anchors(self) -> int:
        return self.ranges.shape[0]

    @property
    def n_devices(self) -> int:
        return self.ranges.shape[1]


@dataclass(frozen=True)
class DeviceEstimate:
    device_id: str
    position: np.ndarray
    gain: float
    low_evidence: bool = False
    rank_deficient: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", _as_point(self.position))
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"gain must be finite and > 0, got {self.gain}")


@dataclass(frozen=True)
class AnchorEstimate:
    anchor_id: str
    position: np.ndarray
    rank_deficient: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", _as_point(self.position))


@dataclass(frozen=True)
class SolveConfig:
    """Knobs of the alternating solve; defaults favor reproducibility."""

    max_iters: int = 50
    rel_tol: float = 1e-8
    restarts: int = 20
    rng_seed: int = 0
    bbox: Optional[BoundingBox] = None
    gain_bounds: tuple[float, float] = (0.05, 20.0)
    normalization: Optional[bool] = None  # None = enabled iff no bbox
    target_rms_radius: float = 5.0
    reference_policy: str = "smallest-range"
    min_anchors_per_device: int = 5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        g_min, g_max = self.gain_bounds
        if not (0 < g_min < g_max):
            raise ValueError(f"need 0 < g_min < g_max, got {self.gain_bounds}")
        if self.reference_policy not in ("smallest-range", "index-zero"):
            raise ValueError(f"unknown reference_policy {self.reference_policy!r}")
        if self.target_rms_radius <= 0:
            raise ValueError("target_rms_radius must be > 0")

    @property
    def normalization_enabled(self) -> bool:
        if self.normalization is None:
            return self.bbox is None
        return self.normalization


@dataclass(frozen=True)
class MapSolution:
    devices: tuple[DeviceEstimate, ...]
    anchors: tuple[AnchorEstimate, ...]
    residual: float
    iterations_used: int
    restart_index: int
    seed: int
    residual_history: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be >= 0")

    def to_json(self) -> dict:
        return {
            VERSION_KEY: SCHEMA_VERSION,
            "devices": [
                {
                    "device_id": d.device_id,
                    "pos": [float(v) for v in d.position],
                    "gain": float(d.gain),
                    "low_evidence": d.low_evidence,
                }
                for d in self.devices
            ],
            "anchors": [
                {"anchor_id": a.anchor_id, "pos": [float(v) for v in a.position]}
                for a in self.anchors
            ],
            "residual": float(self.residual),
            "iterations_used": self.iterations_used,
            "restart_index": self.restart_index,
            "seed": self.seed,
            "residual_history": [float(r) for r in self.residual_history],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MapSolution":
        _check_version(obj)
        try:
            devices = tuple(
                DeviceEstimate(
                    d["device_id"], np.array(d["pos"], dtype=float), float(d["gain"]),
                    low_evidence=bool(d.get("low_evidence", False)),
                )
                for d in obj["devices"]
            )
            anchors = tuple(
                AnchorEstimate(a["anchor_id"], np.array(a["pos"], dtype=float))
                for a in obj["anchors"]
            )
            return cls(
                devices=devices,
                anchors=anchors,
                residual=float(obj["residual"]),
                iterations_used=int(obj["iterations_used"]),
                restart_index=int(obj["restart_index"]),
                seed=int(obj["seed"]),
                residual_history=tuple(float(r) for r in obj.get("residual_history", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad map document: {exc}") from exc


def aggregate(packets: Sequence[Packet]) -> MeasurementSet:
    """Collapse per-packet RSSI readings into one value per (anchor, device).

    The aggregate is the median RSSI in dB (robust to single corrupted
    packets); conversion to range happens once, afterwards, to avoid bias
    from averaging in the nonlinear range domain. Ids are sorted so the
    result does not depend on packet order.
    """
    packets = list(packets)
    if not packets:
        raise EmptyMeasurements("cannot aggregate an empty packet list")
    anchor_ids = tuple(sorted({p[0] for p in packets}))
    device_ids = tuple(sorted({p[1].lower() for p in packets}))
    a_index = {a: i for i, a in enumerate(anchor_ids)}
    d_index = {d: j for j, d in enumerate(device_ids)}
    per_pair: dict[tuple[int, int], list[float]] = {}
    for anchor_id, mac, rssi in packets:
        if not math.isfinite(rssi):
            raise ValueError(f"non-finite RSSI for ({anchor_id}, {mac})")
        per_pair.setdefault((a_index[anchor_id], d_index[mac.lower()]), []).append(float(rssi))
    entries = {
        key: (float(statistics.median(values)), len(values))
        for key, values in per_pair.items()
    }
    return MeasurementSet(anchor_ids, device_ids, entries)


def to_ranges(ms: MeasurementSet, params: PathLossParams = PathLossParams()) -> RangeMatrix:
    """Convert every present RSSI entry to an uncalibrated range."""
    n, m = ms.n_anchors, ms.n_devices
    ranges = np.zeros((n, m))
    mask = np.zeros((n, m), dtype=bool)
    for (i, j), (rssi, _count) in ms.entries.items():
        ranges[i, j] = rssi_to_range(rssi, params)
        mask[i, j] = True
    return RangeMatrix(ranges, mask, anchor_ids=ms.anchor_ids, device_ids=ms.device_ids)


# --- measurement JSONL ------------------------------------------------------

def write_measurements_jsonl(fp: IO[str], packets: Iterable[Packet]) -> None:
    for anchor_id, mac, rssi in packets:
        fp.write(json.dumps({"anchor_id": anchor_id, "device_mac": mac, "rssi_dbm": rssi}) + "\n")


def read_measurements_jsonl(fp: IO[str]) -> list[Packet]:
    packets: list[Packet] = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            packets.append((str(obj["anchor_id"]), str(obj["device_mac"]).lower(), float(obj["rssi_dbm"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad measurement record on line {lineno}: {exc}") from exc
    return packets


def _check_version(obj: dict) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"expected a JSON object, got {type(obj).__name__}")
    version = obj.get(VERSION_KEY)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported {VERSION_KEY}: {version!r} (expected {SCHEMA_VERSION})")


def dump_json_bytes(obj: dict) -> bytes:
    """Canonical JSON encoding used for all output files (deterministic)."""
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")
