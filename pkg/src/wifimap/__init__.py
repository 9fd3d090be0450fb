"""wifimap: locate a home's Wi-Fi devices from walk-around RSSI measurements.

Pipeline: capture (or simulate) per-packet RSSI readings grouped by walk
stop ("anchor"), convert signal strengths to uncalibrated ranges with a
path-loss model, then alternately solve device and anchor positions by
linearized least squares until the map settles. Maps are recovered up to
rotation, translation, reflection and scale.
"""

from .alternator import InsufficientData, SolveState, initialize, iterate_once, normalize, solve_map
from .evalmap import EvalReport, SimilarityTransform, evaluate, export_map, procrustes_align
from .ingest import AnchorMarkers, FrameInfo, RadiotapInfo, ingest_pcap, parse_frame, parse_radiotap
from .model import (
    AnchorEstimate,
    BoundingBox,
    DeviceEstimate,
    MapSolution,
    MeasurementSet,
    RangeMatrix,
    SolveConfig,
    aggregate,
    to_ranges,
)
from .pathloss import PathLossParams, range_to_rssi, rssi_to_range
from .solver import solve_anchor, solve_device, true_residual
from .synth import PacketBatch, Scenario, WalkSpec, forward_rssi, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "AnchorEstimate",
    "AnchorMarkers",
    "BoundingBox",
    "DeviceEstimate",
    "EvalReport",
    "FrameInfo",
    "InsufficientData",
    "MapSolution",
    "MeasurementSet",
    "PacketBatch",
    "PathLossParams",
    "RadiotapInfo",
    "RangeMatrix",
    "Scenario",
    "SimilarityTransform",
    "SolveConfig",
    "SolveState",
    "WalkSpec",
    "aggregate",
    "evaluate",
    "export_map",
    "forward_rssi",
    "generate_scenario",
    "ingest_pcap",
    "initialize",
    "iterate_once",
    "normalize",
    "parse_frame",
    "parse_radiotap",
    "procrustes_align",
    "range_to_rssi",
    "rssi_to_range",
    "solve_anchor",
    "solve_device",
    "solve_map",
    "to_ranges",
    "true_residual",
]
