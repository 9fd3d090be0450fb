"""Command-line pipeline: simulate / ingest / solve / eval / plot.

Every run is reproducible: seeds are defaulted, echoed in output
metadata, and the same argv plus the same input files produce
byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import alternator, evalmap, ingest, model, synth
from .pathloss import PathLossParams

EXIT_OK = 0
EXIT_ERROR = 1  # missing files, schema violations, bad inputs
EXIT_INSUFFICIENT = 2  # under-determined problem


def _parse_bbox(text: str) -> model.BoundingBox:
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            "bbox must be 'x0,y0,z0,x1,y1,z1' (six comma-separated numbers)")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad bbox value: {exc}") from exc
    try:
        return model.BoundingBox(tuple(vals[:3]), tuple(vals[3:]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wifimap",
        description="Reconstruct a 3-D map of Wi-Fi devices from walk-around RSSI measurements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario and its measurements")
    p.add_argument("--bbox", type=_parse_bbox, default=_parse_bbox("0,0,0,12,10,3"),
                   help="scene box as x0,y0,z0,x1,y1,z1 (default a 12x10x3 home)")
    p.add_argument("--devices", type=int, default=6, help="number of devices (default 6)")
    p.add_argument("--anchors", type=int, default=40, help="number of walk stops (default 40)")
    p.add_argument("--noise-db", type=float, default=0.0, help="per-packet RSSI noise sigma in dB")
    p.add_argument("--packets", type=int, default=1, help="packets per (anchor, device) pair")
    p.add_argument("--dropout", type=float, default=0.0, help="probability a pair is unmeasured")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="scenario JSON output path")
    p.add_argument("--measurements", type=Path, required=True, help="measurement JSONL output path")

    p = sub.add_parser("ingest", help="extract measurements from a monitor-mode pcap capture")
    p.add_argument("--pcap", type=Path, required=True)
    p.add_argument("--markers", type=Path, required=True, help="anchor interval JSONL sidecar")
    p.add_argument("--out", type=Path, required=True, help="measurement JSONL output path")

    p = sub.add_parser("solve", help="localize devices and anchors from measurements")
    p.add_argument("--measurements", type=Path, required=True)
    p.add_argument("--tx-dbm", type=float, default=PathLossParams().tx_dbm)
    p.add_argument("--gamma", type=float, default=PathLossParams().gamma)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bbox", type=_parse_bbox, default=None,
                   help="optional scene box constraint x0,y0,z0,x1,y1,z1")
    p.add_argument("--out", type=Path, required=True, help="map JSON output path")

    p = sub.add_parser("eval", help="score a solved map against a ground-truth scenario")
    p.add_argument("--map", dest="map_path", type=Path, required=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report JSON output path")

    p = sub.add_parser("plot", help="render a solved map as a 2-D SVG")
    p.add_argument("--map", dest="map_path", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="SVG output path")

    return parser


def _cmd_simulate(args) -> int:
    scenario = synth.generate_scenario(
        args.bbox, args.devices, synth.WalkSpec(n_anchors=args.anchors), seed=args.seed)
    batch = synth.forward_rssi(
        scenario, noise_sigma_db=args.noise_db, packets_per_pair=args.packets,
        dropout_prob=args.dropout, seed=args.seed)
    args.out.write_bytes(model.dump_json_bytes(scenario.to_json()))
    with open(args.measurements, "w") as fp:
        model.write_measurements_jsonl(fp, batch)
    print(f"wrote {args.out} and {args.measurements} "
          f"({len(batch)} packets, {batch.dropped_pairs} pairs dropped, seed={args.seed})")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    with open(args.markers) as fp:
        markers = ingest.read_markers_jsonl(fp)
    result = ingest.ingest_pcap(args.pcap.read_bytes(), markers)
    with open(args.out, "w") as fp:
        model.write_measurements_jsonl(fp, result.packets)
    print(f"wrote {args.out} ({len(result)} packets, counters={json.dumps(result.counters, sort_keys=True)})")
    return EXIT_OK


def _cmd_solve(args) -> int:
    with open(args.measurements) as fp:
        packets = model.read_measurements_jsonl(fp)
    ms = model.aggregate(packets)
    ranges = model.to_ranges(ms, PathLossParams(args.tx_dbm, args.gamma))
    config = model.SolveConfig(
        max_iters=args.iters, restarts=args.restarts, rng_seed=args.seed, bbox=args.bbox)
    solution = alternator.solve_map(ranges, config)
    args.out.write_bytes(evalmap.export_map(solution, "json"))
    print(f"wrote {args.out} (residual={solution.residual:.6g}, "
          f"restart={solution.restart_index}, iterations={solution.iterations_used}, seed={solution.seed})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    solution = model.MapSolution.from_json(json.loads(args.map_path.read_text()))
    scenario = synth.Scenario.from_json(json.loads(args.scenario.read_text()))
    report = evalmap.evaluate(solution, scenario)
    args.out.write_bytes(model.dump_json_bytes(report.to_json()))
    print(f"wrote {args.out} (device_rmse={report.aligned_device_rmse:.4g}, "
          f"anchor_rmse={report.aligned_anchor_rmse:.4g}, diameter={report.scene_diameter:.4g})")
    return EXIT_OK


def _cmd_plot(args) -> int:
    solution = model.MapSolution.from_json(json.loads(args.map_path.read_text()))
    args.out.write_bytes(evalmap.export_map(solution, "svg"))
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "ingest": _cmd_ingest,
    "solve": _cmd_solve,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
}


def run(argv=None) -> int:
    """Parse argv and execute one subcommand; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except alternator.InsufficientData as exc:
        print(f"wifimap: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except FileNotFoundError as exc:
        print(f"wifimap: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_ERROR
    except (model.SchemaError, ingest.IngestError, json.JSONDecodeError) as exc:
        print(f"wifimap: invalid input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"wifimap: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
