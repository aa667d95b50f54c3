"""Command line workflow around the mapping and localization pipelines.

Subcommands: ``simulate`` writes a dataset to disk, ``gcslam`` builds a map
from a simulated traversal, ``sfloc`` localizes a revisit traversal against
a map, ``eval`` scores artifacts against ground truth, ``plot`` renders a
map file, and ``run-all`` chains the whole workflow for one seed.

Exit codes: 0 on success, 2 for configuration problems (unknown preset,
invalid config file or value), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .gcslam import GcslamConfig, GcslamResult, KeyframeLogEntry, export_map, run_gcslam
from .geometry import Pose2, Vec2
from .metrics import (
    adjacent_error,
    ate_rmse,
    match_frames,
    nees,
    row_orientation_error,
    slot_width_error,
    trajectory_length,
)
from .plotting import map_figure, save_svg, trajectory_figure
from .presets import (
    PRESETS,
    ConfigError,
    ExperimentPreset,
    apply_overrides,
    get_preset,
    load_overrides,
    simulate_dataset,
)
from .sfloc import IcpDiagnostic, SflocResult, run_localization
from .simworld import Dataset, read_pose_csv, save_dataset, write_pose_csv
from .slots import MapDocument, load_map, save_map

FALSE_SLOT_DISTANCE = 0.5


def _load_preset(args) -> ExperimentPreset:
    preset = get_preset(args.preset)
    if getattr(args, "config", None):
        preset = apply_overrides(preset, load_overrides(args.config))
    return preset


def _ablated(cfg: GcslamConfig, args) -> GcslamConfig:
    if args.no_aet:
        cfg = replace(cfg, use_adjacent=False)
    if args.no_gvet:
        cfg = replace(cfg, use_vertical=False)
    if args.no_filter:
        cfg = replace(cfg, use_filter=False)
    return cfg


def _write_log_csv(path: Path, log: Sequence[KeyframeLogEntry]) -> None:
    lines = ["frame,keyframe,n_slots,n_stable,n_factors,iterations,initial_cost,final_cost,converged"]
    for e in log:
        lines.append(
            f"{e.frame},{e.keyframe},{e.n_slots},{e.n_stable},{e.n_factors},"
            f"{e.iterations},{e.initial_cost!r},{e.final_cost!r},{int(e.converged)}"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_diagnostics_csv(path: Path, diags: Sequence[IcpDiagnostic]) -> None:
    lines = ["frame,converged,n_correspondences,iterations,rmse,jump,accepted"]
    for d in diags:
        lines.append(
            f"{d.frame},{int(d.converged)},{d.n_correspondences},{d.iterations},"
            f"{d.rmse!r},{d.jump!r},{int(d.accepted)}"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_report(out_dir: Path, report: dict) -> None:
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    lines = ["metric,value"]
    for key in sorted(report):
        value = report[key]
        lines.append(f"{key},{value!r}" if isinstance(value, float) else f"{key},{value}")
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")


def _map_arrays(doc: MapDocument) -> tuple[np.ndarray, np.ndarray]:
    stable = doc.stable_slots()
    mids = np.array([[s.x, s.y] for s in stable]).reshape(-1, 2)
    vecs = np.array(
        [[s.width * np.cos(s.theta), s.width * np.sin(s.theta)] for s in stable]
    ).reshape(-1, 2)
    return mids, vecs


def map_quality(doc: MapDocument, dataset: Dataset, slot_width: float) -> dict:
    """Stable-slot map measures against the true lot."""
    mids, vecs = _map_arrays(doc)
    out: dict = {
        "n_slots": len(doc.slots),
        "n_stable": len(mids),
        "n_true_slots": len(dataset.world.slots),
    }
    true_mids = np.array([[s.entry_mid.x, s.entry_mid.y] for s in dataset.world.slots])
    if len(mids):
        d, _ = cKDTree(true_mids).query(mids)
        out["n_false_stable"] = int(np.sum(d > FALSE_SLOT_DISTANCE))
        out["slot_mean_err_m"] = float(np.mean(d[d <= FALSE_SLOT_DISTANCE])) if np.any(
            d <= FALSE_SLOT_DISTANCE
        ) else float("nan")
        out["swe_cm"] = slot_width_error(mids, slot_width)
        out["ae_cm"] = adjacent_error(mids, vecs)
        out["row_orientation_rad"] = row_orientation_error(
            mids, Vec2(1.0, 0.0), 1.5 * slot_width
        )
    else:
        out["n_false_stable"] = 0
    return out


def _trajectory_report(
    name: str, traj: Sequence[tuple[int, Pose2]], dataset: Dataset, length: float
) -> dict:
    est, ref = match_frames(traj, dataset.truth)
    err = ate_rmse(est, ref)
    return {f"{name}_ate_m": err, f"{name}_nees_pct": nees(err, length)}


def compute_report(
    preset: ExperimentPreset,
    seed: int,
    dataset: Dataset,
    gcslam_traj: Sequence[tuple[int, Pose2]] | None = None,
    map_doc: MapDocument | None = None,
    sfloc_results: dict[str, SflocResult] | None = None,
) -> dict:
    report: dict = {"preset": preset.name, "seed": seed}
    length = trajectory_length(dataset.truth)
    report["truth_length_m"] = length

    if gcslam_traj is not None:
        report.update(_trajectory_report("gcslam", gcslam_traj, dataset, length))
        frames = [f for f, _p in gcslam_traj]
        odo_rows = [(f, dataset.odometry[f].pose) for f in frames]
        report.update(_trajectory_report("odometry", odo_rows, dataset, length))
        report["ate_ratio"] = report["gcslam_ate_m"] / report["odometry_ate_m"]
    if map_doc is not None:
        report.update(map_quality(map_doc, dataset, preset.world.slot_width))
    if sfloc_results:
        for name in sorted(sfloc_results):
            res = sfloc_results[name]
            report.update(_trajectory_report(f"sfloc_{name}", res.trajectory, dataset, length))
            if res.diagnostics:
                conv = sum(1 for d in res.diagnostics if d.converged)
                report[f"sfloc_{name}_icp_converged_frac"] = conv / len(res.diagnostics)
    return report


def _run_mapping(preset: ExperimentPreset, seed: int, cfg: GcslamConfig) -> tuple[Dataset, GcslamResult, MapDocument]:
    dataset = simulate_dataset(preset, seed)
    result = run_gcslam(
        [o.pose for o in dataset.odometry],
        [f.detections for f in dataset.detections],
        cfg,
        dataset.semantic_frames,
    )
    return dataset, result, export_map(result)


def _write_mapping_outputs(
    out: Path, dataset: Dataset, result: GcslamResult, doc: MapDocument
) -> None:
    write_pose_csv(out / "trajectory.csv", result.trajectory, "trajectory")
    save_map(doc, out / "map.json")
    _write_log_csv(out / "optimization_log.csv", result.log)
    fig = map_figure(
        doc, trajectories={"estimate": result.trajectory}, truth=dataset.truth, title="mapped lot"
    )
    save_svg(fig, out / "map.svg")


def cmd_simulate(args) -> int:
    preset = _load_preset(args)
    dataset = simulate_dataset(preset, args.seed, revisit=args.revisit)
    args.out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, args.out)
    print(
        f"simulate: preset={preset.name} seed={args.seed} frames={len(dataset.truth)} "
        f"slots={len(dataset.world.slots)} -> {args.out}"
    )
    return 0


def cmd_gcslam(args) -> int:
    preset = _load_preset(args)
    cfg = _ablated(preset.gcslam, args)
    args.out.mkdir(parents=True, exist_ok=True)
    dataset, result, doc = _run_mapping(preset, args.seed, cfg)
    _write_mapping_outputs(args.out, dataset, result, doc)
    n_stable = sum(1 for s in doc.slots if s.stable)
    print(
        f"gcslam: preset={preset.name} seed={args.seed} keyframes={len(result.trajectory)} "
        f"slots={len(doc.slots)} stable={n_stable} -> {args.out}"
    )
    return 0


def cmd_sfloc(args) -> int:
    preset = _load_preset(args)
    doc = load_map(args.map)
    dataset = simulate_dataset(preset, args.seed, revisit=True)
    result = run_localization(
        doc,
        [o.pose for o in dataset.odometry],
        dataset.semantic_frames,
        preset.sfloc,
        estimator=args.estimator,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_pose_csv(args.out / "sfloc_trajectory.csv", result.trajectory, "sfloc")
    _write_diagnostics_csv(args.out / "icp_diagnostics.csv", result.diagnostics)
    fig = trajectory_figure(
        {args.estimator: result.trajectory}, truth=dataset.truth, title="localization"
    )
    save_svg(fig, args.out / "sfloc.svg")
    n_acc = sum(1 for d in result.diagnostics if d.accepted)
    print(
        f"sfloc: estimator={args.estimator} frames={len(result.trajectory)} "
        f"registrations={len(result.diagnostics)} accepted={n_acc} -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    preset = _load_preset(args)
    dataset = simulate_dataset(preset, args.seed)
    traj = read_pose_csv(args.trajectory) if args.trajectory else None
    doc = load_map(args.map) if args.map else None
    sfloc_results = None
    if args.sfloc_trajectory:
        rows = read_pose_csv(args.sfloc_trajectory)
        sfloc_results = {"fused": SflocResult("fused", rows, [])}
    if traj is None and doc is None and sfloc_results is None:
        raise ConfigError("eval needs at least one of --trajectory, --map, --sfloc-trajectory")

    args.out.mkdir(parents=True, exist_ok=True)
    report = compute_report(preset, args.seed, dataset, traj, doc, sfloc_results)
    _write_report(args.out, report)
    trajs = {}
    if traj is not None:
        trajs["estimate"] = traj
    if sfloc_results:
        trajs["sfloc"] = sfloc_results["fused"].trajectory
    if trajs:
        save_svg(
            trajectory_figure(trajs, truth=dataset.truth, title="trajectories"),
            args.out / "trajectories.svg",
        )
    if doc is not None:
        save_svg(
            map_figure(doc, trajectories=trajs or None, truth=dataset.truth, title="mapped lot"),
            args.out / "map.svg",
        )
    print(f"eval: wrote report with {len(report)} metrics -> {args.out}")
    return 0


def cmd_plot(args) -> int:
    doc = load_map(args.map)
    trajs = {p.stem: read_pose_csv(p) for p in args.trajectory}
    fig = map_figure(doc, trajectories=trajs or None, title=args.map.stem)
    save_svg(fig, args.out)
    print(f"plot: {args.map} -> {args.out}")
    return 0


def cmd_run_all(args) -> int:
    preset = _load_preset(args)
    cfg = _ablated(preset.gcslam, args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    dataset, result, doc = _run_mapping(preset, args.seed, cfg)
    _write_mapping_outputs(out, dataset, result, doc)
    print(f"run-all: mapping done ({len(result.trajectory)} keyframes, {len(doc.slots)} slots)")

    revisit = simulate_dataset(preset, args.seed, revisit=True)
    r_odo = [o.pose for o in revisit.odometry]
    sfloc_results = {}
    for est in ("fused", "icp_only", "icp_blind"):
        sfloc_results[est] = run_localization(
            doc, r_odo, revisit.semantic_frames, preset.sfloc, estimator=est
        )
    fused = sfloc_results["fused"]
    write_pose_csv(out / "sfloc_trajectory.csv", fused.trajectory, "sfloc")
    _write_diagnostics_csv(out / "icp_diagnostics.csv", fused.diagnostics)
    print("run-all: localization done")

    report = compute_report(preset, args.seed, dataset, result.trajectory, doc, sfloc_results)
    _write_report(out, report)
    trajs = {"gcslam": result.trajectory, "sfloc": fused.trajectory}
    save_svg(
        trajectory_figure(trajs, truth=dataset.truth, title="trajectories"),
        out / "trajectories.svg",
    )
    print(f"run-all: report with {len(report)} metrics -> {out}")
    return 0


def _add_common(sp, seed: bool = True) -> None:
    if seed:
        sp.add_argument("--seed", type=int, required=True, help="random seed for this run")
    sp.add_argument(
        "--preset",
        default="square-loop",
        help=f"experiment preset ({', '.join(sorted(PRESETS))})",
    )
    sp.add_argument("--config", type=Path, default=None, help="JSON file with preset overrides")
    sp.add_argument("--out", type=Path, required=True, help="output directory")


def _add_ablations(sp) -> None:
    sp.add_argument("--no-aet", action="store_true", help="drop neighbor-offset constraints")
    sp.add_argument("--no-gvet", action="store_true", help="drop row-direction constraints")
    sp.add_argument(
        "--no-filter", action="store_true", help="treat every new slot as stable immediately"
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="parkslam",
        description="Parking-lot mapping and localization on simulated traversals.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a dataset and write it to disk")
    _add_common(sp)
    sp.add_argument("--revisit", action="store_true", help="draw the revisit noise stream")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gcslam", help="build a map from a simulated traversal")
    _add_common(sp)
    _add_ablations(sp)
    sp.set_defaults(func=cmd_gcslam)

    sp = sub.add_parser("sfloc", help="localize a revisit traversal against a map")
    _add_common(sp)
    sp.add_argument("--map", type=Path, required=True, help="map JSON produced by gcslam")
    sp.add_argument(
        "--estimator",
        choices=("fused", "icp_only", "icp_blind"),
        default="fused",
        help="localization variant",
    )
    sp.set_defaults(func=cmd_sfloc)

    sp = sub.add_parser("eval", help="score artifacts against the simulated truth")
    _add_common(sp)
    sp.add_argument("--trajectory", type=Path, default=None, help="mapping trajectory CSV")
    sp.add_argument("--map", type=Path, default=None, help="map JSON")
    sp.add_argument("--sfloc-trajectory", type=Path, default=None, help="localization CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot", help="render a map file to SVG")
    sp.add_argument("--map", type=Path, required=True, help="map JSON")
    sp.add_argument(
        "--trajectory", type=Path, action="append", default=[], help="trajectory CSV (repeatable)"
    )
    sp.add_argument("--out", type=Path, required=True, help="output SVG path")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("run-all", help="simulate, map, localize, and evaluate one seed")
    _add_common(sp)
    _add_ablations(sp)
    sp.set_defaults(func=cmd_run_all)

    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
