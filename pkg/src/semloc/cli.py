"""Command line pipeline: simulate, build-map, localize, evaluate.

Exit codes: 0 on success, 1 on bad input (missing files, malformed records,
bad flags), 2 on internal errors.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import FrameRecord, FrameResult, InputError
from .geometry import CameraIntrinsics, Pose
from .graph import (
    SemanticGraph,
    accumulate_label_frequencies,
    build_query_graph,
    prior_graph_from_nodes,
    top_k_labels,
    PriorObjectNode,
)
from .metrics import (
    evaluate_associations,
    mean_translation_error,
    mota,
    mota_counts,
    rematch_predictions,
    shannon_entropy,
    success_rate,
    translation_error,
)
from .pose import MatcherConfig, estimate_pose
from .simulate import NoiseSpec, SceneSpec, generate_scene, generate_trajectory, render_sequence

logger = logging.getLogger(__name__)

_SR_THRESHOLDS = (0.5, 1.0, 2.0)
_ALIGN_TOL = 0.01  # s, timestamp matching window between results and ground truth


class _Parser(argparse.ArgumentParser):
    # usage mistakes are input errors (exit 1), not internal ones
    def error(self, message):
        raise InputError(message)


# ---------------------------------------------------------------------------
# simulate

_SIM_DEFAULTS: dict = {
    "n_landmarks": 30,
    "n_keyframes": 60,
    "n_frames": 100,
    "trajectory": "orbit",
    "vocabulary": "chair,table,sofa,lamp,plant,monitor,shelf,bed,door,sink,fridge,tv",
    "clusters": "",
    "confusion_rate": 0.0,
    "bbox_jitter": 0.0,
    "depth_sigma": 0.0,
    "dropout": 0.0,
    "temperature": 0.0,
    "unique_labels": False,
    "scale_min": 0.05,
    "scale_max": 0.15,
    "min_separation": 0.3,
    "bounds": "-2,-2,0;2,2,1.5",
    "radius": None,
    "traj_height": None,
    "center_boxes": True,
    "fx": 525.0,
    "fy": 525.0,
    "cx": 319.5,
    "cy": 239.5,
    "image_width": 640,
    "image_height": 480,
    "seed": 0,
}


def _resolve_values(defaults: dict, file_values: dict, cli_values: dict) -> dict:
    out = dict(defaults)
    for source in (file_values, cli_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in defaults:
                logger.warning("ignoring unknown config key %r", key)
                continue
            out[key] = value
    return out


def _parse_bounds(text: str):
    try:
        lo, hi = text.split(";")
        lo = tuple(float(v) for v in lo.split(","))
        hi = tuple(float(v) for v in hi.split(","))
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("need 3 coordinates per corner")
        return lo, hi
    except ValueError as exc:
        raise InputError(f"bad bounds {text!r}: {exc}") from exc


def _parse_clusters(text: str) -> list[list[str]]:
    if not text.strip():
        return []
    return [[label.strip() for label in group.split(",") if label.strip()] for group in text.split(";")]


def _seed_children(seed: int, n: int) -> list[int]:
    root = np.random.SeedSequence(seed)
    return [int(child.generate_state(1, np.uint64)[0]) for child in root.spawn(n)]


def _cmd_simulate(args) -> int:
    file_values = dataio.load_config_file(args.config) if args.config else {}
    cli_values = {
        key: getattr(args, key)
        for key in _SIM_DEFAULTS
        if hasattr(args, key)
    }
    values = _resolve_values(_SIM_DEFAULTS, file_values, cli_values)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    bounds = _parse_bounds(values["bounds"])
    vocabulary = [v.strip() for v in str(values["vocabulary"]).split(",") if v.strip()]
    try:
        spec = SceneSpec(
            n_landmarks=int(values["n_landmarks"]),
            bounds=bounds,
            vocabulary=vocabulary,
            clusters=_parse_clusters(str(values["clusters"])),
            confusion_rate=float(values["confusion_rate"]),
            scale_range=(float(values["scale_min"]), float(values["scale_max"])),
            min_separation=float(values["min_separation"]),
            unique_labels=bool(values["unique_labels"]),
            seed=int(values["seed"]),
        )
        noise = NoiseSpec(
            bbox_jitter=float(values["bbox_jitter"]),
            depth_sigma=float(values["depth_sigma"]),
            dropout=float(values["dropout"]),
            temperature=float(values["temperature"]),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    intrinsics = CameraIntrinsics(
        fx=float(values["fx"]),
        fy=float(values["fy"]),
        cx=float(values["cx"]),
        cy=float(values["cy"]),
        width=int(values["image_width"]),
        height=int(values["image_height"]),
    )

    seed = int(values["seed"])
    _, s_kf_traj, s_kf_render, s_q_traj, s_q_render = _seed_children(seed, 5)
    scene = generate_scene(spec)
    radius = values["radius"]
    height = values["traj_height"]
    radius = None if radius is None else float(radius)
    height = None if height is None else float(height)
    kf_poses = generate_trajectory(
        "orbit", int(values["n_keyframes"]), bounds, seed=s_kf_traj, radius=radius, height=height
    )
    q_poses = generate_trajectory(
        str(values["trajectory"]),
        int(values["n_frames"]),
        bounds,
        seed=s_q_traj,
        radius=radius,
        height=height,
    )
    center = bool(values["center_boxes"])
    kf_frames = render_sequence(
        scene, kf_poses, intrinsics, noise, seed=s_kf_render, center_boxes=center
    )
    q_frames = render_sequence(
        scene, q_poses, intrinsics, noise, seed=s_q_render, center_boxes=center
    )

    dataio.save_intrinsics(out_dir / "intrinsics.json", intrinsics)
    dataio.save_scene(out_dir / "scene.json", scene)

    def ts_kf(i: int) -> float:
        return 0.1 * i

    def ts_q(i: int) -> float:
        return 1000.0 + 0.1 * i

    kf_records = [
        FrameRecord(i, ts_kf(i), dets) for i, (dets, _) in enumerate(kf_frames)
    ]
    q_records = [FrameRecord(i, ts_q(i), dets) for i, (dets, _) in enumerate(q_frames)]
    dataio.save_detection_log(out_dir / "keyframes.jsonl", kf_records)
    dataio.save_detection_log(out_dir / "query.jsonl", q_records)
    dataio.save_associations(
        out_dir / "keyframe_associations.jsonl",
        {i: assoc for i, (_, assoc) in enumerate(kf_frames)},
    )
    dataio.save_associations(
        out_dir / "gt_associations.jsonl", {i: assoc for i, (_, assoc) in enumerate(q_frames)}
    )
    dataio.save_trajectory(
        out_dir / "keyframe_trajectory.txt", [(ts_kf(i), p) for i, p in enumerate(kf_poses)]
    )
    dataio.save_trajectory(
        out_dir / "gt_trajectory.txt", [(ts_q(i), p) for i, p in enumerate(q_poses)]
    )
    dataio.save_manifest(
        out_dir / "manifest.json",
        command="simulate",
        config={k: values[k] for k in sorted(values) if k != "seed"},
        seed=seed,
        inputs={"config": str(args.config) if args.config else None},
    )
    n_kf_dets = sum(len(f.detections) for f in kf_records)
    n_q_dets = sum(len(f.detections) for f in q_records)
    print(
        f"simulated {spec.n_landmarks} landmarks, "
        f"{len(kf_records)} keyframes ({n_kf_dets} detections), "
        f"{len(q_records)} query frames ({n_q_dets} detections) -> {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# build-map


def _accumulate_map(
    scene_landmarks: list[dict],
    kf_frames: list[FrameRecord],
    kf_associations: dict[int, dict[int, int]],
    k: int,
) -> tuple[list[PriorObjectNode], list[list[int]]]:
    """Fold keyframe detections into per-landmark frequency tables.

    Each detection contributes the set of its top-k labels to the landmark it
    is associated with; landmarks never observed are dropped with a warning
    since they cannot carry a frequency table.
    """
    observations: dict[int, list[set[str]]] = {lm["id"]: [] for lm in scene_landmarks}
    keyframes: list[list[int]] = []
    for frame in kf_frames:
        assoc = kf_associations.get(frame.frame_id, {})
        members: set[int] = set()
        for det_idx, det in enumerate(frame.detections):
            lm_id = assoc.get(det_idx)
            if lm_id is None:
                continue
            if lm_id not in observations:
                raise InputError(f"association references unknown landmark {lm_id}")
            labels = {label for label, _ in top_k_labels(det.labels, k)}
            if not labels:
                continue
            observations[lm_id].append(labels)
            members.add(lm_id)
        keyframes.append(sorted(members))
    nodes = []
    kept: set[int] = set()
    for lm in scene_landmarks:
        obs = observations[lm["id"]]
        if not obs:
            logger.warning("landmark %d has no observations, dropped from map", lm["id"])
            continue
        nodes.append(
            PriorObjectNode(
                id=lm["id"],
                position=lm["position"],
                rotation=lm["rotation"],
                scale=lm["scale"],
                frequencies=accumulate_label_frequencies(obs),
            )
        )
        kept.add(lm["id"])
    keyframes = [[i for i in members if i in kept] for members in keyframes]
    return nodes, keyframes


def _cmd_build_map(args) -> int:
    k = args.K if args.K is not None else 5
    scene_landmarks = dataio.load_scene_landmarks(args.scene)
    kf_frames = dataio.load_detection_log(args.keyframes)
    kf_assoc = dataio.load_associations(args.associations)
    nodes, keyframes = _accumulate_map(scene_landmarks, kf_frames, kf_assoc, k)
    dataio.save_map(args.output, nodes, keyframes, meta={"K": k})
    print(f"map with {len(nodes)} landmarks over {len(keyframes)} keyframes -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# localize

_WORKER: dict = {}


def _localize_frame(
    frame: FrameRecord,
    prior_graph: SemanticGraph,
    intrinsics: CameraIntrinsics,
    config: MatcherConfig,
    depth_dir: Path | None,
) -> FrameResult:
    depth = None
    if frame.depth_file is not None:
        if depth_dir is None:
            raise InputError(f"frame {frame.frame_id} references a depth file but none can be located")
        depth = np.load(Path(depth_dir) / frame.depth_file)
    query_graph = build_query_graph(
        frame.detections, k=config.K, k_edge=config.k_edge, depth=depth, intrinsics=intrinsics
    )
    entropies = [shannon_entropy(node.confidences) for node in query_graph.nodes]
    mean_entropy = float(np.mean(entropies)) if entropies else None
    # one independent stream per frame, stable under any execution order
    frame_seed = int(
        np.random.SeedSequence([config.rng_seed, frame.frame_id]).generate_state(1, np.uint64)[0]
    )
    result = estimate_pose(query_graph, prior_graph, replace(config, rng_seed=frame_seed), intrinsics)
    return FrameResult(
        frame_id=frame.frame_id,
        timestamp=frame.timestamp,
        status=result.status.value,
        pose=result.pose,
        was=result.was,
        correspondences=list(result.correspondences),
        mean_entropy=mean_entropy,
    )


def _worker_init(prior_graph, intrinsics, config, depth_dir):
    _WORKER.update(
        prior=prior_graph, intrinsics=intrinsics, config=config, depth_dir=depth_dir
    )


def _worker_run(frame: FrameRecord) -> FrameResult:
    return _localize_frame(
        frame, _WORKER["prior"], _WORKER["intrinsics"], _WORKER["config"], _WORKER["depth_dir"]
    )


def _run_localization(
    frames: list[FrameRecord],
    prior_graph: SemanticGraph,
    intrinsics: CameraIntrinsics,
    config: MatcherConfig,
    threads: int,
    depth_dir: Path | None,
) -> list[FrameResult]:
    if threads > 1 and len(frames) > 1:
        try:
            with ProcessPoolExecutor(
                max_workers=threads,
                initializer=_worker_init,
                initargs=(prior_graph, intrinsics, config, depth_dir),
            ) as pool:
                return list(pool.map(_worker_run, frames))
        except (OSError, PermissionError) as exc:
            logger.warning("process pool unavailable (%s), running serially", exc)
    return [
        _localize_frame(frame, prior_graph, intrinsics, config, depth_dir) for frame in frames
    ]


def _prior_graph_for_config(args, config: MatcherConfig) -> SemanticGraph:
    """Load the map, or rebuild it from the keyframe pass at config.K."""
    if args.map is not None:
        nodes, keyframes, meta = dataio.load_map(args.map)
        if meta.get("K") is not None and int(meta["K"]) != config.K:
            logger.warning(
                "map was built at K=%s but localizing at K=%d; pass --scene/--keyframes to rebuild",
                meta["K"],
                config.K,
            )
    else:
        if not (args.scene and args.keyframes and args.keyframe_associations):
            raise InputError("need --map, or --scene with --keyframes and --keyframe-associations")
        nodes, keyframes = _accumulate_map(
            dataio.load_scene_landmarks(args.scene),
            dataio.load_detection_log(args.keyframes),
            dataio.load_associations(args.keyframe_associations),
            config.K,
        )
    if not nodes:
        raise InputError("prior map has no landmarks")
    return prior_graph_from_nodes(nodes, keyframes, k_edge=config.k_edge, global_knn=config.global_knn)


def _parse_sweep(specs: list[str]) -> dict[str, list]:
    out: dict[str, list] = {}
    fields = set(MatcherConfig.__annotations__)
    for spec in specs:
        if "=" not in spec:
            raise InputError(f"bad sweep spec {spec!r}, expected name=v1,v2,...")
        name, values = spec.split("=", 1)
        name = name.strip()
        if name not in fields:
            raise InputError(f"unknown sweep parameter {name!r}")
        parsed = [dataio._parse_scalar(v.strip()) for v in values.split(",") if v.strip()]
        if not parsed:
            raise InputError(f"sweep spec {spec!r} has no values")
        out[name] = parsed
    return out


def _cli_matcher_values(args) -> dict:
    return {
        "K": args.K,
        "tau": args.tau,
        "C": args.C,
        "n_iter": args.n_iter,
        "k_edge": args.k_edge,
        "rng_seed": args.seed,
    }


def _cmd_localize(args) -> int:
    file_values = dataio.load_config_file(args.config) if args.config else {}
    cli_values = _cli_matcher_values(args)
    base_config = dataio.resolve_matcher_config(file_values, cli_values)
    frames = dataio.load_detection_log(args.detections)
    intrinsics = dataio.load_intrinsics(args.intrinsics)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    depth_dir = Path(args.detections).parent
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {
        "detections": str(args.detections),
        "intrinsics": str(args.intrinsics),
        "map": str(args.map) if args.map else None,
        "scene": str(args.scene) if args.scene else None,
        "keyframes": str(args.keyframes) if args.keyframes else None,
    }

    sweep = _parse_sweep(args.sweep or [])

    def run_one(config: MatcherConfig, run_dir: Path):
        run_dir.mkdir(parents=True, exist_ok=True)
        prior_graph = _prior_graph_for_config(args, config)
        results = _run_localization(frames, prior_graph, intrinsics, config, threads, depth_dir)
        dataio.save_results(run_dir / "results.jsonl", results)
        dataio.save_manifest(
            run_dir / "manifest.json",
            command="localize",
            config={f: getattr(config, f) for f in MatcherConfig.__annotations__},
            seed=config.rng_seed,
            inputs=inputs,
        )
        n_success = sum(1 for r in results if r.status == "success")
        print(f"localized {n_success}/{len(results)} frames -> {run_dir / 'results.jsonl'}")

    if not sweep:
        run_one(base_config, out_dir)
        return 0
    names = sorted(sweep)
    for combo in itertools.product(*(sweep[name] for name in names)):
        overrides = dict(zip(names, combo))
        config = dataio.resolve_matcher_config(
            file_values, {**cli_values, **overrides}
        )
        run_dir = out_dir / "_".join(f"{name}={overrides[name]}" for name in names)
        run_one(config, run_dir)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _match_poses(
    timestamps: dict[int, float], trajectory: list[tuple[float, Pose]]
) -> dict[int, Pose]:
    """Nearest-timestamp alignment within _ALIGN_TOL seconds."""
    if not trajectory:
        return {}
    times = np.array([ts for ts, _ in trajectory])
    order = np.argsort(times)
    times = times[order]
    poses = [trajectory[i][1] for i in order]
    out: dict[int, Pose] = {}
    for frame_id, ts in timestamps.items():
        idx = int(np.searchsorted(times, ts))
        best = None
        for j in (idx - 1, idx):
            if 0 <= j < len(times):
                dt = abs(float(times[j]) - ts)
                if best is None or dt < best[0]:
                    best = (dt, j)
        if best is not None and best[0] <= _ALIGN_TOL:
            out[frame_id] = poses[best[1]]
        else:
            logger.warning("frame %d: no ground-truth pose within %.0f ms", frame_id, _ALIGN_TOL * 1e3)
    return out


def _evaluate_run(results_path: Path, args) -> tuple[dict, list[dict]]:
    results = dataio.load_results(results_path)
    if not results:
        raise InputError(f"{results_path}: empty results")
    gt_traj = dataio.load_trajectory(args.gt_trajectory) if args.gt_trajectory else []
    gt_assoc = dataio.load_associations(args.gt_associations) if args.gt_associations else None

    timestamps = {r.frame_id: r.timestamp for r in results}
    gt_poses = _match_poses(timestamps, gt_traj)
    predicted = {r.frame_id: r.correspondences for r in results}

    report: dict = {"n_frames": len(results), "statuses": {}}
    for r in results:
        report["statuses"][r.status] = report["statuses"].get(r.status, 0) + 1

    per_frame_assoc: dict[int, tuple[int, int, int]] = {}
    if gt_assoc is not None:
        counts = evaluate_associations(predicted, gt_associations=gt_assoc)
        per_frame_assoc = {fc.frame_id: (fc.tp, fc.fp, fc.fn) for fc in counts.per_frame}
        report["association"] = {
            "precision": counts.precision,
            "recall": counts.recall,
            "f1": counts.f1,
            "tp": counts.tp,
            "fp": counts.fp,
            "fn": counts.fn,
        }
        try:
            report["mota_direct"] = mota(mota_counts(predicted, gt_assoc))
        except ValueError as exc:
            logger.warning("direct MOTA unavailable: %s", exc)
            report["mota_direct"] = None
    else:
        logger.warning("no ground-truth associations given, skipping F1 and MOTA")

    if gt_assoc is not None and args.map and args.intrinsics and args.detections:
        nodes, keyframes, _ = dataio.load_map(args.map)
        prior_graph = prior_graph_from_nodes(nodes, keyframes)
        intrinsics = dataio.load_intrinsics(args.intrinsics)
        det_frames = dataio.load_detection_log(args.detections)
        boxes = {
            f.frame_id: {i: det.bbox for i, det in enumerate(f.detections)}
            for f in det_frames
            if f.frame_id in predicted
        }
        rematched = rematch_predictions(gt_poses, prior_graph, intrinsics, boxes)
        try:
            report["mota_rematch"] = mota(mota_counts(rematched, gt_assoc))
        except ValueError as exc:
            logger.warning("rematch MOTA unavailable: %s", exc)
            report["mota_rematch"] = None

    errors: list[tuple[int, float | None]] = []
    for r in results:
        te = None
        if r.pose is not None and r.frame_id in gt_poses:
            te = translation_error(r.pose, gt_poses[r.frame_id])
        errors.append((r.frame_id, te))
    te_by_frame = dict(errors)
    if gt_poses:
        report["mean_te"] = mean_translation_error(errors)
        report["success_rate"] = {
            f"{thr:g}": {
                "succ": success_rate(errors, thr, mode="succ"),
                "all": success_rate(errors, thr, mode="all"),
            }
            for thr in _SR_THRESHOLDS
        }
    entropies = [r.mean_entropy for r in results if r.mean_entropy is not None]
    report["entropy_mean"] = float(np.mean(entropies)) if entropies else None

    rows = []
    for r in results:
        tp, fp, fn = per_frame_assoc.get(r.frame_id, ("", "", ""))
        te = te_by_frame.get(r.frame_id)
        rows.append(
            {
                "frame_id": r.frame_id,
                "timestamp": r.timestamp,
                "status": r.status,
                "te": "" if te is None else te,
                "was": r.was,
                "n_correspondences": len(r.correspondences),
                "tp": tp,
                "fp": fp,
                "fn": fn,
            }
        )
    return report, rows


def _find_runs(results_arg: str) -> list[tuple[str, Path]]:
    path = Path(results_arg)
    if path.is_file():
        return [("", path)]
    if path.is_dir():
        direct = path / "results.jsonl"
        if direct.exists():
            return [("", direct)]
        runs = [
            (sub.name, sub / "results.jsonl")
            for sub in sorted(path.iterdir())
            if sub.is_dir() and (sub / "results.jsonl").exists()
        ]
        if runs:
            return runs
    raise InputError(f"{results_arg}: no results.jsonl found")


def _cmd_evaluate(args) -> int:
    runs = _find_runs(args.results)
    out_dir = Path(args.output) if args.output else Path(args.results)
    if out_dir.is_file():
        out_dir = out_dir.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(runs) == 1 and runs[0][0] == "":
        report, rows = _evaluate_run(runs[0][1], args)
        dataio.save_metrics_report(out_dir / "report.json", report)
        dataio.save_per_frame_csv(out_dir / "per_frame.csv", rows)
        _print_report("", report)
        return 0
    combined: dict = {"runs": {}}
    for name, results_path in runs:
        report, rows = _evaluate_run(results_path, args)
        run_out = out_dir / name
        run_out.mkdir(parents=True, exist_ok=True)
        dataio.save_metrics_report(run_out / "report.json", report)
        dataio.save_per_frame_csv(run_out / "per_frame.csv", rows)
        combined["runs"][name] = report
        _print_report(name, report)
    dataio.save_metrics_report(out_dir / "report.json", combined)
    return 0


def _print_report(name: str, report: dict):
    prefix = f"[{name}] " if name else ""
    parts = [f"frames={report['n_frames']}"]
    if "association" in report:
        parts.append(f"f1={report['association']['f1']:.4f}")
    if report.get("mota_direct") is not None:
        parts.append(f"mota={report['mota_direct']:.4f}")
    if report.get("mean_te") is not None:
        parts.append(f"te={report['mean_te']:.4f}m")
    if "success_rate" in report:
        sr = report["success_rate"].get("0.5")
        if sr:
            parts.append(f"sr@0.5={sr['succ']:.1f}%/{sr['all']:.1f}%")
    if report.get("entropy_mean") is not None:
        parts.append(f"entropy={report['entropy_mean']:.3f}")
    print(prefix + " ".join(parts))


# ---------------------------------------------------------------------------
# parser


def _add_matcher_flags(sub):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=None, help="base RNG seed")
    sub.add_argument("--K", type=int, default=None, help="labels kept per detection")
    sub.add_argument("--tau", type=int, default=None, help="candidate priors per query node")
    sub.add_argument("--C", type=float, default=None, help="box similarity pixel scale")
    sub.add_argument("--n-iter", dest="n_iter", type=int, default=None, help="sampling iterations")
    sub.add_argument("--k-edge", dest="k_edge", type=int, default=None, help="graph neighbors per node")


def _build_parser() -> _Parser:
    parser = _Parser(prog="semloc", description="object-level semantic graph localization")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="generate a synthetic scene and detection logs")
    sim.add_argument("--output", required=True)
    sim.add_argument("--config", help="flat key=value config file")
    sim.add_argument("--seed", dest="seed", type=int, default=None)
    for key, default in _SIM_DEFAULTS.items():
        if key == "seed":
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            sim.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, int):
            sim.add_argument(flag, dest=key, type=int, default=None)
        elif isinstance(default, float) or default is None:
            sim.add_argument(flag, dest=key, type=float, default=None)
        else:
            sim.add_argument(flag, dest=key, default=None)
    sim.set_defaults(func=_cmd_simulate)

    bm = subs.add_parser("build-map", help="accumulate keyframe detections into a prior map")
    bm.add_argument("--scene", required=True, help="scene file with landmark geometry")
    bm.add_argument("--keyframes", required=True, help="keyframe detection log")
    bm.add_argument("--associations", required=True, help="keyframe associations")
    bm.add_argument("--output", required=True, help="map JSON path")
    bm.add_argument("--K", type=int, default=None, help="labels kept per detection")
    bm.set_defaults(func=_cmd_build_map)

    loc = subs.add_parser("localize", help="estimate a pose for every query frame")
    loc.add_argument("--detections", required=True, help="query detection log")
    loc.add_argument("--intrinsics", required=True)
    loc.add_argument("--map", help="prior map JSON")
    loc.add_argument("--scene", help="scene file, to rebuild the map per run")
    loc.add_argument("--keyframes", help="keyframe detection log, to rebuild the map per run")
    loc.add_argument("--keyframe-associations", dest="keyframe_associations")
    loc.add_argument("--output", required=True, help="output directory")
    loc.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    loc.add_argument(
        "--sweep",
        action="append",
        metavar="NAME=V1,V2,...",
        help="repeatable; run once per value combination, e.g. --sweep K=1,3,5",
    )
    _add_matcher_flags(loc)
    loc.set_defaults(func=_cmd_localize)

    ev = subs.add_parser("evaluate", help="score localization results against ground truth")
    ev.add_argument("--results", required=True, help="results.jsonl, or a directory of runs")
    ev.add_argument("--gt-trajectory", dest="gt_trajectory", help="ground-truth trajectory")
    ev.add_argument("--gt-associations", dest="gt_associations", help="ground-truth associations")
    ev.add_argument("--map", help="prior map, enables rematch MOTA")
    ev.add_argument("--intrinsics", help="camera intrinsics, enables rematch MOTA")
    ev.add_argument("--detections", help="query detection log, enables rematch MOTA")
    ev.add_argument("--output", help="report directory (default: beside results)")
    ev.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 0
    except Exception:
        traceback.print_exc()
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
