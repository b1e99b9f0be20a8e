"""File formats.

Map JSON, detection logs (JSONL, one frame per line), intrinsics JSON,
TUM-style trajectories, ground-truth association JSONL, localization results
JSONL, flat key=value config files, run manifests, and the metrics report.
All writers emit deterministic bytes for identical inputs (sorted keys, no
wall-clock anywhere).
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, CameraIntrinsics, Pose, quat_normalize
from .graph import DetectionRecord, LabelFrequencyTable, PriorObjectNode
from .pose import LocalizationStatus, MatcherConfig

logger = logging.getLogger(__name__)


class InputError(Exception):
    """Malformed or inconsistent input data; maps to CLI exit code 1."""


def _require(cond: bool, message: str):
    if not cond:
        raise InputError(message)


def _load_json(path) -> object:
    path = Path(path)
    _require(path.exists(), f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _iter_jsonl(path):
    path = Path(path)
    _require(path.exists(), f"missing file: {path}")
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# intrinsics


def save_intrinsics(path, intrinsics: CameraIntrinsics):
    payload = {
        "fx": intrinsics.fx,
        "fy": intrinsics.fy,
        "cx": intrinsics.cx,
        "cy": intrinsics.cy,
        "width": intrinsics.width,
        "height": intrinsics.height,
    }
    Path(path).write_text(_dump_json(payload) + "\n")


def load_intrinsics(path) -> CameraIntrinsics:
    data = _load_json(path)
    _require(isinstance(data, dict), f"{path}: intrinsics must be an object")
    try:
        return CameraIntrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad intrinsics: {exc}") from exc


# ---------------------------------------------------------------------------
# map file


def save_map(path, nodes: Sequence[PriorObjectNode], keyframes: Sequence[Sequence[int]], meta: dict | None = None):
    landmarks = []
    for node in sorted(nodes, key=lambda n: n.id):
        landmarks.append(
            {
                "id": node.id,
                "position": [float(v) for v in node.position],
                "rotation": [float(v) for v in node.rotation],  # (qw, qx, qy, qz)
                "scale": [float(v) for v in node.scale],
                "total_detections": node.frequencies.total_detections,
                "label_counts": {k: int(v) for k, v in sorted(node.frequencies.per_label_counts.items())},
            }
        )
    payload: dict = {
        "landmarks": landmarks,
        "keyframes": [
            {"id": i, "landmark_ids": sorted(int(v) for v in members)}
            for i, members in enumerate(keyframes)
        ],
    }
    if meta:
        payload["meta"] = meta
    Path(path).write_text(_dump_json(payload) + "\n")


def load_map(path) -> tuple[list[PriorObjectNode], list[list[int]], dict]:
    data = _load_json(path)
    _require(isinstance(data, dict) and "landmarks" in data, f"{path}: not a map file")
    nodes = []
    try:
        for lm in data["landmarks"]:
            counts = {str(k): int(v) for k, v in lm["label_counts"].items()}
            freqs = LabelFrequencyTable.from_counts(counts, int(lm["total_detections"]))
            nodes.append(
                PriorObjectNode(
                    id=int(lm["id"]),
                    position=np.asarray(lm["position"], dtype=float),
                    rotation=quat_normalize(np.asarray(lm["rotation"], dtype=float)),
                    scale=np.asarray(lm["scale"], dtype=float),
                    frequencies=freqs,
                )
            )
        keyframes = [
            [int(v) for v in kf["landmark_ids"]] for kf in data.get("keyframes", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad map file: {exc}") from exc
    return nodes, keyframes, dict(data.get("meta", {}))


# ---------------------------------------------------------------------------
# detection logs


@dataclass
class FrameRecord:
    frame_id: int
    timestamp: float
    detections: list[DetectionRecord] = field(default_factory=list)
    depth_file: str | None = None


def save_detection_log(path, frames: Sequence[FrameRecord]):
    with Path(path).open("w") as fh:
        for frame in frames:
            dets = []
            for det in frame.detections:
                rec: dict = {
                    "bbox": det.bbox.as_list(),
                    "labels": [{"label": l, "score": float(s)} for l, s in det.labels],
                }
                if det.position is not None:
                    rec["position"] = [float(v) for v in det.position]
                dets.append(rec)
            payload = {
                "frame_id": frame.frame_id,
                "timestamp": frame.timestamp,
                "detections": dets,
            }
            if frame.depth_file is not None:
                payload["depth_file"] = frame.depth_file
            fh.write(_dump_json(payload) + "\n")


def load_detection_log(path) -> list[FrameRecord]:
    frames = []
    for row in _iter_jsonl(path):
        try:
            dets = []
            for rec in row.get("detections", []):
                bbox = BoundingBox(*[float(v) for v in rec["bbox"]])
                labels = [(str(e["label"]), float(e["score"])) for e in rec["labels"]]
                pos = rec.get("position")
                position = None if pos is None else np.asarray(pos, dtype=float)
                dets.append(DetectionRecord(bbox, labels, position))
            frames.append(
                FrameRecord(
                    frame_id=int(row["frame_id"]),
                    timestamp=float(row["timestamp"]),
                    detections=dets,
                    depth_file=row.get("depth_file"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad detection record: {exc}") from exc
    return frames


# ---------------------------------------------------------------------------
# associations


def save_associations(path, associations: Mapping[int, Mapping[int, int]]):
    with Path(path).open("w") as fh:
        for frame_id in sorted(associations):
            for det_idx in sorted(associations[frame_id]):
                fh.write(
                    _dump_json(
                        {
                            "frame_id": int(frame_id),
                            "detection_index": int(det_idx),
                            "landmark_id": int(associations[frame_id][det_idx]),
                        }
                    )
                    + "\n"
                )


def load_associations(path) -> dict[int, dict[int, int]]:
    out: dict[int, dict[int, int]] = {}
    for row in _iter_jsonl(path):
        try:
            out.setdefault(int(row["frame_id"]), {})[int(row["detection_index"])] = int(
                row["landmark_id"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad association record: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# trajectories (TUM text format; file poses are camera-to-world)


def save_trajectory(path, trajectory: Sequence[tuple[float, Pose]]):
    lines = []
    for ts, pose in trajectory:
        inv = pose.inverse()  # camera-to-world
        q = inv.rotation
        t = inv.translation
        lines.append(
            " ".join(
                f"{v:.9f}"
                for v in (ts, t[0], t[1], t[2], q[1], q[2], q[3], q[0])
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_trajectory(path) -> list[tuple[float, Pose]]:
    path = Path(path)
    _require(path.exists(), f"missing file: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        _require(len(parts) == 8, f"{path}:{lineno}: expected 8 fields")
        try:
            vals = [float(v) for v in parts]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad number: {exc}") from exc
        ts, tx, ty, tz, qx, qy, qz, qw = vals
        cam_to_world = Pose(quat_normalize([qw, qx, qy, qz]), np.zeros(3))
        r = cam_to_world.rotation_matrix().T
        out.append((ts, Pose.from_rt(r, -r @ np.array([tx, ty, tz]))))
    return out


# ---------------------------------------------------------------------------
# localization results


@dataclass
class FrameResult:
    frame_id: int
    timestamp: float
    status: str
    pose: Pose | None = None
    was: float = 0.0
    correspondences: list[tuple[int, int]] = field(default_factory=list)
    mean_entropy: float | None = None


def save_results(path, results: Sequence[FrameResult]):
    with Path(path).open("w") as fh:
        for res in results:
            pose_row = None
            if res.pose is not None:
                inv = res.pose.inverse()
                q = inv.rotation
                t = inv.translation
                pose_row = [
                    float(t[0]),
                    float(t[1]),
                    float(t[2]),
                    float(q[1]),
                    float(q[2]),
                    float(q[3]),
                    float(q[0]),
                ]
            fh.write(
                _dump_json(
                    {
                        "frame_id": res.frame_id,
                        "timestamp": res.timestamp,
                        "status": res.status,
                        "pose": pose_row,
                        "was": res.was,
                        "correspondences": [[int(p), int(q_)] for p, q_ in res.correspondences],
                        "mean_entropy": res.mean_entropy,
                    }
                )
                + "\n"
            )


def load_results(path) -> list[FrameResult]:
    out = []
    for row in _iter_jsonl(path):
        try:
            pose = None
            if row.get("pose") is not None:
                tx, ty, tz, qx, qy, qz, qw = [float(v) for v in row["pose"]]
                cam_to_world = Pose(quat_normalize([qw, qx, qy, qz]), np.zeros(3))
                r = cam_to_world.rotation_matrix().T
                pose = Pose.from_rt(r, -r @ np.array([tx, ty, tz]))
            out.append(
                FrameResult(
                    frame_id=int(row["frame_id"]),
                    timestamp=float(row["timestamp"]),
                    status=str(row["status"]),
                    pose=pose,
                    was=float(row.get("was", 0.0)),
                    correspondences=[(int(p), int(q)) for p, q in row.get("correspondences", [])],
                    mean_entropy=row.get("mean_entropy"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad result record: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# scene files (simulator output; priors are ingested from here)


def save_scene(path, scene):
    payload = {
        "workspace": {
            "min": [float(v) for v in scene.spec.bounds[0]],
            "max": [float(v) for v in scene.spec.bounds[1]],
        },
        "vocabulary": list(scene.spec.vocabulary),
        "clusters": [list(c) for c in scene.spec.clusters],
        "confusion_rate": scene.spec.confusion_rate,
        "landmarks": [
            {
                "id": lm.id,
                "position": [float(v) for v in lm.position],
                "rotation": [float(v) for v in lm.rotation],
                "scale": [float(v) for v in lm.scale],
                "label": lm.label,
            }
            for lm in scene.landmarks
        ],
    }
    Path(path).write_text(_dump_json(payload) + "\n")


def load_scene_landmarks(path) -> list[dict]:
    data = _load_json(path)
    _require(isinstance(data, dict) and "landmarks" in data, f"{path}: not a scene file")
    out = []
    try:
        for lm in data["landmarks"]:
            out.append(
                {
                    "id": int(lm["id"]),
                    "position": np.asarray(lm["position"], dtype=float),
                    "rotation": quat_normalize(np.asarray(lm["rotation"], dtype=float)),
                    "scale": np.asarray(lm["scale"], dtype=float),
                    "label": str(lm["label"]),
                }
            )
        return out
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad scene file: {exc}") from exc


# ---------------------------------------------------------------------------
# config files and manifests


_CONFIG_FIELDS = {f: t for f, t in MatcherConfig.__annotations__.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        _require("=" in line, f"{source}:{lineno}: expected key=value")
        key, value = [part.strip() for part in line.split("=", 1)]
        out[key] = _parse_scalar(value)
    return out


def _parse_scalar(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def load_config_file(path) -> dict:
    path = Path(path)
    _require(path.exists(), f"missing file: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def save_config_file(path, values: Mapping[str, object]):
    lines = []
    for key in sorted(values):
        val = values[key]
        if val is None:
            rendered = "none"
        elif isinstance(val, bool):
            rendered = "true" if val else "false"
        else:
            rendered = repr(val) if isinstance(val, float) else str(val)
        lines.append(f"{key}={rendered}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def resolve_matcher_config(
    file_values: Mapping[str, object] | None, cli_values: Mapping[str, object] | None
) -> MatcherConfig:
    """Defaults, overridden by config file, overridden by explicit CLI values."""
    merged: dict = {}
    for source in (file_values or {}, cli_values or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key in _CONFIG_FIELDS:
                merged[key] = value
            else:
                logger.warning("ignoring unknown config key %r", key)
    try:
        return MatcherConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad configuration: {exc}") from exc


def save_manifest(path, command: str, config: Mapping[str, object], seed: int, inputs: Mapping[str, object]):
    payload = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "inputs": {k: inputs[k] for k in sorted(inputs)},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# metrics report


def save_metrics_report(path, report: Mapping[str, object]):
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def save_per_frame_csv(path, rows: Sequence[Mapping[str, object]]):
    fields = ["frame_id", "timestamp", "status", "te", "was", "n_correspondences", "tp", "fp", "fn"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
