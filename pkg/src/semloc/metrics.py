"""Evaluation metrics: association P/R/F1, MOTA, translation error, success
rate, and confidence entropy."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    Pose,
    bbox_to_gaussian,
    normalized_wasserstein,
    project_quadric_to_bbox,
)
from .graph import NormalizedConfidence, SemanticGraph

logger = logging.getLogger(__name__)


@dataclass
class FrameCounts:
    frame_id: int
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class AssociationCounts:
    """Aggregated correspondence counts with the usual P/R/F1 accessors.

    An incorrect prediction is charged as both a false positive (the pair is
    wrong) and a false negative (the detection's true landmark went
    unmatched). With no predictions at all, precision is defined as 0.
    """

    per_frame: list[FrameCounts] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return sum(f.tp for f in self.per_frame)

    @property
    def fp(self) -> int:
        return sum(f.fp for f in self.per_frame)

    @property
    def fn(self) -> int:
        return sum(f.fn for f in self.per_frame)

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0


def evaluate_associations(
    predicted: Mapping[int, Sequence[tuple[int, int]] | None],
    gt_associations: Mapping[int, Mapping[int, int]] | None = None,
    gt_poses: Mapping[int, Pose] | None = None,
    prior_graph: SemanticGraph | None = None,
    intrinsics: CameraIntrinsics | None = None,
    detection_boxes: Mapping[int, Mapping[int, BoundingBox]] | None = None,
    iou_threshold: float = 0.5,
) -> AssociationCounts:
    """Score predicted (prior_id, detection_index) pairs per frame.

    With ground-truth associations a prediction is correct when its prior id
    equals the detection's true landmark id. Without them, the predicted
    landmark is projected under the ground-truth pose and matched to the
    detection box by IoU against iou_threshold. Frames missing ground truth
    are skipped with a warning.
    """
    counts = AssociationCounts()
    for frame_id in sorted(predicted):
        pairs = predicted[frame_id] or []
        fc = FrameCounts(frame_id)
        if gt_associations is not None:
            if frame_id not in gt_associations:
                logger.warning("frame %s missing ground-truth associations, skipped", frame_id)
                continue
            gt = gt_associations[frame_id]
            matched: set[int] = set()
            for prior_id, det_idx in pairs:
                if det_idx in gt and gt[det_idx] == prior_id:
                    fc.tp += 1
                    matched.add(det_idx)
                else:
                    fc.fp += 1
            fc.fn = sum(1 for det_idx in gt if det_idx not in matched)
        else:
            if (
                gt_poses is None
                or prior_graph is None
                or intrinsics is None
                or detection_boxes is None
                or frame_id not in gt_poses
                or frame_id not in detection_boxes
            ):
                logger.warning("frame %s missing data for IoU matching, skipped", frame_id)
                continue
            pose = gt_poses[frame_id]
            boxes = detection_boxes[frame_id]
            matched = set()
            for prior_id, det_idx in pairs:
                proj = None
                if prior_graph.has_node(prior_id):
                    proj = project_quadric_to_bbox(
                        prior_graph.node(prior_id).quadric(), pose, intrinsics
                    )
                box = boxes.get(det_idx)
                if proj is not None and box is not None and proj.iou(box) >= iou_threshold:
                    fc.tp += 1
                    matched.add(det_idx)
                else:
                    fc.fp += 1
            fc.fn = sum(1 for det_idx in boxes if det_idx not in matched)
        counts.per_frame.append(fc)
    return counts


@dataclass
class MotaFrame:
    frame_id: int
    n_gt: int
    fn: int
    fp: int
    ids: int


@dataclass
class MotaCounts:
    per_frame: list[MotaFrame] = field(default_factory=list)

    @property
    def n_gt(self) -> int:
        return sum(f.n_gt for f in self.per_frame)

    @property
    def fn(self) -> int:
        return sum(f.fn for f in self.per_frame)

    @property
    def fp(self) -> int:
        return sum(f.fp for f in self.per_frame)

    @property
    def ids(self) -> int:
        return sum(f.ids for f in self.per_frame)


def mota(counts: MotaCounts) -> float:
    """1 - (FN + FP + IDS) / GT; undefined (and raising) for zero GT."""
    if counts.n_gt == 0:
        raise ValueError("MOTA undefined with zero ground-truth detections")
    return 1.0 - (counts.fn + counts.fp + counts.ids) / counts.n_gt


def mota_counts(
    predicted: Mapping[int, Sequence[tuple[int, int]] | None],
    gt_associations: Mapping[int, Mapping[int, int]],
) -> MotaCounts:
    """Tracking counts from predicted correspondences.

    FN and FP follow the association convention above. An identity switch is
    charged at frame t when a ground-truth landmark that was assigned prior A
    at its previous matched frame is assigned prior B != A at t; missed
    frames in between do not reset the track.
    """
    out = MotaCounts()
    last_assigned: dict[int, int] = {}
    for frame_id in sorted(predicted):
        if frame_id not in gt_associations:
            logger.warning("frame %s missing ground-truth associations, skipped", frame_id)
            continue
        gt = gt_associations[frame_id]
        pairs = predicted[frame_id] or []
        fp = 0
        ids = 0
        assigned: dict[int, int] = {}
        for prior_id, det_idx in pairs:
            if det_idx in gt:
                assigned[gt[det_idx]] = prior_id
            if not (det_idx in gt and gt[det_idx] == prior_id):
                fp += 1
        correct_dets = {det_idx for prior_id, det_idx in pairs if gt.get(det_idx) == prior_id}
        fn = sum(1 for det_idx in gt if det_idx not in correct_dets)
        for lm_id, prior_id in assigned.items():
            prev = last_assigned.get(lm_id)
            if prev is not None and prev != prior_id:
                ids += 1
            last_assigned[lm_id] = prior_id
        out.per_frame.append(MotaFrame(frame_id, len(gt), fn, fp, ids))
    return out


def rematch_predictions(
    gt_poses: Mapping[int, Pose],
    prior_graph: SemanticGraph,
    intrinsics: CameraIntrinsics,
    detection_boxes: Mapping[int, Mapping[int, BoundingBox]],
    C: float = 100.0,
) -> dict[int, list[tuple[int, int]]]:
    """Re-associate detections per frame by the best normalized-Wasserstein
    score between each detection box and every landmark projected under the
    ground-truth pose. Used by the rematch MOTA mode."""
    out: dict[int, list[tuple[int, int]]] = {}
    for frame_id in sorted(detection_boxes):
        if frame_id not in gt_poses:
            logger.warning("frame %s missing ground-truth pose, skipped", frame_id)
            continue
        pose = gt_poses[frame_id]
        projected = []
        for node in prior_graph.nodes:
            box = project_quadric_to_bbox(node.quadric(), pose, intrinsics)
            if box is not None:
                projected.append((node.id, bbox_to_gaussian(box)))
        pairs: list[tuple[int, int]] = []
        for det_idx in sorted(detection_boxes[frame_id]):
            gauss = bbox_to_gaussian(detection_boxes[frame_id][det_idx])
            best_id = None
            best_w = -1.0
            for prior_id, pg in projected:
                w = normalized_wasserstein(pg, gauss, C)
                if w > best_w or (w == best_w and best_id is not None and prior_id < best_id):
                    best_w = w
                    best_id = prior_id
            if best_id is not None:
                pairs.append((best_id, det_idx))
        out[frame_id] = pairs
    return out


def translation_error(estimated: Pose, ground_truth: Pose) -> float:
    """Euclidean distance between the two camera centers, meters."""
    return float(np.linalg.norm(estimated.camera_center() - ground_truth.camera_center()))


def mean_translation_error(errors: Sequence[tuple[int, float | None]]) -> float | None:
    vals = [te for _, te in errors if te is not None]
    if not vals:
        return None
    return float(np.mean(vals))


def success_rate(
    errors: Sequence[tuple[int, float | None]],
    threshold: float,
    mode: str = "succ",
    inclusive: bool = True,
) -> float:
    """Fraction (percent) of frames whose translation error beats threshold.

    mode 'succ' divides by frames that produced a pose; mode 'all' divides by
    every frame, counting failures (None) as misses. Empty input raises.
    """
    if not errors:
        raise ValueError("no frames to evaluate")
    if mode not in ("succ", "all"):
        raise ValueError(f"unknown mode {mode!r}")
    hits = 0
    denom = 0
    for _, te in errors:
        if te is None:
            if mode == "all":
                denom += 1
            continue
        denom += 1
        if (te <= threshold) if inclusive else (te < threshold):
            hits += 1
    if denom == 0:
        return 0.0
    return 100.0 * hits / denom


def shannon_entropy(confidences) -> float:
    """Entropy of a normalized confidence vector in nats."""
    if isinstance(confidences, NormalizedConfidence):
        probs = [score for _, score in confidences.entries]
    else:
        probs = list(confidences)
    acc = 0.0
    for p in probs:
        if p < 0.0:
            raise ValueError("negative probability")
        if p > 0.0:
            acc -= p * math.log(p)
    return acc
