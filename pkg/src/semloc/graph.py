"""Semantic graph model.

Two graphs share one container type: a prior graph of mapped landmarks with
accumulated multi-label detection frequencies, and a per-frame query graph of
detections with normalized top-K confidences. Edges come from k-nearest
neighbors over 3D positions, tie-broken deterministically.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Collection, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox, CameraIntrinsics, DualQuadric, quadric_from_params

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# label statistics


@dataclass
class LabelFrequencyTable:
    """Per-landmark label frequencies accumulated over map detections.

    entries hold (label, frequency) with frequency = count / total_detections;
    raw counts are kept so the table stays exact under serialization.
    """

    entries: list[tuple[str, float]]
    total_detections: int
    per_label_counts: dict[str, int]

    def __post_init__(self):
        if self.total_detections <= 0:
            raise ValueError("total_detections must be positive")
        for label, count in self.per_label_counts.items():
            if not (0 < count <= self.total_detections):
                raise ValueError(f"count for {label!r} outside (0, total]")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], total: int) -> "LabelFrequencyTable":
        entries = [(label, counts[label] / total) for label in sorted(counts)]
        return cls(entries, total, {label: int(counts[label]) for label in sorted(counts)})

    def frequency(self, label: str) -> float:
        if label not in self.per_label_counts:
            return 0.0
        return self.per_label_counts[label] / self.total_detections

    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]


def accumulate_label_frequencies(observations: Sequence[Iterable[str]]) -> LabelFrequencyTable:
    """Fold per-detection label sets into a frequency table.

    Each observation is the set of labels attached to one detection of the
    landmark; a label appearing there counts once toward that label's tally
    regardless of multiplicity.
    """
    if len(observations) == 0:
        raise ValueError("no detections for landmark")
    counts: Counter[str] = Counter()
    for obs in observations:
        for label in set(obs):
            counts[label] += 1
    return LabelFrequencyTable.from_counts(counts, len(observations))


def top_k_labels(raw: Sequence[tuple[str, float]], k: int) -> list[tuple[str, float]]:
    """Deduplicate raw (label, score) pairs and keep the top-k.

    Duplicate labels keep their maximum score. Score ties are broken by
    lexicographic label order so the cut at k is deterministic.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    best: dict[str, float] = {}
    for label, score in raw:
        score = float(score)
        if label not in best or score > best[label]:
            best[label] = score
    ordered = sorted(best.items(), key=lambda it: (-it[1], it[0]))
    return ordered[:k]


@dataclass
class NormalizedConfidence:
    """Top-K detection confidences renormalized to sum to one."""

    entries: list[tuple[str, float]]

    def __post_init__(self):
        labels = [label for label, _ in self.entries]
        if len(labels) != len(set(labels)):
            raise ValueError("duplicate labels in confidence")
        total = sum(score for _, score in self.entries)
        if self.entries and abs(total - 1.0) > 1e-9:
            raise ValueError("confidences must sum to one")

    def score(self, label: str) -> float:
        for lab, score in self.entries:
            if lab == label:
                return score
        return 0.0

    def labels(self) -> list[str]:
        return [label for label, _ in self.entries]


def normalize_confidences(raw: Sequence[tuple[str, float]], k: int) -> NormalizedConfidence:
    """Keep the top-k raw scores and renormalize them to a unit sum.

    Fewer than k labels are retained as-is. All-zero retained scores make the
    normalization undefined and raise.
    """
    kept = top_k_labels(raw, k)
    total = sum(score for _, score in kept)
    if total <= 0.0:
        raise ValueError("degenerate confidence")
    return NormalizedConfidence([(label, score / total) for label, score in kept])


# ---------------------------------------------------------------------------
# nodes and graphs


@dataclass
class PriorObjectNode:
    """Mapped landmark: dual-quadric geometry plus label statistics."""

    id: int
    position: np.ndarray
    rotation: np.ndarray  # quaternion (w, x, y, z), object to world
    scale: np.ndarray
    frequencies: LabelFrequencyTable

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(4)
        self.scale = np.asarray(self.scale, dtype=float).reshape(3)
        if np.any(self.scale <= 0.0):
            raise ValueError("scale must be positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise ValueError("non-unit rotation quaternion")

    def quadric(self) -> DualQuadric:
        return quadric_from_params(self.position, self.rotation, self.scale)


@dataclass
class QueryDetectionNode:
    """One detection in the query frame: box, back-projected point, confidences."""

    id: int
    bbox: BoundingBox
    position: np.ndarray  # camera frame, meters
    confidences: NormalizedConfidence
    raw_labels: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.position[2] <= 0.0:
            raise ValueError("detection depth must be positive")


@dataclass
class SemanticGraph:
    """Nodes plus an undirected edge set over node ids."""

    nodes: list
    edges: set[tuple[int, int]]

    def __post_init__(self):
        ids = [node.id for node in self.nodes]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate node ids")
        self._by_id = {node.id: node for node in self.nodes}
        normalized = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError("self edge")
            if a not in self._by_id or b not in self._by_id:
                raise ValueError("edge references unknown node")
            normalized.add((a, b) if a < b else (b, a))
        self.edges = normalized
        self._adjacency: dict[int, list[int]] = {node.id: [] for node in self.nodes}
        for a, b in self.edges:
            self._adjacency[a].append(b)
            self._adjacency[b].append(a)
        for neighbors in self._adjacency.values():
            neighbors.sort()

    def __len__(self) -> int:
        return len(self.nodes)

    def ids(self) -> list[int]:
        return [node.id for node in self.nodes]

    def node(self, node_id: int):
        return self._by_id[node_id]

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id

    def neighbors(self, node_id: int) -> list[int]:
        return list(self._adjacency[node_id])

    def has_edge(self, a: int, b: int) -> bool:
        return ((a, b) if a < b else (b, a)) in self.edges

    def positions(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 3))
        return np.stack([node.position for node in self.nodes])


def build_knn_edges(
    positions: np.ndarray, k_edge: int, ids: Sequence[int] | None = None
) -> set[tuple[int, int]]:
    """Undirected union of each node's k nearest neighbors.

    Distance ties are broken by the lower node id, so the edge set is
    invariant to the input ordering of equally distant nodes.
    """
    if k_edge <= 0:
        raise ValueError("k_edge must be positive")
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = pos.shape[0]
    node_ids = list(range(n)) if ids is None else list(ids)
    if len(node_ids) != n:
        raise ValueError("ids length mismatch")
    edges: set[tuple[int, int]] = set()
    if n < 2:
        return edges
    diffs = pos[:, None, :] - pos[None, :, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=2))
    id_arr = np.asarray(node_ids)
    for i in range(n):
        row = np.delete(np.arange(n), i)
        order = np.lexsort((id_arr[row], dists[i, row]))
        for j in row[order[:k_edge]]:
            a, b = node_ids[i], node_ids[int(j)]
            edges.add((a, b) if a < b else (b, a))
    return edges


# ---------------------------------------------------------------------------
# graph builders


@dataclass
class LandmarkRecord:
    """Raw map-side landmark: geometry plus per-detection label sets."""

    id: int
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    observations: list[Collection[str]]


def _keyframe_union_edges(
    nodes: Sequence[PriorObjectNode],
    keyframes: Sequence[Collection[int]],
    k_edge: int,
    global_knn: bool,
) -> set[tuple[int, int]]:
    by_id = {node.id: node for node in nodes}
    for members in keyframes:
        for lm_id in members:
            if lm_id not in by_id:
                raise ValueError(f"keyframe references unknown landmark {lm_id}")
    if global_knn or not keyframes:
        pos = np.stack([node.position for node in nodes]) if nodes else np.zeros((0, 3))
        return build_knn_edges(pos, k_edge, ids=[node.id for node in nodes])
    edges: set[tuple[int, int]] = set()
    for members in keyframes:
        ids = sorted(set(members))
        if len(ids) < 2:
            continue
        pos = np.stack([by_id[i].position for i in ids])
        edges |= build_knn_edges(pos, k_edge, ids=ids)
    return edges


def prior_graph_from_nodes(
    nodes: Sequence[PriorObjectNode],
    keyframes: Sequence[Collection[int]],
    k_edge: int = 5,
    global_knn: bool = False,
) -> SemanticGraph:
    """Assemble the prior graph from prebuilt nodes and keyframe memberships.

    Edges are the union over keyframes of per-keyframe k-NN among the
    landmarks visible in that keyframe; global_knn swaps in a single k-NN
    over all landmarks instead.
    """
    edges = _keyframe_union_edges(nodes, keyframes, k_edge, global_knn)
    return SemanticGraph(list(nodes), edges)


def build_prior_graph(
    landmarks: Sequence[LandmarkRecord],
    keyframes: Sequence[Collection[int]],
    k_edge: int = 5,
    global_knn: bool = False,
) -> SemanticGraph:
    """Accumulate label frequencies and wire up the prior graph.

    A landmark with zero observations cannot produce a frequency table and
    raises.
    """
    nodes = []
    for rec in landmarks:
        freqs = accumulate_label_frequencies(rec.observations)
        nodes.append(PriorObjectNode(rec.id, rec.position, rec.rotation, rec.scale, freqs))
    return prior_graph_from_nodes(nodes, keyframes, k_edge=k_edge, global_knn=global_knn)


@dataclass
class DetectionRecord:
    """Detector output for one object: box, raw multi-label scores, optional point."""

    bbox: BoundingBox
    labels: list[tuple[str, float]]
    position: np.ndarray | None = None


def robust_bbox_depth(depth: np.ndarray, bbox: BoundingBox) -> float | None:
    """Median depth over the central half-area sub-box; None without valid pixels.

    The sub-box keeps 50% of the box area (sides scaled by sqrt(0.5)) around
    the center, which discards most boundary pixels that straddle occlusions.
    Valid pixels are finite and strictly positive.
    """
    depth = np.asarray(depth)
    h, w = depth.shape
    half = math.sqrt(0.5) / 2.0
    cx, cy = bbox.center
    x0 = int(np.clip(math.floor(cx - bbox.width * half), 0, w - 1))
    x1 = int(np.clip(math.ceil(cx + bbox.width * half), x0 + 1, w))
    y0 = int(np.clip(math.floor(cy - bbox.height * half), 0, h - 1))
    y1 = int(np.clip(math.ceil(cy + bbox.height * half), y0 + 1, h))
    patch = depth[y0:y1, x0:x1].astype(float).ravel()
    valid = patch[np.isfinite(patch) & (patch > 0.0)]
    if valid.size == 0:
        return None
    return float(np.median(valid))


def backproject_pixel(pixel, z: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    u, v = float(pixel[0]), float(pixel[1])
    return np.array(
        [(u - intrinsics.cx) / intrinsics.fx * z, (v - intrinsics.cy) / intrinsics.fy * z, z]
    )


def build_query_graph(
    detections: Sequence[DetectionRecord],
    k: int,
    k_edge: int = 5,
    depth: np.ndarray | None = None,
    intrinsics: CameraIntrinsics | None = None,
) -> SemanticGraph:
    """Build the per-frame query graph from detector output.

    Node ids are the original detection indices, so dropped detections leave
    gaps instead of shifting ground-truth alignment. Detections are dropped
    (with a logged warning) when the box degenerates after clamping, the
    confidence vector is all-zero, or no positive-depth source exists.
    """
    nodes: list[QueryDetectionNode] = []
    for idx, det in enumerate(detections):
        bbox = det.bbox
        if intrinsics is not None:
            bbox = bbox.clamped(intrinsics.width, intrinsics.height)
            if bbox is None:
                logger.warning("detection %d dropped: box outside image", idx)
                continue
        try:
            conf = normalize_confidences(det.labels, k)
        except ValueError as exc:
            logger.warning("detection %d dropped: %s", idx, exc)
            continue
        position = det.position
        if position is None:
            if depth is None or intrinsics is None:
                logger.warning("detection %d dropped: no depth source", idx)
                continue
            z = robust_bbox_depth(depth, bbox)
            if z is None:
                logger.warning("detection %d dropped: no valid depth", idx)
                continue
            position = backproject_pixel(bbox.center, z, intrinsics)
        position = np.asarray(position, dtype=float).reshape(3)
        if position[2] <= 0.0:
            logger.warning("detection %d dropped: nonpositive depth", idx)
            continue
        nodes.append(QueryDetectionNode(idx, bbox, position, conf, list(det.labels)))
    if not nodes:
        return SemanticGraph([], set())
    positions = np.stack([node.position for node in nodes])
    edges = build_knn_edges(positions, k_edge, ids=[node.id for node in nodes])
    return SemanticGraph(nodes, edges)
