"""Global pose estimation from candidate correspondences.

Repeatedly samples three candidate pairs, checks structural validity,
solves perspective-three-point, and keeps the pose with the best
normalized-Wasserstein alignment between projected landmarks and detected
boxes. Deterministic for a fixed seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import (
    CameraIntrinsics,
    Pose,
    bbox_to_gaussian,
    normalized_wasserstein,
    p3p_solve,
    pixel_to_bearing,
    project_quadric_to_bbox,
    quat_to_rotmat,
)
from .graph import SemanticGraph
from .matching import CandidateSet, extract_candidates, score_all_pairs

logger = logging.getLogger(__name__)


class LocalizationStatus(str, Enum):
    SUCCESS = "success"
    INSUFFICIENT_DETECTIONS = "insufficient-detections"
    NO_VALID_SAMPLE = "no-valid-sample"
    DEGENERATE = "degenerate"


@dataclass
class MatcherConfig:
    """Knobs for matching and pose search.

    K: labels retained per confidence vector.
    tau: candidate priors kept per query node.
    C: pixel scale of the exp(-W2/C) box similarity.
    n_iter: sampling iterations; early_exit_was stops sooner once the best
        alignment exceeds it (None disables).
    k_edge: neighbors per node when wiring graphs.
    """

    K: int = 5
    tau: int = 3
    C: float = 100.0
    n_iter: int = 200
    k_edge: int = 5
    rng_seed: int = 0
    early_exit_was: float | None = 0.99
    use_calp: bool = True
    drop_zero_columns: bool = False
    one_to_one: bool = False
    clamp_boxes: bool = True
    global_knn: bool = False

    def __post_init__(self):
        if self.K <= 0 or self.tau <= 0 or self.k_edge <= 0:
            raise ValueError("K, tau, k_edge must be positive")
        if self.C <= 0.0:
            raise ValueError("C must be positive")
        if self.n_iter <= 0:
            raise ValueError("n_iter must be positive")


@dataclass
class LocalizationResult:
    status: LocalizationStatus
    pose: Pose | None = None
    correspondences: list[tuple[int, int]] = field(default_factory=list)
    was: float = 0.0
    history: list[tuple[int, float]] = field(default_factory=list)
    n_valid_samples: int = 0
    message: str = ""


def is_valid_sample(
    sample,
    prior_graph: SemanticGraph,
    query_graph: SemanticGraph,
    used_samples,
) -> bool:
    """Structural validity of a 3-pair sample.

    Requires distinct prior ids, distinct query ids, an identical pattern of
    edges and non-edges between the induced prior and query triples, and
    that this (order-insensitive) pair set was not sampled before.
    """
    pairs = list(sample)
    if len(pairs) != 3:
        return False
    prior_ids = [p for p, _ in pairs]
    query_ids = [q for _, q in pairs]
    if len(set(prior_ids)) != 3 or len(set(query_ids)) != 3:
        return False
    if frozenset((p, q) for p, q in pairs) in used_samples:
        return False
    for i in range(3):
        for j in range(i + 1, 3):
            if prior_graph.has_edge(prior_ids[i], prior_ids[j]) != query_graph.has_edge(
                query_ids[i], query_ids[j]
            ):
                return False
    return True


def calculate_was(
    pose: Pose,
    candidates: CandidateSet,
    prior_graph: SemanticGraph,
    query_graph: SemanticGraph,
    intrinsics: CameraIntrinsics,
    C: float,
    clamp_boxes: bool = True,
    one_to_one: bool = False,
) -> tuple[float, list[tuple[int, int]]]:
    """Alignment score of a pose against the candidate set.

    Projects each candidate prior to a box, embeds boxes as Gaussians, and
    scores each pair with exp(-W2/C). Per query node the best visible prior
    is selected (ties to the lower prior id); the score is the mean over the
    selected pairs. Returns 0 and no pairs when nothing is visible.

    one_to_one greedily forbids reusing a prior across query nodes, in
    descending score order.
    """
    proj_cache: dict[int, object] = {}

    def _projected(prior_id: int):
        if prior_id not in proj_cache:
            box = project_quadric_to_bbox(
                prior_graph.node(prior_id).quadric(), pose, intrinsics, clamp=clamp_boxes
            )
            proj_cache[prior_id] = None if box is None else bbox_to_gaussian(box)
        return proj_cache[prior_id]

    scored: list[tuple[int, int, float]] = []
    for query_id in candidates.query_ids():
        q_gauss = bbox_to_gaussian(query_graph.node(query_id).bbox)
        for prior_id in candidates.candidates_for(query_id):
            p_gauss = _projected(prior_id)
            if p_gauss is None:
                continue
            scored.append((prior_id, query_id, normalized_wasserstein(p_gauss, q_gauss, C)))

    if not scored:
        return 0.0, []

    if one_to_one:
        scored.sort(key=lambda it: (-it[2], it[1], it[0]))
        used_q: set[int] = set()
        used_p: set[int] = set()
        selected = []
        for prior_id, query_id, w in scored:
            if query_id in used_q or prior_id in used_p:
                continue
            used_q.add(query_id)
            used_p.add(prior_id)
            selected.append((prior_id, query_id, w))
    else:
        best: dict[int, tuple[int, float]] = {}
        for prior_id, query_id, w in scored:
            cur = best.get(query_id)
            if cur is None or w > cur[1] or (w == cur[1] and prior_id < cur[0]):
                best[query_id] = (prior_id, w)
        selected = [(pid, qid, w) for qid, (pid, w) in best.items()]

    selected.sort(key=lambda it: it[1])
    score = sum(w for _, _, w in selected) / len(selected)
    return score, [(pid, qid) for pid, qid, _ in selected]


class _AlignmentScorer:
    """Vectorized alignment scoring of many poses against fixed candidates."""

    def __init__(self, candidates, prior_graph, query_graph, intrinsics, C, clamp_boxes=True):
        self.C = C
        self.clamp = clamp_boxes
        self.K = intrinsics.matrix()
        self.width = float(intrinsics.width)
        self.height = float(intrinsics.height)
        unique_p = sorted({p for p, _ in candidates.pairs})
        unique_q = sorted({q for _, q in candidates.pairs})
        p_index = {p: i for i, p in enumerate(unique_p)}
        q_index = {q: j for j, q in enumerate(unique_q)}
        self.n_q = len(unique_q)
        self.pair_p = np.array([p_index[p] for p, _ in candidates.pairs])
        self.pair_q = np.array([q_index[q] for _, q in candidates.pairs])
        self.quads = np.stack([prior_graph.node(p).quadric().q for p in unique_p])
        self.centers = np.stack([prior_graph.node(p).position for p in unique_p])
        means = []
        halves = []
        for q in unique_q:
            box = query_graph.node(q).bbox
            means.append(box.center)
            halves.append([box.width / 2.0, box.height / 2.0])
        self.q_means = np.asarray(means)
        self.q_halves = np.asarray(halves)

    def score(self, poses: list[Pose]) -> np.ndarray:
        n = len(poses)
        rot = np.stack([quat_to_rotmat(p.rotation) for p in poses])
        trans = np.stack([p.translation for p in poses])
        proj = self.K[None] @ np.concatenate([rot, trans[:, :, None]], axis=2)  # (n,3,4)
        conic = np.einsum("nab,ubc,ndc->nuad", proj, self.quads, proj)  # (n,u,3,3)
        flip = np.where(conic[:, :, 2, 2] > 0.0, -1.0, 1.0)
        conic = conic * flip[:, :, None, None]
        c22 = conic[:, :, 2, 2]
        cam_z = np.einsum("nj,uj->nu", rot[:, 2, :], self.centers) + trans[:, 2][:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            disc_x = conic[:, :, 0, 2] ** 2 - conic[:, :, 0, 0] * c22
            disc_y = conic[:, :, 1, 2] ** 2 - conic[:, :, 1, 1] * c22
            ok = (cam_z > 0.0) & (np.abs(c22) > 1e-12) & (disc_x > 0.0) & (disc_y > 0.0)
            sx = np.sqrt(np.where(ok, disc_x, 1.0))
            sy = np.sqrt(np.where(ok, disc_y, 1.0))
            x0 = (conic[:, :, 0, 2] + sx) / c22
            x1 = (conic[:, :, 0, 2] - sx) / c22
            y0 = (conic[:, :, 1, 2] + sy) / c22
            y1 = (conic[:, :, 1, 2] - sy) / c22
        xa = np.minimum(x0, x1)
        xb = np.maximum(x0, x1)
        ya = np.minimum(y0, y1)
        yb = np.maximum(y0, y1)
        if self.clamp:
            xa = np.clip(xa, 0.0, self.width)
            xb = np.clip(xb, 0.0, self.width)
            ya = np.clip(ya, 0.0, self.height)
            yb = np.clip(yb, 0.0, self.height)
        ok &= (xb - xa > 0.0) & (yb - ya > 0.0)

        mean_x = 0.5 * (xa + xb)
        mean_y = 0.5 * (ya + yb)
        half_x = 0.5 * (xb - xa)
        half_y = 0.5 * (yb - ya)

        pp = self.pair_p
        pq = self.pair_q
        d2 = (
            (mean_x[:, pp] - self.q_means[pq, 0]) ** 2
            + (mean_y[:, pp] - self.q_means[pq, 1]) ** 2
            + (half_x[:, pp] - self.q_halves[pq, 0]) ** 2
            + (half_y[:, pp] - self.q_halves[pq, 1]) ** 2
        )
        wn = np.exp(-np.sqrt(d2) / self.C)
        visible = ok[:, pp]
        wn = np.where(visible, wn, 0.0)

        best = np.zeros((n, self.n_q))
        counts = np.zeros((n, self.n_q), dtype=int)
        rows = np.broadcast_to(np.arange(n)[:, None], wn.shape)
        cols = np.broadcast_to(pq[None, :], wn.shape)
        np.maximum.at(best, (rows, cols), wn)
        np.add.at(counts, (rows, cols), visible.astype(int))
        have = counts > 0
        sums = np.where(have, best, 0.0).sum(axis=1)
        denom = have.sum(axis=1)
        return np.where(denom > 0, sums / np.maximum(denom, 1), 0.0)


def estimate_pose(
    query_graph: SemanticGraph,
    prior_graph: SemanticGraph,
    config: MatcherConfig,
    intrinsics: CameraIntrinsics,
) -> LocalizationResult:
    """Estimate the camera pose of a query frame against the prior map.

    Scores all pairs, extracts per-query candidates, then runs the seeded
    sampling loop. Every drawn 3-pair set counts as used whether or not it
    passes validity, so the loop never re-evaluates a set; it stops early on
    a high enough alignment or when the triple space is exhausted.
    """
    if len(query_graph) < 3:
        return LocalizationResult(
            LocalizationStatus.INSUFFICIENT_DETECTIONS,
            message=f"{len(query_graph)} query nodes, need 3",
        )
    table = score_all_pairs(prior_graph, query_graph, use_calp=config.use_calp)
    candidates = extract_candidates(table, config.tau, drop_zero_columns=config.drop_zero_columns)
    pairs = candidates.pairs
    if len(pairs) < 3:
        return LocalizationResult(
            LocalizationStatus.INSUFFICIENT_DETECTIONS,
            message=f"{len(pairs)} candidate pairs, need 3",
        )

    scorer = _AlignmentScorer(
        candidates, prior_graph, query_graph, intrinsics, config.C, config.clamp_boxes
    )
    bearings = {
        q: pixel_to_bearing(query_graph.node(q).bbox.center, intrinsics)
        for q in {q for _, q in pairs}
    }

    rng = np.random.default_rng(config.rng_seed)
    used: set[frozenset] = set()
    n_pairs = len(pairs)
    total_triples = math.comb(n_pairs, 3)
    best_w = 0.0
    best_pose: Pose | None = None
    history: list[tuple[int, float]] = []
    n_valid = 0

    for it in range(config.n_iter):
        if len(used) >= total_triples:
            break
        idx = rng.choice(n_pairs, size=3, replace=False)
        sample = [pairs[i] for i in idx]
        key = frozenset(sample)
        valid = is_valid_sample(sample, prior_graph, query_graph, used)
        used.add(key)
        if not valid:
            continue
        n_valid += 1
        world = np.stack([prior_graph.node(p).position for p, _ in sample])
        rays = np.stack([bearings[q] for _, q in sample])
        poses = p3p_solve(world, rays)
        if not poses:
            continue
        scores = scorer.score(poses)
        k = int(np.argmax(scores))
        if scores[k] > best_w:
            best_w = float(scores[k])
            best_pose = poses[k]
            history.append((it, best_w))
        if config.early_exit_was is not None and best_w > config.early_exit_was:
            break

    if n_valid == 0:
        return LocalizationResult(LocalizationStatus.NO_VALID_SAMPLE, history=history)
    if best_pose is None or best_w <= 0.0:
        return LocalizationResult(
            LocalizationStatus.DEGENERATE, history=history, n_valid_samples=n_valid
        )

    final_w, correspondences = calculate_was(
        best_pose,
        candidates,
        prior_graph,
        query_graph,
        intrinsics,
        config.C,
        clamp_boxes=config.clamp_boxes,
        one_to_one=config.one_to_one,
    )
    if abs(final_w - best_w) > 1e-6 and not config.one_to_one:
        logger.warning("alignment recompute drifted: %.9f vs %.9f", final_w, best_w)
    return LocalizationResult(
        LocalizationStatus.SUCCESS,
        pose=best_pose,
        correspondences=correspondences,
        was=final_w,
        history=history,
        n_valid_samples=n_valid,
    )
