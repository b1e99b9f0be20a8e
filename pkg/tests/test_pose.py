import numpy as np
import pytest

from semloc import (
    BoundingBox,
    CameraIntrinsics,
    CandidateSet,
    LocalizationStatus,
    MatcherConfig,
    Pose,
    build_knn_edges,
    calculate_was,
    estimate_pose,
    extract_candidates,
    is_valid_sample,
    project_quadric_to_bbox,
    score_all_pairs,
)
from semloc.geometry import quat_distance
from semloc.pose import _AlignmentScorer

from conftest import VOCAB, graph, prior_node, query_node, random_rotation


INTR = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


def _perfect_scene(n=8, seed=3, center_boxes=False):
    """Landmarks with unique labels rendered noise-free from a known pose.

    center_boxes shifts each box onto the projected landmark center so the
    center bearing is exact; raw conic boxes carry a subpixel ellipse bias.
    """
    r = np.random.default_rng(seed)
    gt = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, 4.0]))
    pos = np.column_stack(
        [r.uniform(-1.2, 1.2, n), r.uniform(-1.0, 1.0, n), r.uniform(-0.3, 0.3, n)]
    )
    p_nodes, q_nodes = [], []
    for i in range(n):
        label = VOCAB[i]
        p = prior_node(i + 1, pos[i], {label: 5}, total=5)
        box = project_quadric_to_bbox(p.quadric(), gt, INTR, clamp=True)
        assert box is not None
        if center_boxes:
            cam = gt.transform(pos[i])
            u = INTR.fx * cam[0] / cam[2] + INTR.cx
            v = INTR.fy * cam[1] / cam[2] + INTR.cy
            hw, hh = box.width / 2.0, box.height / 2.0
            box = BoundingBox(u - hw, v - hh, u + hw, v + hh)
        p_nodes.append(p)
        q_nodes.append(query_node(100 + i, gt.transform(pos[i]), {label: 1.0}, bbox=box))
    pg = graph(p_nodes, build_knn_edges(pos, 3, ids=[p.id for p in p_nodes]))
    q_pos = np.stack([q.position for q in q_nodes])
    qg = graph(q_nodes, build_knn_edges(q_pos, 3, ids=[q.id for q in q_nodes]))
    # rigid map preserves distances, so the wiring must agree
    assert {(a - 1, b - 1) for a, b in pg.edges} == {(a - 100, b - 100) for a, b in qg.edges}
    return pg, qg, gt


class TestMatcherConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"K": 0}, {"tau": 0}, {"k_edge": -1}, {"C": 0.0}, {"n_iter": 0}],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            MatcherConfig(**kwargs)

    def test_status_wire_values(self):
        assert LocalizationStatus.SUCCESS.value == "success"
        assert LocalizationStatus.NO_VALID_SAMPLE.value == "no-valid-sample"


class TestIsValidSample:
    def _graphs(self):
        pg = graph(
            [prior_node(i, (float(i), 0, 0), {"a": 1}) for i in range(1, 5)],
            [(1, 2), (2, 3)],
        )
        qg = graph(
            [query_node(i, (float(i), 0, 5), {"a": 1.0}) for i in range(10, 14)],
            [(10, 11), (11, 12)],
        )
        return pg, qg

    def test_accepts_matching_pattern(self):
        pg, qg = self._graphs()
        assert is_valid_sample([(1, 10), (2, 11), (3, 12)], pg, qg, set())

    def test_rejects_duplicate_prior(self):
        pg, qg = self._graphs()
        assert not is_valid_sample([(1, 10), (1, 11), (3, 12)], pg, qg, set())

    def test_rejects_duplicate_query(self):
        pg, qg = self._graphs()
        assert not is_valid_sample([(1, 10), (2, 10), (3, 12)], pg, qg, set())

    def test_rejects_edge_pattern_mismatch(self):
        pg, qg = self._graphs()
        # prior 4 is isolated but query 11-12 are connected
        assert not is_valid_sample([(1, 10), (2, 11), (4, 12)], pg, qg, set())

    def test_used_set_is_order_insensitive(self):
        pg, qg = self._graphs()
        used = {frozenset({(2, 11), (1, 10), (3, 12)})}
        assert not is_valid_sample([(3, 12), (1, 10), (2, 11)], pg, qg, used)

    def test_rejects_wrong_size(self):
        pg, qg = self._graphs()
        assert not is_valid_sample([(1, 10), (2, 11)], pg, qg, set())


class TestCalculateWas:
    def test_perfect_alignment_scores_one(self):
        pg, qg, gt = _perfect_scene()
        cands = extract_candidates(score_all_pairs(pg, qg), tau=2)
        score, pairs = calculate_was(gt, cands, pg, qg, INTR, C=100.0)
        assert score == 1.0
        assert set(pairs) == {(i + 1, 100 + i) for i in range(8)}

    def test_perturbed_pose_scores_lower(self):
        pg, qg, gt = _perfect_scene()
        cands = extract_candidates(score_all_pairs(pg, qg), tau=2)
        off = Pose.from_rt(np.eye(3), gt.translation + [0.2, 0.0, 0.0])
        score, _ = calculate_was(off, cands, pg, qg, INTR, C=100.0)
        assert 0.0 < score < 1.0

    def test_nothing_visible(self):
        pg, qg, gt = _perfect_scene()
        cands = extract_candidates(score_all_pairs(pg, qg), tau=2)
        behind = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, -10.0]))
        score, pairs = calculate_was(behind, cands, pg, qg, INTR, C=100.0)
        assert score == 0.0 and pairs == []

    def test_tie_selects_lower_prior_id(self):
        gt = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, 4.0]))
        pos = np.array([0.3, -0.2, 0.0])
        twin_a = prior_node(7, pos, {"a": 1})
        twin_b = prior_node(3, pos, {"a": 1})
        box = project_quadric_to_bbox(twin_a.quadric(), gt, INTR)
        pg = graph([twin_b, twin_a], [])
        qg = graph([query_node(10, gt.transform(pos), {"a": 1.0}, bbox=box)], [])
        cands = CandidateSet([(7, 10), (3, 10)], tau=2)
        _, pairs = calculate_was(gt, cands, pg, qg, INTR, C=100.0)
        assert pairs == [(3, 10)]

    def test_one_to_one_forbids_prior_reuse(self):
        gt = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, 4.0]))
        pos_a = np.array([0.3, -0.2, 0.0])
        pos_b = np.array([-0.5, 0.1, 0.2])
        pa, pb = prior_node(3, pos_a, {"a": 1}), prior_node(7, pos_b, {"a": 1})
        box_a = project_quadric_to_bbox(pa.quadric(), gt, INTR)
        pg = graph([pa, pb], [])
        qg = graph(
            [
                query_node(10, gt.transform(pos_a), {"a": 1.0}, bbox=box_a),
                query_node(11, gt.transform(pos_a), {"a": 1.0}, bbox=box_a),
            ],
            [],
        )
        cands = CandidateSet([(3, 10), (7, 10), (3, 11), (7, 11)], tau=2)
        _, greedy = calculate_was(gt, cands, pg, qg, INTR, C=100.0, one_to_one=True)
        assert set(greedy) == {(3, 10), (7, 11)}
        _, free = calculate_was(gt, cands, pg, qg, INTR, C=100.0)
        assert set(free) == {(3, 10), (3, 11)}


class TestAlignmentScorer:
    @pytest.mark.parametrize("clamp", [True, False])
    def test_matches_reference_loop(self, clamp, rng):
        pg, qg, gt = _perfect_scene()
        cands = extract_candidates(score_all_pairs(pg, qg), tau=3)
        poses = [gt]
        for _ in range(15):
            dr = random_rotation(rng) if rng.random() < 0.5 else np.eye(3)
            dt = rng.normal(0.0, 0.3, 3)
            poses.append(Pose.from_rt(dr @ gt.rotation_matrix(), gt.translation + dt))
        poses.append(Pose.from_rt(np.eye(3), np.array([0.0, 0.0, -10.0])))
        scorer = _AlignmentScorer(cands, pg, qg, INTR, C=100.0, clamp_boxes=clamp)
        batch = scorer.score(poses)
        for i, pose in enumerate(poses):
            ref, _ = calculate_was(pose, cands, pg, qg, INTR, C=100.0, clamp_boxes=clamp)
            assert batch[i] == pytest.approx(ref, abs=1e-9)


class TestEstimatePose:
    def test_recovers_exact_pose(self):
        pg, qg, gt = _perfect_scene(center_boxes=True)
        cfg = MatcherConfig(tau=2, n_iter=200, rng_seed=5)
        res = estimate_pose(qg, pg, cfg, INTR)
        assert res.status == LocalizationStatus.SUCCESS
        assert res.was > 0.99
        assert np.linalg.norm(res.pose.camera_center() - gt.camera_center()) < 1e-6
        assert quat_distance(res.pose.rotation, gt.rotation) < 1e-6
        assert set(res.correspondences) == {(i + 1, 100 + i) for i in range(8)}

    def test_deterministic_for_fixed_seed(self):
        pg, qg, gt = _perfect_scene()
        cfg = MatcherConfig(tau=3, n_iter=60, rng_seed=11, early_exit_was=None)
        a = estimate_pose(qg, pg, cfg, INTR)
        b = estimate_pose(qg, pg, cfg, INTR)
        assert a.history == b.history
        assert a.n_valid_samples == b.n_valid_samples
        np.testing.assert_array_equal(a.pose.translation, b.pose.translation)
        np.testing.assert_array_equal(a.pose.rotation, b.pose.rotation)

    def test_history_is_strictly_improving(self):
        pg, qg, gt = _perfect_scene()
        cfg = MatcherConfig(tau=3, n_iter=80, rng_seed=2, early_exit_was=None)
        res = estimate_pose(qg, pg, cfg, INTR)
        its = [it for it, _ in res.history]
        scores = [w for _, w in res.history]
        assert its == sorted(its)
        assert all(b > a for a, b in zip(scores, scores[1:]))

    def test_early_exit_stops_search(self):
        pg, qg, gt = _perfect_scene()
        eager = estimate_pose(qg, pg, MatcherConfig(tau=2, n_iter=5000, rng_seed=5), INTR)
        assert eager.status == LocalizationStatus.SUCCESS
        # a perfect frame should be accepted long before the budget runs out
        assert eager.history[-1][0] < 100

    def test_insufficient_query_nodes(self):
        pg, qg, _ = _perfect_scene()
        tiny = graph([qg.node(100), qg.node(101)], [])
        res = estimate_pose(tiny, pg, MatcherConfig(), INTR)
        assert res.status == LocalizationStatus.INSUFFICIENT_DETECTIONS
        assert "query nodes" in res.message

    def test_insufficient_candidate_pairs(self):
        pg, _, gt = _perfect_scene()
        # disjoint vocabulary, zero columns dropped: no candidates survive
        qg = graph(
            [
                query_node(100 + i, gt.transform([0.1 * i, 0.0, 0.0]), {"zzz": 1.0})
                for i in range(3)
            ],
            [],
        )
        cfg = MatcherConfig(drop_zero_columns=True)
        res = estimate_pose(qg, pg, cfg, INTR)
        assert res.status == LocalizationStatus.INSUFFICIENT_DETECTIONS
        assert "candidate pairs" in res.message

    def test_no_valid_sample_on_structural_mismatch(self):
        gt = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, 4.0]))
        pts = [np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
        p_nodes = [prior_node(i + 1, pts[i], {"a": 1}) for i in range(3)]
        pg = graph(p_nodes, [(1, 2), (1, 3), (2, 3)])
        q_nodes = [
            query_node(
                100 + i,
                gt.transform(pts[i]),
                {"a": 1.0},
                bbox=project_quadric_to_bbox(p_nodes[i].quadric(), gt, INTR),
            )
            for i in range(3)
        ]
        qg = graph(q_nodes, [])
        res = estimate_pose(qg, pg, MatcherConfig(tau=3, n_iter=500), INTR)
        assert res.status == LocalizationStatus.NO_VALID_SAMPLE
        assert res.n_valid_samples == 0

    def test_degenerate_when_p3p_never_solves(self):
        gt = Pose.from_rt(np.eye(3), np.array([0.0, 0.0, 4.0]))
        pts = [np.array([-0.5 + 0.5 * i, 0.0, 0.0]) for i in range(3)]
        p_nodes = [prior_node(i + 1, pts[i], {"a": 1}) for i in range(3)]
        pg = graph(p_nodes, [(1, 2), (2, 3)])
        q_nodes = [
            query_node(
                100 + i,
                gt.transform(pts[i]),
                {"a": 1.0},
                bbox=project_quadric_to_bbox(p_nodes[i].quadric(), gt, INTR),
            )
            for i in range(3)
        ]
        qg = graph(q_nodes, [(100, 101), (101, 102)])
        res = estimate_pose(qg, pg, MatcherConfig(tau=3, n_iter=500), INTR)
        assert res.status == LocalizationStatus.DEGENERATE
        assert res.n_valid_samples > 0
