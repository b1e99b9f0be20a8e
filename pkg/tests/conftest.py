import numpy as np
import pytest

from semloc import (
    BoundingBox,
    LabelFrequencyTable,
    NormalizedConfidence,
    Pose,
    PriorObjectNode,
    QueryDetectionNode,
    SemanticGraph,
)

VOCAB = [f"class{i:02d}" for i in range(40)]

# verdict lines collected by the acceptance tests, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_table(counts: dict, total: int | None = None) -> LabelFrequencyTable:
    total = total if total is not None else sum(counts.values())
    return LabelFrequencyTable.from_counts(counts, total)


def make_conf(entries) -> NormalizedConfidence:
    if isinstance(entries, dict):
        entries = list(entries.items())
    entries = sorted(entries, key=lambda e: (-e[1], e[0]))
    return NormalizedConfidence([(str(l), float(s)) for l, s in entries])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_pose(rng: np.random.Generator, t_scale: float = 2.0) -> Pose:
    return Pose.from_rt(random_rotation(rng), rng.normal(scale=t_scale, size=3))


def random_table(rng: np.random.Generator, vocab=VOCAB) -> LabelFrequencyTable:
    n = int(rng.integers(1, 6))
    labels = rng.choice(len(vocab), size=n, replace=False)
    counts = {vocab[i]: int(rng.integers(1, 10)) for i in labels}
    total = sum(counts.values()) + int(rng.integers(0, 10))
    return make_table(counts, total)


def random_conf(rng: np.random.Generator, vocab=VOCAB) -> NormalizedConfidence:
    n = int(rng.integers(1, 6))
    labels = rng.choice(len(vocab), size=n, replace=False)
    w = rng.random(n) + 1e-3
    w = w / w.sum()
    return make_conf([(vocab[i], float(s)) for i, s in zip(labels, w)])


def prior_node(node_id: int, position, counts: dict, total: int | None = None) -> PriorObjectNode:
    return PriorObjectNode(
        id=node_id,
        position=np.asarray(position, dtype=float),
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        scale=np.array([0.1, 0.1, 0.1]),
        frequencies=make_table(counts, total),
    )


def query_node(node_id: int, position, conf, bbox: BoundingBox | None = None) -> QueryDetectionNode:
    confidences = conf if isinstance(conf, NormalizedConfidence) else make_conf(conf)
    return QueryDetectionNode(
        id=node_id,
        bbox=bbox if bbox is not None else BoundingBox(0.0, 0.0, 10.0, 10.0),
        position=np.asarray(position, dtype=float),
        confidences=confidences,
        raw_labels=list(confidences.entries),
    )


def graph(nodes, edges) -> SemanticGraph:
    return SemanticGraph(list(nodes), {tuple(sorted(e)) for e in edges})


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
