"""Object-level global localization by multi-label semantic graph matching.

A prior map of landmarks (dual-quadric geometry plus accumulated label
frequencies) is matched against per-frame detection graphs; candidate
correspondences feed a sampling loop that solves P3P and keeps the pose with
the best projected-box alignment.
"""

from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    DualQuadric,
    GaussianBox,
    Pose,
    absolute_orientation,
    bbox_to_gaussian,
    normalized_wasserstein,
    p3p_solve,
    pixel_to_bearing,
    project_quadric_to_bbox,
    quadric_from_params,
    wasserstein2_squared,
)
from .graph import (
    DetectionRecord,
    LabelFrequencyTable,
    LandmarkRecord,
    NormalizedConfidence,
    PriorObjectNode,
    QueryDetectionNode,
    SemanticGraph,
    accumulate_label_frequencies,
    build_knn_edges,
    build_prior_graph,
    build_query_graph,
    normalize_confidences,
    prior_graph_from_nodes,
    top_k_labels,
)
from .matching import (
    CandidateSet,
    SimilarityTable,
    best_neighbor_set,
    extract_candidates,
    multilabel_likelihood,
    neighbor_weight,
    score_all_pairs,
    similarity_score,
)
from .pose import (
    LocalizationResult,
    LocalizationStatus,
    MatcherConfig,
    calculate_was,
    estimate_pose,
    is_valid_sample,
)
from .simulate import (
    GroundTruth,
    Landmark,
    NoiseSpec,
    Scene,
    SceneSpec,
    generate_scene,
    generate_trajectory,
    look_at_pose,
    render_frame,
    render_sequence,
)
from .metrics import (
    evaluate_associations,
    mota,
    mota_counts,
    shannon_entropy,
    success_rate,
    translation_error,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CameraIntrinsics",
    "CandidateSet",
    "DetectionRecord",
    "DualQuadric",
    "GaussianBox",
    "GroundTruth",
    "LabelFrequencyTable",
    "Landmark",
    "LandmarkRecord",
    "LocalizationResult",
    "LocalizationStatus",
    "MatcherConfig",
    "NoiseSpec",
    "NormalizedConfidence",
    "Pose",
    "PriorObjectNode",
    "QueryDetectionNode",
    "Scene",
    "SceneSpec",
    "SemanticGraph",
    "SimilarityTable",
    "absolute_orientation",
    "accumulate_label_frequencies",
    "bbox_to_gaussian",
    "best_neighbor_set",
    "build_knn_edges",
    "build_prior_graph",
    "build_query_graph",
    "calculate_was",
    "estimate_pose",
    "evaluate_associations",
    "extract_candidates",
    "generate_scene",
    "generate_trajectory",
    "is_valid_sample",
    "look_at_pose",
    "mota",
    "mota_counts",
    "multilabel_likelihood",
    "neighbor_weight",
    "normalize_confidences",
    "normalized_wasserstein",
    "p3p_solve",
    "pixel_to_bearing",
    "prior_graph_from_nodes",
    "project_quadric_to_bbox",
    "quadric_from_params",
    "render_frame",
    "render_sequence",
    "score_all_pairs",
    "shannon_entropy",
    "similarity_score",
    "success_rate",
    "top_k_labels",
    "translation_error",
    "wasserstein2_squared",
]
