"""Lane-instance toolkit.

Library and CLI for the pipeline around instance-embedding lane detectors:
ground-truth target generation from lane polylines, the discriminative
clustering loss with verified analytic gradients, parameter-free threshold
clustering of embeddings into lane instances, and the point-accuracy and
stroked-IoU F1 benchmark metrics with report writing.
"""

from .clustering import ClusterConfig, partition_agreement, threshold_cluster
from .geometry import (
    BinaryMask,
    DrivableMask,
    HeatMap,
    ImageGrid,
    InstanceMap,
    LanePolyline,
    mask_iou,
    rasterize_lane,
    smooth_point_map,
    targets_from_lanes,
)
from .losses import (
    ClusterAssignment,
    EmbeddingField,
    LossParams,
    LossValue,
    OptimizeResult,
    cluster_means,
    clustering_loss,
    distance_loss,
    finite_diff_check,
    l2_loss,
    optimize_embeddings,
    variance_loss,
    weighted_binary_ce,
)
from .metrics import (
    Category,
    CulaneFrame,
    EvalReport,
    TuSimpleFrame,
    aggregate_by_category,
    culane_f1,
    tusimple_accuracy,
)
from .synth import Scene, SceneSpec, generate_scene

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Category",
    "ClusterAssignment",
    "ClusterConfig",
    "CulaneFrame",
    "DrivableMask",
    "EmbeddingField",
    "EvalReport",
    "HeatMap",
    "ImageGrid",
    "InstanceMap",
    "LanePolyline",
    "LossParams",
    "LossValue",
    "OptimizeResult",
    "Scene",
    "SceneSpec",
    "TuSimpleFrame",
    "aggregate_by_category",
    "cluster_means",
    "clustering_loss",
    "culane_f1",
    "distance_loss",
    "finite_diff_check",
    "generate_scene",
    "l2_loss",
    "mask_iou",
    "optimize_embeddings",
    "partition_agreement",
    "rasterize_lane",
    "smooth_point_map",
    "targets_from_lanes",
    "threshold_cluster",
    "tusimple_accuracy",
    "variance_loss",
    "weighted_binary_ce",
]
