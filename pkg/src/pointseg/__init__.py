"""Point-supervised cell segmentation: label encodings from center points,
a multi-loss trained pixel classifier, instance post-processing, and an
evaluation suite, all reachable from one CLI."""

from .encode import (
    LABEL_BG,
    LABEL_FG,
    LABEL_IGNORED,
    PointSet,
    RepelMap,
    RepelParams,
    TriStateLabelMap,
    VoronoiPartition,
    disk_mask,
    filtered_repel,
    global_cluster_baseline,
    local_cluster_encode,
    repel_encode,
    round_pixel,
    voronoi_encode,
)
from .loss import (
    LossKind,
    ProbabilityMap,
    SchedulerState,
    cluster_loss,
    naive_sum_loss,
    repel_loss,
    select_loss,
    voronoi_loss,
)
from .model import (
    ModelParams,
    TrainConfig,
    TrainingDiverged,
    finite_diff_check,
    forward,
    init_params,
    loss_gradient,
    loss_value,
    train,
)
from .post import DetectionSet, InstanceMask, argmax_mask, detect_cells, extract_instances
from .metrics import (
    DegenerateMetricWarning,
    DetReport,
    SegReport,
    aji,
    ccc,
    detection_metrics,
    object_dice,
    pixel_metrics,
    seg_report,
)
from .data import (
    Sample,
    SynthSpec,
    augment_sample,
    extract_patches,
    generate_synthetic,
    load_dataset,
    normalize,
    split_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "LABEL_BG",
    "LABEL_FG",
    "LABEL_IGNORED",
    "PointSet",
    "RepelMap",
    "RepelParams",
    "TriStateLabelMap",
    "VoronoiPartition",
    "disk_mask",
    "filtered_repel",
    "global_cluster_baseline",
    "local_cluster_encode",
    "repel_encode",
    "round_pixel",
    "voronoi_encode",
    "LossKind",
    "ProbabilityMap",
    "SchedulerState",
    "cluster_loss",
    "naive_sum_loss",
    "repel_loss",
    "select_loss",
    "voronoi_loss",
    "ModelParams",
    "TrainConfig",
    "TrainingDiverged",
    "finite_diff_check",
    "forward",
    "init_params",
    "loss_gradient",
    "loss_value",
    "train",
    "DetectionSet",
    "InstanceMask",
    "argmax_mask",
    "detect_cells",
    "extract_instances",
    "DegenerateMetricWarning",
    "DetReport",
    "SegReport",
    "aji",
    "ccc",
    "detection_metrics",
    "object_dice",
    "pixel_metrics",
    "seg_report",
    "Sample",
    "SynthSpec",
    "augment_sample",
    "extract_patches",
    "generate_synthetic",
    "load_dataset",
    "normalize",
    "split_dataset",
]
