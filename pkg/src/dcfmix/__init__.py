"""Depth-guided contextual filtering for class-mix self-training.

The package covers the full loop on synthetic two-domain corpora: scene I/O,
per-class depth statistics, class-mix compositing, the depth-consistency
filter itself, segmentation/depth losses, attention-based feature fusion with
hand-written gradients, a procedural scene generator, and a small numpy
self-training harness.
"""

from .errors import (
    BadEncoding,
    BinningMismatch,
    ClassOutOfRange,
    ConfigError,
    DcfMixError,
    DimensionMismatch,
    EmptySource,
    InvalidArgument,
    InvalidSpec,
    IoFailure,
    ShapeMismatch,
)
from .scene import (
    IGNORE,
    INVALID_DEPTH,
    MAX_ENCODABLE_DEPTH,
    CorpusManifest,
    DepthMap,
    Image,
    LabelMap,
    ManifestEntry,
    MixMask,
    SceneSample,
    load_mask,
    load_sample,
    overlay_mask,
    save_mask,
    save_sample,
)
from .depth_stats import (
    INVALID_BIN,
    ClassDepthHistogram,
    DepthBinning,
    bin_map,
    bin_of,
    class_depth_histogram,
    histogram_delta,
    histogram_to_json,
    make_binning,
)
from .mixer import ClassSelection, build_mask, composite, select_classes
from .dcf import (
    STUFF_TAU,
    THING_TAU,
    ClassFilterStats,
    FilterReport,
    ThresholdTable,
    apply_filtered_mask,
    dcf_filter,
    default_thresholds,
)
from .losses import (
    DEFAULT_LAMBDA_DEPTH,
    LossValue,
    ProbMap,
    berhu,
    cross_entropy,
    softmax,
    total_loss,
)
from .afo import (
    BlockParams,
    FeatureMap,
    FusionParams,
    GateMap,
    apply_gate,
    attention_fuse,
    fuse_concat,
    gate,
    grad_check,
    init_params,
    load_params,
    multimodal_communicate,
    params_to_vector,
    save_params,
    squared_sum_head,
    standardize,
    vector_to_params,
    zero_head,
    zero_params,
)
from .synth import (
    ClassSpec,
    SceneSpec,
    desk_scene_spec,
    expected_histogram,
    generate,
    load_spec,
    sample_class_depths,
    tv_distance,
)
from .harness import (
    EvalResult,
    ToyModel,
    TrainConfig,
    evaluate,
    extract_features,
    pseudo_label,
    read_log,
    train,
    write_log,
)

__version__ = "0.1.0"

__all__ = [
    "DcfMixError", "DimensionMismatch", "ShapeMismatch", "BinningMismatch",
    "BadEncoding", "ClassOutOfRange", "IoFailure", "InvalidArgument",
    "EmptySource", "InvalidSpec", "ConfigError",
    "IGNORE", "INVALID_DEPTH", "MAX_ENCODABLE_DEPTH",
    "LabelMap", "DepthMap", "Image", "MixMask", "SceneSample",
    "ManifestEntry", "CorpusManifest",
    "load_sample", "save_sample", "overlay_mask", "save_mask", "load_mask",
    "INVALID_BIN", "DepthBinning", "make_binning", "bin_of", "bin_map",
    "ClassDepthHistogram", "class_depth_histogram", "histogram_delta",
    "histogram_to_json",
    "ClassSelection", "select_classes", "build_mask", "composite",
    "STUFF_TAU", "THING_TAU", "ThresholdTable", "default_thresholds",
    "ClassFilterStats", "FilterReport", "dcf_filter", "apply_filtered_mask",
    "ProbMap", "LossValue", "softmax", "cross_entropy", "berhu", "total_loss",
    "DEFAULT_LAMBDA_DEPTH",
    "FeatureMap", "GateMap", "BlockParams", "FusionParams",
    "init_params", "zero_params", "standardize", "fuse_concat",
    "attention_fuse", "gate", "apply_gate", "multimodal_communicate",
    "grad_check", "save_params", "load_params",
    "ClassSpec", "SceneSpec", "load_spec", "generate", "expected_histogram",
    "tv_distance", "desk_scene_spec", "sample_class_depths",
    "ToyModel", "TrainConfig", "train", "evaluate", "EvalResult",
    "pseudo_label", "extract_features", "write_log", "read_log",
    "__version__",
]
