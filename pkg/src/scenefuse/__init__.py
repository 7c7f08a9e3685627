"""Scene-image feature fusion and classification toolkit.

Extracts foreground, background, and hybrid deep features from three
pre-trained VGG-16 backbones, encodes and fuses them, and classifies with
L2-regularized logistic regression.
"""

from .backbone import (
    ImageSample,
    LayerId,
    ModelRegistry,
    PreprocessSpec,
    load_registry,
    preprocess,
)
from .classifier import (
    LabeledDataset,
    TrainedModel,
    TrainingConfig,
    grid_search,
    predict,
    score,
    train_binary,
    train_ovr,
)
from .experiments import (
    ExperimentPlan,
    ResultRecord,
    ablate_aggregation,
    ablate_combinations,
    ablate_individual,
    ablate_layers,
    report,
    run_extract,
    run_plan,
    run_train_eval,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .manifest import (
    Protocol,
    SampleManifest,
    SplitSuite,
    parse_manifest,
    validate_protocol,
)
from .pipeline import (
    AggregationMethod,
    EncodingConfig,
    FeatureTensor,
    FeatureVector,
    FusedFeature,
    Stage,
    StreamKind,
    aggregate,
    describe_stream,
    encode,
    extract_fused,
    gap,
    l2_normalize,
)
from .store import FeatureStore, read_store, store_read, store_write

__version__ = "0.1.0"

__all__ = [
    "AggregationMethod",
    "EncodingConfig",
    "ExperimentPlan",
    "FeatureStore",
    "FeatureTensor",
    "FeatureVector",
    "FusedFeature",
    "ImageSample",
    "KERNEL_BACKEND",
    "LabeledDataset",
    "LayerId",
    "ModelRegistry",
    "PreprocessSpec",
    "Protocol",
    "ResultRecord",
    "SampleManifest",
    "SplitSuite",
    "Stage",
    "StreamKind",
    "TrainedModel",
    "TrainingConfig",
    "aggregate",
    "ablate_aggregation",
    "ablate_combinations",
    "ablate_individual",
    "ablate_layers",
    "describe_stream",
    "encode",
    "extract_fused",
    "gap",
    "grid_search",
    "l2_normalize",
    "load_registry",
    "parse_manifest",
    "predict",
    "preprocess",
    "read_store",
    "report",
    "run_extract",
    "run_plan",
    "run_train_eval",
    "score",
    "store_read",
    "store_write",
    "train_binary",
    "train_ovr",
    "validate_protocol",
]
