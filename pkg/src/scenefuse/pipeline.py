"""Feature pipeline: pooling, encoding, normalization, aggregation.

Each stream of a scene image goes through three stages: global average
pooling of a backbone activation block, mean-threshold/max-scale encoding,
and epsilon-guarded L2 normalization. The per-stream vectors are then
aggregated (elementwise min/max/mean or ordered concatenation) into the
final fused representation.

All operations are pure functions on immutable inputs and are safe to call
concurrently.
"""

import enum
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, TypeVar

import numpy as np

from . import kernels
from .errors import ExtractionError, PipelineError


class Stage(enum.Enum):
    """Which pipeline stage produced a vector."""

    GAP = "gap"
    ENCODED = "encoded"
    NORMALIZED = "normalized"
    FUSED = "fused"


class StreamKind(enum.Enum):
    """The three feature streams, named by what their backbone was trained on."""

    FOREGROUND = "foreground"
    BACKGROUND = "background"
    HYBRID = "hybrid"


#: Fixed stream order used when fusing the three canonical streams.
CANONICAL_ORDER = (StreamKind.FOREGROUND, StreamKind.BACKGROUND, StreamKind.HYBRID)


class AggregationMethod(enum.Enum):
    MIN = "min"
    MAX = "max"
    MEAN = "mean"
    CONCAT = "concat"


def _as_finite_f64(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).ravel()
    if arr.size and not np.isfinite(arr).all():
        raise PipelineError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureTensor:
    """One activation block of a pooling layer.

    ``values`` is flat, depth-major: entry ``j * (height*width) + i`` is the
    i-th spatial cell of the j-th feature map.
    """

    height: int
    width: int
    depth: int
    values: np.ndarray

    def __post_init__(self):
        if min(self.height, self.width, self.depth) <= 0:
            raise PipelineError("tensor dims must be positive")
        arr = _as_finite_f64(self.values, "feature tensor")
        if arr.size != self.height * self.width * self.depth:
            raise PipelineError(
                f"expected {self.height * self.width * self.depth} values, "
                f"got {arr.size}"
            )
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_hwc(cls, block: np.ndarray) -> "FeatureTensor":
        """Build from an (h, w, depth) array, e.g. a backbone layer output."""
        if block.ndim != 3:
            raise PipelineError(f"expected a 3-d block, got shape {block.shape}")
        h, w, d = block.shape
        flat = np.transpose(block, (2, 0, 1)).reshape(-1)
        return cls(height=h, width=w, depth=d, values=flat)

    def maps(self) -> np.ndarray:
        """(depth, h*w) view of the feature maps."""
        return self.values.reshape(self.depth, self.height * self.width)


@dataclass(frozen=True)
class FeatureVector:
    """A real vector at a known pipeline stage."""

    dim: int
    values: np.ndarray
    stage: Stage

    def __post_init__(self):
        arr = _as_finite_f64(self.values, "feature vector")
        if arr.size != self.dim:
            raise PipelineError(f"expected {self.dim} values, got {arr.size}")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class FusedFeature:
    """Aggregated multi-stream feature.

    ``composition`` records the stream order used to build ``values``;
    ``segments`` records each constituent's length so a concatenation can be
    split back into its streams bit-exactly.
    """

    values: np.ndarray
    composition: tuple
    method: AggregationMethod
    segments: tuple

    def __post_init__(self):
        arr = _as_finite_f64(self.values, "fused feature")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "composition", tuple(self.composition))
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.method is AggregationMethod.CONCAT:
            if sum(self.segments) != arr.size:
                raise PipelineError("segment lengths do not sum to vector length")

    @property
    def dim(self) -> int:
        return self.values.size

    def split(self) -> list[np.ndarray]:
        """Recover the constituent streams of a concatenation."""
        if self.method is not AggregationMethod.CONCAT:
            raise PipelineError("only concatenations can be split")
        bounds = np.cumsum(self.segments[:-1])
        return np.split(self.values, bounds)


@dataclass(frozen=True)
class EncodingConfig:
    """Numeric guards for the pipeline; epsilon only affects normalization."""

    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.epsilon > 0:
            raise PipelineError("epsilon must be positive")


def gap(t: FeatureTensor) -> FeatureVector:
    """Global average pooling: each feature map collapses to its mean."""
    pooled = kernels.gap_pool(np.ascontiguousarray(t.maps()))
    return FeatureVector(dim=t.depth, values=pooled, stage=Stage.GAP)


def encode(v: FeatureVector) -> FeatureVector:
    """Zero entries below the vector mean, scale survivors by the vector max.

    Entries exactly equal to the mean survive. For non-negative input the
    output lies in [0, 1]; a zero max yields the all-zero vector. Negative
    input is outside that regime, so it is processed as-is but flagged with
    a warning rather than rejected.
    """
    vals = v.values
    if vals.size and vals.min() < 0.0:
        warnings.warn(
            "encoding a vector with negative entries: the [0, 1] output "
            "range no longer holds (did you pool a non-rectified layer?)",
            stacklevel=2,
        )
    encoded = kernels.threshold_scale(np.ascontiguousarray(vals))
    return FeatureVector(dim=v.dim, values=encoded, stage=Stage.ENCODED)


def l2_normalize(v: FeatureVector, cfg: EncodingConfig = EncodingConfig()) -> FeatureVector:
    """Divide by the Euclidean norm plus epsilon; zero maps to zero."""
    scaled = v.values / (np.linalg.norm(v.values) + cfg.epsilon)
    return FeatureVector(dim=v.dim, values=scaled, stage=Stage.NORMALIZED)


def describe_stream(t: FeatureTensor, cfg: EncodingConfig = EncodingConfig()) -> FeatureVector:
    """Full single-stream pipeline: pool, encode, normalize."""
    return l2_normalize(encode(gap(t)), cfg)


def aggregate(
    streams: Sequence[FeatureVector],
    method: AggregationMethod,
    tags: Sequence[StreamKind] | None = None,
) -> FusedFeature:
    """Combine per-stream vectors into one fused feature.

    ``tags`` names each stream in order; when omitted, exactly three streams
    are assumed to be the canonical (foreground, background, hybrid) triple.
    """
    if len(streams) < 2:
        raise PipelineError("aggregation needs at least two streams")
    if tags is None:
        if len(streams) != len(CANONICAL_ORDER):
            raise PipelineError("stream tags are required unless exactly the "
                                "three canonical streams are given")
        tags = CANONICAL_ORDER
    if len(tags) != len(streams):
        raise PipelineError("one tag per stream required")

    arrays = [s.values for s in streams]
    if method is AggregationMethod.CONCAT:
        fused = np.concatenate(arrays)
    else:
        dims = {a.size for a in arrays}
        if len(dims) != 1:
            raise PipelineError(
                f"elementwise {method.value} needs equal dims, got "
                f"{sorted(s.dim for s in streams)}"
            )
        stack = np.stack(arrays)
        if method is AggregationMethod.MIN:
            fused = stack.min(axis=0)
        elif method is AggregationMethod.MAX:
            fused = stack.max(axis=0)
        else:
            fused = stack.mean(axis=0)
    return FusedFeature(
        values=fused,
        composition=tuple(tags),
        method=method,
        segments=tuple(a.size for a in arrays),
    )


ImageT = TypeVar("ImageT")

#: A stream extractor maps an image to the activation block of one backbone.
TensorSource = Callable[[ImageT], FeatureTensor]


def extract_fused(
    image: ImageT,
    extractors: Mapping[StreamKind, TensorSource],
    cfg: EncodingConfig = EncodingConfig(),
    method: AggregationMethod = AggregationMethod.CONCAT,
) -> FusedFeature:
    """Run all three streams on one image and aggregate them.

    Streams run in canonical order; a failing extractor is re-raised with
    the stream named.
    """
    missing = [k.value for k in CANONICAL_ORDER if k not in extractors]
    if missing:
        raise PipelineError(f"missing stream extractors: {', '.join(missing)}")
    vectors = []
    for kind in CANONICAL_ORDER:
        try:
            tensor = extractors[kind](image)
        except Exception as exc:
            raise ExtractionError(f"{kind.value} stream failed: {exc}") from exc
        vectors.append(describe_stream(tensor, cfg))
    return aggregate(vectors, method, CANONICAL_ORDER)
