"""Backbone assets: registry config, image preprocessing, activations.

A registry is an INI file with one section per stream backbone and an
optional preprocessing section::

    [foreground]
    path = fg.h5
    sha256 = <hex digest>

    [background]
    ...

    [hybrid]
    ...

    [preprocessing]
    resize_filter = bilinear
    channel_order = bgr
    mean_offsets = 103.939, 116.779, 123.68

Paths are resolved relative to the config file. Checksums are verified at
load; graphs are validated against the fixed VGG-16 topology.
"""

import configparser
import hashlib
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError, ModelAssetError
from .pipeline import FeatureTensor, StreamKind
from .vgg import Vgg16Trunk

INPUT_SIZE = 224


class LayerId(enum.Enum):
    """The five pooling stages; values are (height, width, depth) at 224 input."""

    P1 = (112, 112, 64)
    P2 = (56, 56, 128)
    P3 = (28, 28, 256)
    P4 = (14, 14, 512)
    P5 = (7, 7, 512)

    @property
    def external_name(self) -> str:
        return f"block{self.name[1]}_pool"

    @property
    def shape(self) -> tuple:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "LayerId":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ModelAssetError(
                f"unknown layer {text!r}; expected one of p1..p5"
            ) from None


_RESIZE_FILTERS = {
    "nearest": Image.Resampling.NEAREST,
    "bilinear": Image.Resampling.BILINEAR,
    "bicubic": Image.Resampling.BICUBIC,
    "lanczos": Image.Resampling.LANCZOS,
}


@dataclass(frozen=True)
class PreprocessSpec:
    """Deterministic image-to-tensor policy.

    ``mean_offsets`` are subtracted after channel reordering, i.e. they are
    given in the output channel order. The defaults match the convention
    the pre-trained assets of this model family were published with.
    """

    resize_filter: str = "bilinear"
    channel_order: str = "bgr"
    mean_offsets: tuple = (103.939, 116.779, 123.68)

    def __post_init__(self):
        if self.resize_filter not in _RESIZE_FILTERS:
            raise ModelAssetError(
                f"unknown resize filter {self.resize_filter!r}; expected one "
                f"of {sorted(_RESIZE_FILTERS)}"
            )
        if self.channel_order not in ("rgb", "bgr"):
            raise ModelAssetError("channel_order must be 'rgb' or 'bgr'")
        if len(self.mean_offsets) != 3:
            raise ModelAssetError("mean_offsets needs exactly 3 values")


@dataclass(frozen=True)
class ImageSample:
    """A manifest image: source path plus a stable string id."""

    path: Path
    id: str

    @classmethod
    def from_path(cls, path, id: str | None = None) -> "ImageSample":
        path = Path(path)
        return cls(path=path, id=id if id is not None else str(path))

    def decode(self) -> Image.Image:
        try:
            image = Image.open(self.path)
            image.load()
        except FileNotFoundError as exc:
            raise ImageError(f"{self.id}: image file missing: {exc}") from exc
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageError(f"{self.id}: cannot decode image: {exc}") from exc
        if image.width == 0 or image.height == 0:
            raise ImageError(f"{self.id}: zero-area image")
        return image.convert("RGB")


def preprocess(sample, spec: PreprocessSpec = PreprocessSpec()) -> np.ndarray:
    """Decode, resize to 224x224, reorder channels, subtract offsets.

    Accepts a path, an ImageSample, a PIL image, or an (h, w, 3) uint8
    array; same input bytes always produce an identical float32 tensor.
    """
    if isinstance(sample, (str, Path)):
        sample = ImageSample.from_path(sample)
    if isinstance(sample, ImageSample):
        image = sample.decode()
    elif isinstance(sample, Image.Image):
        image = sample.convert("RGB")
    else:
        arr = np.asarray(sample)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"expected an (h, w, 3) array, got {arr.shape}")
        image = Image.fromarray(arr.astype(np.uint8), mode="RGB")
    if image.size != (INPUT_SIZE, INPUT_SIZE):
        image = image.resize(
            (INPUT_SIZE, INPUT_SIZE), _RESIZE_FILTERS[spec.resize_filter]
        )
    tensor = np.asarray(image, dtype=np.float32)
    if spec.channel_order == "bgr":
        tensor = tensor[:, :, ::-1]
    return tensor - np.asarray(spec.mean_offsets, dtype=np.float32)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ModelAsset:
    kind: StreamKind
    path: Path
    sha256: str


class ModelRegistry:
    """Verified backbone assets plus the preprocessing spec.

    Loading verifies checksums and validates every graph against the fixed
    topology. Trunks are cached after first use and shareable across
    workers; activation calls are pure.
    """

    def __init__(self, assets: dict, spec: PreprocessSpec):
        missing = [k.value for k in StreamKind if k not in assets]
        if missing:
            raise ModelAssetError(
                f"registry is missing backbone(s): {', '.join(missing)}"
            )
        self.assets = dict(assets)
        self.spec = spec
        self._trunks = {}

    def trunk(self, kind: StreamKind) -> Vgg16Trunk:
        if kind not in self._trunks:
            self._trunks[kind] = Vgg16Trunk.from_h5(self.assets[kind].path)
        return self._trunks[kind]

    def activations(self, kind: StreamKind, layer: LayerId, tensor: np.ndarray) -> FeatureTensor:
        """Activation block of one pooling layer for a preprocessed input."""
        block = self.trunk(kind).pool_output(tensor, layer.external_name)
        if block.shape != layer.shape:
            raise ModelAssetError(
                f"{kind.value} {layer.external_name}: output shape "
                f"{block.shape} != expected {layer.shape} (wrong model asset?)"
            )
        if not np.isfinite(block).all():
            raise ModelAssetError(
                f"{kind.value} {layer.external_name}: non-finite activations"
            )
        return FeatureTensor.from_hwc(block.astype(np.float64))

    def extractor(self, kind: StreamKind, layer: LayerId):
        """Callable mapping an image sample to one stream's FeatureTensor."""

        def extract(sample) -> FeatureTensor:
            return self.activations(kind, layer, preprocess(sample, self.spec))

        return extract


def load_registry(config_path, verify: bool = True) -> ModelRegistry:
    """Parse and verify a registry config file."""
    config_path = Path(config_path)
    if not config_path.is_file():
        raise ModelAssetError(f"registry config not found: {config_path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(config_path, encoding="utf-8")
    except configparser.Error as exc:
        raise ModelAssetError(f"{config_path}: bad config: {exc}") from exc

    if parser.has_section("preprocessing"):
        section = parser["preprocessing"]
        offsets = section.get("mean_offsets", "")
        try:
            mean_offsets = (
                tuple(float(v) for v in offsets.split(","))
                if offsets.strip()
                else PreprocessSpec.mean_offsets
            )
        except ValueError:
            raise ModelAssetError(
                f"{config_path}: mean_offsets must be comma-separated numbers"
            ) from None
        spec = PreprocessSpec(
            resize_filter=section.get(
                "resize_filter", PreprocessSpec.resize_filter
            ),
            channel_order=section.get(
                "channel_order", PreprocessSpec.channel_order
            ),
            mean_offsets=mean_offsets,
        )
    else:
        spec = PreprocessSpec()

    missing = [k.value for k in StreamKind if not parser.has_section(k.value)]
    if missing:
        raise ModelAssetError(
            f"{config_path}: missing [{missing[0]}] section"
            + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else "")
        )

    assets = {}
    for kind in StreamKind:
        section = parser[kind.value]
        if "path" not in section:
            raise ModelAssetError(
                f"{config_path}: [{kind.value}] has no path"
            )
        path = Path(section["path"])
        if not path.is_absolute():
            path = config_path.parent / path
        if not path.is_file():
            raise ModelAssetError(
                f"{kind.value} model file not found: {path}"
            )
        declared = section.get("sha256", "").strip().lower()
        if verify:
            if not declared:
                raise ModelAssetError(
                    f"{config_path}: [{kind.value}] has no sha256"
                )
            actual = _sha256(path)
            if actual != declared:
                raise ModelAssetError(
                    f"{kind.value} checksum mismatch for {path}: "
                    f"declared {declared[:12]}…, file is {actual[:12]}…"
                )
        assets[kind] = ModelAsset(kind, path, declared)

    registry = ModelRegistry(assets, spec)
    if verify:
        for kind in StreamKind:
            registry.trunk(kind)
    return registry
