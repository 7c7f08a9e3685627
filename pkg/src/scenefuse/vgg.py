"""Numpy executor for the VGG-16 convolutional trunk.

The topology is fixed: thirteen 'same'-padded convolutions with ReLU,
interleaved with five 2x2/stride-2 max-pooling stages. Weights come from an
HDF5 file holding one kernel (4-d) and one bias (1-d) dataset per
convolution layer, found by layer name anywhere in the file's group tree —
the layout written by the common Keras exporters works as-is.

Only the channel counts are pinned per layer; the kernel's spatial size is
read from the file (the bundled mock backbones use 1x1 kernels, real assets
use 3x3), so one executor serves both.
"""

import h5py
import numpy as np

from .errors import ModelAssetError

#: The thirteen convolution layers in forward order: (name, out_channels).
CONV_LAYERS = (
    ("block1_conv1", 64),
    ("block1_conv2", 64),
    ("block2_conv1", 128),
    ("block2_conv2", 128),
    ("block3_conv1", 256),
    ("block3_conv2", 256),
    ("block3_conv3", 256),
    ("block4_conv1", 512),
    ("block4_conv2", 512),
    ("block4_conv3", 512),
    ("block5_conv1", 512),
    ("block5_conv2", 512),
    ("block5_conv3", 512),
)

#: Pooling stage emitted after each block's final convolution.
POOL_AFTER = {
    "block1_conv2": "block1_pool",
    "block2_conv2": "block2_pool",
    "block3_conv3": "block3_pool",
    "block4_conv3": "block4_pool",
    "block5_conv3": "block5_pool",
}

POOL_NAMES = tuple(POOL_AFTER.values())

INPUT_CHANNELS = 3


def conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """'same'-padded stride-1 convolution of an (h, w, cin) image.

    ``kernel`` is (kh, kw, cin, cout) with odd spatial dims; output is
    (h, w, cout), pre-activation.
    """
    kh, kw, cin, _ = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ModelAssetError(f"kernel spatial dims must be odd, got {kh}x{kw}")
    if x.shape[2] != cin:
        raise ModelAssetError(
            f"input has {x.shape[2]} channels, kernel expects {cin}"
        )
    padded = np.pad(x, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    # windows: (h, w, cin, kh, kw); contract cin, kh, kw against the kernel.
    out = np.tensordot(windows, kernel, axes=[(2, 3, 4), (2, 0, 1)])
    return out + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def maxpool_2x2(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pooling; spatial dims must be even."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ModelAssetError(f"pooling an odd-sized map {h}x{w}")
    return x.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))


def _collect_layer_weights(h5file, layer: str):
    """Find the kernel/bias datasets for one layer anywhere in the file."""
    found = {}

    def visit(name, obj):
        if not isinstance(obj, h5py.Dataset):
            return
        parts = name.split("/")
        if layer not in parts:
            return
        if obj.ndim == 4:
            found.setdefault("kernel", obj)
        elif obj.ndim == 1:
            found.setdefault("bias", obj)

    h5file.visititems(visit)
    if "kernel" not in found:
        raise ModelAssetError(f"layer {layer!r} has no 4-d kernel dataset")
    if "bias" not in found:
        raise ModelAssetError(f"layer {layer!r} has no 1-d bias dataset")
    return found["kernel"], found["bias"]


class Vgg16Trunk:
    """Loaded convolutional trunk; immutable and shareable after load."""

    def __init__(self, weights: dict):
        self._weights = {}
        previous = INPUT_CHANNELS
        for name, out_channels in CONV_LAYERS:
            if name not in weights:
                raise ModelAssetError(f"model is missing layer {name!r}")
            kernel, bias = weights[name]
            kernel = np.ascontiguousarray(kernel, dtype=np.float32)
            bias = np.ascontiguousarray(bias, dtype=np.float32)
            if kernel.ndim != 4:
                raise ModelAssetError(f"{name}: kernel must be 4-d")
            if kernel.shape[2] != previous or kernel.shape[3] != out_channels:
                raise ModelAssetError(
                    f"{name}: kernel channels {kernel.shape[2]}->"
                    f"{kernel.shape[3]}, topology requires "
                    f"{previous}->{out_channels}"
                )
            if bias.shape != (out_channels,):
                raise ModelAssetError(
                    f"{name}: bias shape {bias.shape} != ({out_channels},)"
                )
            self._weights[name] = (kernel, bias)
            previous = out_channels

    @classmethod
    def from_h5(cls, path) -> "Vgg16Trunk":
        try:
            with h5py.File(path, "r") as fh:
                weights = {}
                for name, _ in CONV_LAYERS:
                    kernel, bias = _collect_layer_weights(fh, name)
                    weights[name] = (np.array(kernel), np.array(bias))
        except OSError as exc:
            raise ModelAssetError(f"cannot read model file {path}: {exc}") from exc
        return cls(weights)

    def pool_output(self, image: np.ndarray, pool_name: str) -> np.ndarray:
        """Run the trunk up to one pooling stage and return its (h, w, c) map.

        ``image`` is a preprocessed (h, w, 3) tensor with h and w divisible
        by 32; inference runs in 32-bit floats.
        """
        if pool_name not in POOL_AFTER.values():
            raise ModelAssetError(f"unknown pooling layer {pool_name!r}")
        if image.ndim != 3 or image.shape[2] != INPUT_CHANNELS:
            raise ModelAssetError(
                f"expected an (h, w, 3) input, got shape {image.shape}"
            )
        x = np.ascontiguousarray(image, dtype=np.float32)
        for name, _ in CONV_LAYERS:
            kernel, bias = self._weights[name]
            x = relu(conv2d_same(x, kernel, bias))
            if name in POOL_AFTER:
                x = maxpool_2x2(x)
                if POOL_AFTER[name] == pool_name:
                    return x
        raise AssertionError("unreachable: pool name validated above")
