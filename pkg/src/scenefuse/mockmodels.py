"""Tiny stand-in backbones for tests and demos.

Real pre-trained weights are hundreds of megabytes and license-encumbered,
so the test suite runs on generated mock models: the same thirteen-layer
topology and layer names, the same channel counts (so every pooling stage
has its real output shape), but 1x1 kernels with seeded random weights.
Files are a few megabytes and inference stays fast.
"""

import configparser
import hashlib
from pathlib import Path

import h5py
import numpy as np

from .pipeline import StreamKind
from .vgg import CONV_LAYERS, INPUT_CHANNELS


def write_mock_backbone(path, seed: int) -> Path:
    """Write one mock model file; same seed, byte-identical weights."""
    path = Path(path)
    rng = np.random.default_rng(seed)
    with h5py.File(path, "w") as fh:
        root = fh.create_group("model_weights")
        previous = INPUT_CHANNELS
        for name, out_channels in CONV_LAYERS:
            group = root.create_group(name).create_group(name)
            # He-style scaling keeps activation magnitudes stable through
            # thirteen ReLU layers.
            kernel = rng.normal(
                scale=np.sqrt(2.0 / previous),
                size=(1, 1, previous, out_channels),
            ).astype(np.float32)
            bias = np.full(out_channels, 0.01, dtype=np.float32)
            group.create_dataset("kernel:0", data=kernel, track_times=False)
            group.create_dataset("bias:0", data=bias, track_times=False)
            previous = out_channels
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_mock_assets(out_dir, seed: int = 0) -> Path:
    """Generate the three mock backbones plus a verified registry config.

    Returns the path of the written registry file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser()
    for offset, kind in enumerate(StreamKind):
        model_path = write_mock_backbone(
            out_dir / f"mock_{kind.value}.h5", seed=seed + offset
        )
        parser[kind.value] = {
            "path": model_path.name,
            "sha256": _sha256(model_path),
        }
    parser["preprocessing"] = {
        "resize_filter": "bilinear",
        "channel_order": "bgr",
        "mean_offsets": "103.939, 116.779, 123.68",
    }
    registry_path = out_dir / "registry.ini"
    with open(registry_path, "w", encoding="utf-8") as fh:
        parser.write(fh)
    return registry_path
