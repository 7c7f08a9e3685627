"""Shared fixtures: mock backbone assets and a synthetic image corpus.

Both are session-scoped — generating backbones and extracting features is
the expensive part of the suite, so every module shares one copy.
"""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from scenefuse.mockmodels import write_mock_assets

#: Per-category base colors of the synthetic corpus; chosen far apart so
#: the extracted features are linearly separable.
CATEGORY_COLORS = {
    "forest": (185, 42, 28),
    "harbor": (30, 180, 60),
    "lobby": (40, 62, 205),
}

TRAIN_PER_CATEGORY = 4
TEST_PER_CATEGORY = 2


@pytest.fixture(scope="session")
def mock_registry(tmp_path_factory) -> Path:
    """Registry config pointing at three freshly generated mock backbones."""
    assets = tmp_path_factory.mktemp("assets")
    return write_mock_assets(assets, seed=3)


def write_corpus(root: Path, seed: int = 11) -> Path:
    """Write the 3-class separable image set plus its manifest."""
    rng = np.random.default_rng(seed)
    lines = ["# synthetic 3-class corpus"]
    per_class = TRAIN_PER_CATEGORY + TEST_PER_CATEGORY
    for category, base in CATEGORY_COLORS.items():
        for i in range(per_class):
            pixels = np.clip(
                np.asarray(base)[None, None, :]
                + rng.integers(-25, 25, size=(32, 32, 3)),
                0,
                255,
            ).astype(np.uint8)
            path = root / f"{category}_{i}.png"
            Image.fromarray(pixels).save(path)
            split = "train" if i < TRAIN_PER_CATEGORY else "test"
            lines.append(f"{path}\t{category}\t{split}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory) -> Path:
    return write_corpus(tmp_path_factory.mktemp("corpus"))


#: Pass/fail lines collected by the acceptance suite, printed at the end of
#: the terminal summary so they are visible even with output capture on.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
