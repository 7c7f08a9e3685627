"""Experiment orchestration: extraction, training, evaluation, ablations.

An ExperimentPlan names everything an experiment depends on; extraction
results are cached in per-(stream, layer, split) feature stores whose file
names embed a content hash of the manifest and registry, so stale caches
are never silently reused. All randomness flows from the plan seed, and the
default report output excludes wall-clock timings so identical runs produce
byte-identical reports; timings are an opt-in column set.
"""

import csv
import dataclasses
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import ImageSample, LayerId, load_registry, preprocess
from .classifier import LabeledDataset, TrainingConfig, grid_search, score
from .errors import ExtractionError, ImageError, PlanError, StoreError
from .manifest import SplitSuite, parse_manifest
from .pipeline import (
    CANONICAL_ORDER,
    AggregationMethod,
    StreamKind,
    describe_stream,
)
from .store import FeatureStore, read_store

#: Short stream letters used on the command line and in reports.
STREAM_LETTERS = {
    "f": StreamKind.FOREGROUND,
    "b": StreamKind.BACKGROUND,
    "h": StreamKind.HYBRID,
}
LETTER_OF = {kind: letter for letter, kind in STREAM_LETTERS.items()}

CACHE_ENV = "SCENEFUSE_CACHE"


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one experiment depends on, in one hashable record."""

    manifest_path: Path
    registry_path: Path
    streams: tuple = CANONICAL_ORDER
    layer: LayerId = LayerId.P5
    method: AggregationMethod = AggregationMethod.CONCAT
    c_grid: tuple = TrainingConfig.c_grid
    cv_folds: int = 5
    seed: int = 0
    out_dir: Path = Path("scenefuse-out")

    def __post_init__(self):
        object.__setattr__(self, "manifest_path", Path(self.manifest_path))
        object.__setattr__(self, "registry_path", Path(self.registry_path))
        object.__setattr__(self, "streams", tuple(self.streams))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.streams:
            raise PlanError("plan needs at least one stream")
        if len(set(self.streams)) != len(self.streams):
            raise PlanError("duplicate stream in plan")

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            c_grid=tuple(self.c_grid), cv_folds=self.cv_folds, seed=self.seed
        )

    def store_dir(self) -> Path:
        override = os.environ.get(CACHE_ENV)
        return Path(override) if override else self.out_dir / "stores"

    def describe(self) -> dict:
        """JSON-able echo of every field that affects results."""
        grid = [float(c) for c in self.c_grid]
        if len(grid) > 2 and grid == [grid[0] + k for k in range(len(grid))]:
            grid_text = f"{grid[0]:g}..{grid[-1]:g}"
        else:
            grid_text = ",".join(f"{c:g}" for c in grid)
        return {
            "manifest": str(self.manifest_path),
            "registry": str(self.registry_path),
            "streams": "".join(LETTER_OF[s] for s in self.streams),
            "layer": self.layer.name.lower(),
            "aggregation": self.method.value,
            "c_grid": grid_text,
            "cv_folds": self.cv_folds,
            "seed": self.seed,
        }

    def plan_hash(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _input_digest(self) -> str:
        digest = hashlib.sha256()
        try:
            digest.update(self.manifest_path.read_bytes())
            digest.update(self.registry_path.read_bytes())
        except OSError as exc:
            raise PlanError(f"cannot read plan input: {exc}") from exc
        return digest.hexdigest()[:10]

    def store_path(self, stream: StreamKind, tag: str) -> Path:
        safe_tag = tag.replace("/", "__")
        name = (
            f"{stream.value}_{self.layer.name.lower()}_{safe_tag}"
            f"_{self._input_digest()}.sfv"
        )
        return self.store_dir() / name


@dataclass
class ExtractOutcome:
    """What one extraction pass did."""

    paths: dict
    inference_calls: int
    images_processed: int
    skipped: tuple
    seconds: float


def run_extract(plan: ExperimentPlan, force: bool = False, log=None) -> ExtractOutcome:
    """Fill the per-(stream, split-tag) feature stores for a plan.

    Stores already on disk are reused unless ``force`` is set; a full cache
    hit performs no model loading and no inference. Per-image decode
    failures are logged and skipped, but a category losing every image in
    some split tag aborts the run.
    """
    log = log or (lambda message: None)
    started = time.perf_counter()
    manifest = parse_manifest(plan.manifest_path)
    index = manifest.category_index()

    paths = {}
    todo = {}
    for tag in manifest.split_tags:
        for stream in plan.streams:
            path = plan.store_path(stream, tag)
            paths[(stream, tag)] = path
            if force or not path.is_file():
                todo.setdefault(tag, []).append(stream)
    if not todo:
        return ExtractOutcome(paths, 0, 0, (), time.perf_counter() - started)

    registry = load_registry(plan.registry_path)
    plan.store_dir().mkdir(parents=True, exist_ok=True)
    calls = 0
    processed = 0
    skipped = []
    for tag, streams in sorted(todo.items(), key=lambda kv: kv[0]):
        records = manifest.subset(tag)
        writers = {}
        temp_paths = {}
        try:
            for stream in streams:
                final = paths[(stream, tag)]
                temp = final.with_suffix(final.suffix + ".tmp")
                descriptor = (
                    f"{stream.value}|{plan.layer.name.lower()}|{tag}|"
                    f"{plan.manifest_path}"
                )
                writers[stream] = FeatureStore(
                    temp, plan.layer.shape[2], descriptor
                )
                temp_paths[stream] = temp
            survivors = {category: 0 for category in manifest.categories}
            for record in records:
                sample = ImageSample.from_path(record.path)
                try:
                    tensor = preprocess(sample, registry.spec)
                except ImageError as exc:
                    skipped.append((record.path, str(exc)))
                    log(f"skip {record.path}: {exc}")
                    continue
                for stream in streams:
                    block = registry.activations(stream, plan.layer, tensor)
                    calls += 1
                    vector = describe_stream(block)
                    writers[stream].append(index[record.category], vector)
                survivors[record.category] += 1
                processed += 1
            present = {r.category for r in records}
            lost = [
                category
                for category in sorted(present)
                if survivors[category] == 0
            ]
            if lost:
                raise ExtractionError(
                    f"split {tag!r}: category {lost[0]!r} lost all its "
                    f"images ({len(lost)} categor(ies) affected)"
                )
            for stream in streams:
                writers[stream].close()
                os.replace(temp_paths[stream], paths[(stream, tag)])
        finally:
            for stream, writer in writers.items():
                writer.close()
                temp_paths[stream].unlink(missing_ok=True)
    return ExtractOutcome(
        paths, calls, processed, tuple(skipped), time.perf_counter() - started
    )


def _fuse_matrix(plan: ExperimentPlan, blocks: list) -> np.ndarray:
    """Row-wise aggregation of per-stream feature matrices.

    Matches the single-vector ``aggregate`` semantics: ordered horizontal
    concatenation, or an elementwise reduction over streams.
    """
    if len(blocks) == 1:
        return blocks[0]
    if plan.method is AggregationMethod.CONCAT:
        return np.hstack(blocks)
    dims = {block.shape[1] for block in blocks}
    if len(dims) != 1:
        raise PlanError(
            f"elementwise {plan.method.value} needs equal stream dims, "
            f"got {sorted(dims)}"
        )
    stack = np.stack(blocks)
    if plan.method is AggregationMethod.MIN:
        return stack.min(axis=0)
    if plan.method is AggregationMethod.MAX:
        return stack.max(axis=0)
    return stack.mean(axis=0)


def load_fused_split(plan: ExperimentPlan, tag: str, class_count: int) -> LabeledDataset:
    blocks = []
    labels = None
    for stream in plan.streams:
        path = plan.store_path(stream, tag)
        if not path.is_file():
            raise StoreError(
                f"missing feature store for stream {stream.value!r}, "
                f"split {tag!r}: {path} (run extract first)"
            )
        contents = read_store(path)
        if labels is None:
            labels = contents.labels
        elif not np.array_equal(labels, contents.labels):
            raise StoreError(
                f"stores for split {tag!r} disagree on row labels"
            )
        blocks.append(contents.features)
    return LabeledDataset(_fuse_matrix(plan, blocks), labels, class_count)


@dataclass
class ResultRecord:
    """One experiment outcome: plan echo, accuracy, audit, timings."""

    label: str
    plan: dict
    plan_sha256: str
    accuracy: float
    per_split: tuple
    chosen_c: tuple
    timings: dict

    def as_dict(self, include_timings: bool = False) -> dict:
        row = {
            "label": self.label,
            "accuracy": self.accuracy,
            "accuracy_pct": f"{100.0 * self.accuracy:.1f}",
            "chosen_c": ";".join(f"{c:g}" for c in self.chosen_c),
            "per_split": ";".join(
                f"{name}={acc:.6f}" for name, acc in self.per_split
            ),
            "plan_sha256": self.plan_sha256,
            **{f"plan_{key}": value for key, value in sorted(self.plan.items())},
        }
        if include_timings:
            row.update(
                {f"seconds_{key}": value for key, value in sorted(self.timings.items())}
            )
        return row

    def verify_echo(self) -> bool:
        """Recompute the hash of the echoed plan and compare."""
        text = json.dumps(self.plan, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest() == self.plan_sha256


def run_train_eval(
    plan: ExperimentPlan,
    label: str = "eval",
    extract_seconds: float = 0.0,
    images_processed: int = 0,
) -> ResultRecord:
    """Grid-search C on each pair's train features, evaluate on its test."""
    manifest = parse_manifest(plan.manifest_path)
    suite = SplitSuite.from_manifest(manifest)
    class_count = len(suite.categories)

    per_split = []
    chosen = []
    train_seconds = 0.0
    test_seconds = 0.0
    test_rows = 0
    for pair in suite.pairs:
        prefix = "" if pair.name == "default" else f"{pair.name}/"
        train = load_fused_split(plan, f"{prefix}train", class_count)
        test = load_fused_split(plan, f"{prefix}test", class_count)

        t0 = time.perf_counter()
        model = grid_search(train, plan.training_config())
        t1 = time.perf_counter()
        accuracy = score(model, test)
        t2 = time.perf_counter()

        train_seconds += t1 - t0
        test_seconds += t2 - t1
        test_rows += len(test)
        per_split.append((pair.name, accuracy))
        chosen.append(model.chosen_c)

    mean_accuracy = float(np.mean([acc for _, acc in per_split]))
    timings = {
        "extract": extract_seconds,
        "train": train_seconds,
        "test": test_seconds,
        "per_image": (
            extract_seconds / images_processed if images_processed else 0.0
        ),
        "per_test_sample": test_seconds / test_rows if test_rows else 0.0,
    }
    return ResultRecord(
        label=label,
        plan=plan.describe(),
        plan_sha256=plan.plan_hash(),
        accuracy=mean_accuracy,
        per_split=tuple(per_split),
        chosen_c=tuple(chosen),
        timings=timings,
    )


def run_plan(
    plan: ExperimentPlan, label: str = "eval", force: bool = False, log=None
) -> ResultRecord:
    """Extract (cache-aware) then train and evaluate."""
    outcome = run_extract(plan, force=force, log=log)
    return run_train_eval(
        plan,
        label=label,
        extract_seconds=outcome.seconds,
        images_processed=outcome.images_processed,
    )


def ablate_layers(plan: ExperimentPlan, force: bool = False, log=None) -> list:
    """Re-run the fixed plan at every pooling stage."""
    records = []
    for layer in LayerId:
        variant = dataclasses.replace(plan, layer=layer)
        records.append(
            run_plan(variant, f"layers:{layer.name.lower()}", force, log)
        )
    return records


def ablate_individual(plan: ExperimentPlan, force: bool = False, log=None) -> list:
    """Train on each stream alone (no aggregation)."""
    records = []
    for stream in CANONICAL_ORDER:
        variant = dataclasses.replace(plan, streams=(stream,))
        records.append(
            run_plan(variant, f"stream:{LETTER_OF[stream]}", force, log)
        )
    return records


def ablate_aggregation(plan: ExperimentPlan, force: bool = False, log=None) -> list:
    """Compare the four aggregation methods on the full stream set."""
    records = []
    for method in AggregationMethod:
        variant = dataclasses.replace(plan, method=method)
        records.append(run_plan(variant, f"agg:{method.value}", force, log))
    return records


#: Stream subsets of the combined-features study, in report order.
COMBINATIONS = (
    (StreamKind.FOREGROUND, StreamKind.BACKGROUND),
    (StreamKind.FOREGROUND, StreamKind.HYBRID),
    (StreamKind.BACKGROUND, StreamKind.HYBRID),
    CANONICAL_ORDER,
)


def ablate_combinations(plan: ExperimentPlan, force: bool = False, log=None) -> list:
    """Concatenate every two- and three-stream combination."""
    records = []
    for streams in COMBINATIONS:
        variant = dataclasses.replace(
            plan, streams=streams, method=AggregationMethod.CONCAT
        )
        name = "+".join(LETTER_OF[s] for s in streams)
        records.append(run_plan(variant, f"combo:{name}", force, log))
    return records


def report(records, fmt: str = "csv", include_timings: bool = False) -> str:
    """Render records as CSV or JSON lines with a stable column order."""
    rows = [record.as_dict(include_timings) for record in records]
    if fmt == "json-lines":
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    if fmt != "csv":
        raise PlanError(f"unknown report format {fmt!r}")
    if not rows:
        return ""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()
