"""Experiment runner: extraction cache, train/eval, ablations, CLI."""

import dataclasses
import json

import numpy as np
import pytest

import scenefuse.experiments as experiments
from scenefuse.backbone import LayerId
from scenefuse.cli import main, parse_c_grid, parse_streams
from scenefuse.errors import ExtractionError, PlanError, SolverError, StoreError
from scenefuse.experiments import (
    ExperimentPlan,
    ablate_aggregation,
    ablate_combinations,
    ablate_individual,
    ablate_layers,
    load_fused_split,
    report,
    run_extract,
    run_plan,
    run_train_eval,
)
from scenefuse.manifest import parse_manifest
from scenefuse.pipeline import (
    AggregationMethod,
    FeatureVector,
    Stage,
    StreamKind,
    aggregate,
)
from scenefuse.store import read_store, store_write

QUICK = dict(c_grid=(1.0, 2.0, 3.0, 4.0), cv_folds=2)


@pytest.fixture(scope="module")
def base_plan(corpus_manifest, mock_registry, tmp_path_factory):
    return ExperimentPlan(
        manifest_path=corpus_manifest,
        registry_path=mock_registry,
        out_dir=tmp_path_factory.mktemp("runs"),
        **QUICK,
    )


@pytest.fixture(scope="module")
def extracted(base_plan):
    return run_extract(base_plan)


class TestExtract:
    def test_six_image_manifest_gives_three_512_stores(
        self, corpus_manifest, mock_registry, tmp_path
    ):
        # Spec example: all three streams at the top layer over 6 images.
        source = parse_manifest(corpus_manifest)
        six = tmp_path / "six.tsv"
        lines = [
            f"{r.path}\t{r.category}\t{r.split}"
            for r in source.records
            if r.split == "train"
        ][:6]
        six.write_text("\n".join(lines) + "\n")
        plan = ExperimentPlan(six, mock_registry, out_dir=tmp_path, **QUICK)
        outcome = run_extract(plan)
        assert len(outcome.paths) == 3
        assert outcome.inference_calls == 18
        for path in outcome.paths.values():
            contents = read_store(path)
            assert contents.dim == 512
            assert contents.count == 6

    def test_all_splits_and_streams_extracted(self, base_plan, extracted):
        assert len(extracted.paths) == 6  # 3 streams x {train, test}
        assert extracted.images_processed == 18
        assert extracted.skipped == ()

    def test_rerun_is_a_cache_hit_with_no_model_loading(
        self, base_plan, extracted, monkeypatch
    ):
        def bomb(*args, **kwargs):
            raise AssertionError("cache hit must not load the registry")

        monkeypatch.setattr(experiments, "load_registry", bomb)
        outcome = run_extract(base_plan)
        assert outcome.inference_calls == 0
        assert outcome.paths == extracted.paths

    def test_force_re_extracts(self, base_plan, extracted):
        outcome = run_extract(base_plan, force=True)
        assert outcome.inference_calls == 18 * 3

    def test_p3_stores_have_dim_256(self, base_plan, extracted):
        plan = dataclasses.replace(base_plan, layer=LayerId.P3)
        outcome = run_extract(plan)
        dims = {read_store(p).dim for p in outcome.paths.values()}
        assert dims == {256}

    def test_bad_image_skipped_and_logged(
        self, corpus_manifest, mock_registry, tmp_path
    ):
        source = corpus_manifest.read_text()
        bogus = tmp_path / "broken.png"
        bogus.write_text("not an image")
        patched = tmp_path / "patched.tsv"
        patched.write_text(source + f"{bogus}\tforest\ttrain\n")
        plan = ExperimentPlan(patched, mock_registry, out_dir=tmp_path, **QUICK)
        messages = []
        outcome = run_extract(plan, log=messages.append)
        assert len(outcome.skipped) == 1
        assert str(bogus) in outcome.skipped[0][0]
        assert any("broken.png" in m for m in messages)
        train_store = read_store(
            outcome.paths[(StreamKind.FOREGROUND, "train")]
        )
        assert train_store.count == 12  # 13 candidates, one skipped

    def test_category_losing_all_images_aborts(self, mock_registry, tmp_path):
        bogus = tmp_path / "gone.png"  # never written
        manifest = tmp_path / "m.tsv"
        manifest.write_text(f"{bogus}\tghost\ttrain\n")
        plan = ExperimentPlan(manifest, mock_registry, out_dir=tmp_path, **QUICK)
        with pytest.raises(ExtractionError, match="ghost"):
            run_extract(plan)
        # The aborted run must not leave a partial store behind.
        assert not list(plan.store_dir().glob("*.sfv"))

    def test_cache_key_tracks_manifest_content(self, base_plan, tmp_path):
        edited = tmp_path / "edited.tsv"
        edited.write_text(base_plan.manifest_path.read_text() + "# comment\n")
        plan = dataclasses.replace(base_plan, manifest_path=edited)
        fg_train = (StreamKind.FOREGROUND, "train")
        assert plan.store_path(*fg_train) != base_plan.store_path(*fg_train)


class TestTrainEval:
    def test_separable_corpus_reaches_full_accuracy(self, base_plan, extracted):
        record = run_train_eval(base_plan)
        assert record.accuracy == 1.0
        assert record.per_split == (("default", 1.0),)
        assert len(record.chosen_c) == 1

    def test_missing_store_is_reported(self, base_plan, tmp_path):
        plan = dataclasses.replace(base_plan, out_dir=tmp_path / "empty")
        with pytest.raises(StoreError, match="run extract first"):
            run_train_eval(plan)

    def test_train_test_dim_mismatch_detected(self, mock_registry, tmp_path):
        manifest = tmp_path / "m.tsv"
        rows = []
        for category in ("alpha", "beta"):
            for i in range(6):
                split = "train" if i < 4 else "test"
                rows.append(f"img/{category}{i}.png\t{category}\t{split}")
        manifest.write_text("\n".join(rows) + "\n")
        plan = ExperimentPlan(
            manifest,
            mock_registry,
            streams=(StreamKind.FOREGROUND,),
            out_dir=tmp_path,
            c_grid=(1.0,),
            cv_folds=2,
        )
        rng = np.random.default_rng(0)
        plan.store_dir().mkdir(parents=True)
        train_rows = [(k % 2, rng.standard_normal(512)) for k in range(8)]
        test_rows = [(k % 2, rng.standard_normal(1536)) for k in range(4)]
        store_write(
            train_rows, plan.store_path(StreamKind.FOREGROUND, "train")
        )
        store_write(test_rows, plan.store_path(StreamKind.FOREGROUND, "test"))
        with pytest.raises(SolverError, match="dim 1536 != model dim 512"):
            run_train_eval(plan)

    def test_stores_and_records_are_deterministic(
        self, base_plan, tmp_path_factory
    ):
        plan_a = dataclasses.replace(
            base_plan, out_dir=tmp_path_factory.mktemp("det_a")
        )
        plan_b = dataclasses.replace(
            base_plan, out_dir=tmp_path_factory.mktemp("det_b")
        )
        rec_a = run_plan(plan_a)
        rec_b = run_plan(plan_b)
        stores_a = sorted(plan_a.store_dir().glob("*.sfv"))
        stores_b = sorted(plan_b.store_dir().glob("*.sfv"))
        assert [p.name for p in stores_a] == [p.name for p in stores_b]
        for a, b in zip(stores_a, stores_b):
            assert a.read_bytes() == b.read_bytes()
        assert report([rec_a], "csv") == report([rec_b], "csv")
        assert rec_a.as_dict() == rec_b.as_dict()

    def test_plan_echo_hash_verifies(self, base_plan, extracted):
        record = run_train_eval(base_plan)
        assert record.verify_echo()
        record.plan["seed"] = 999
        assert not record.verify_echo()


@pytest.fixture(scope="module")
def stream_blocks(base_plan, extracted):
    blocks = {}
    for stream in base_plan.streams:
        path = base_plan.store_path(stream, "train")
        blocks[stream] = read_store(path).features
    return blocks


class TestFusion:
    @pytest.mark.parametrize("method", list(AggregationMethod))
    def test_matrix_fusion_matches_vector_aggregate(
        self, base_plan, stream_blocks, method
    ):
        plan = dataclasses.replace(base_plan, method=method)
        fused = load_fused_split(plan, "train", 3)
        for row in (0, 5, 11):
            vectors = [
                FeatureVector(512, stream_blocks[s][row], Stage.NORMALIZED)
                for s in plan.streams
            ]
            expected = aggregate(vectors, method).values
            np.testing.assert_array_equal(fused.features[row], expected)

    def test_elementwise_dim_mismatch_rejected(self, base_plan):
        with pytest.raises(PlanError, match="equal stream dims"):
            experiments._fuse_matrix(
                dataclasses.replace(base_plan, method=AggregationMethod.MEAN),
                [np.ones((2, 4)), np.ones((2, 5))],
            )


class TestAblations:
    def test_layer_family_covers_all_five(self, base_plan, extracted):
        records = ablate_layers(base_plan)
        assert [r.label for r in records] == [
            "layers:p1", "layers:p2", "layers:p3", "layers:p4", "layers:p5",
        ]
        assert all(r.accuracy == 1.0 for r in records)

    def test_individual_streams(self, base_plan, extracted):
        records = ablate_individual(base_plan)
        assert [r.label for r in records] == ["stream:f", "stream:b", "stream:h"]
        assert [r.plan["streams"] for r in records] == ["f", "b", "h"]

    def test_aggregation_family(self, base_plan, extracted):
        records = ablate_aggregation(base_plan)
        assert [r.label for r in records] == [
            "agg:min", "agg:max", "agg:mean", "agg:concat",
        ]
        assert {r.plan["aggregation"] for r in records} == {
            "min", "max", "mean", "concat",
        }

    def test_combination_family_echoes_compositions(self, base_plan, extracted):
        records = ablate_combinations(base_plan)
        assert [r.label for r in records] == [
            "combo:f+b", "combo:f+h", "combo:b+h", "combo:f+b+h",
        ]
        assert [r.plan["streams"] for r in records] == ["fb", "fh", "bh", "fbh"]
        assert all(r.plan["aggregation"] == "concat" for r in records)

    def test_full_combination_equals_direct_run(self, base_plan, extracted):
        combined = ablate_combinations(base_plan)[-1]
        direct = run_plan(base_plan)
        assert combined.plan_sha256 == direct.plan_sha256
        assert combined.accuracy == direct.accuracy
        assert combined.chosen_c == direct.chosen_c
        assert combined.per_split == direct.per_split


@pytest.fixture(scope="module")
def records(base_plan, extracted):
    return [run_train_eval(base_plan, label="eval")]


class TestReport:
    def test_csv_has_stable_columns(self, records):
        text = report(records, "csv")
        header = text.splitlines()[0].split(",")
        assert header[:6] == [
            "label", "accuracy", "accuracy_pct", "chosen_c", "per_split",
            "plan_sha256",
        ]
        assert report(records, "csv") == text

    def test_percentage_has_one_decimal(self, records):
        row = records[0].as_dict()
        assert row["accuracy_pct"] == "100.0"

    def test_json_lines_round_trip(self, records):
        lines = report(records, "json-lines").splitlines()
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert row["label"] == "eval"
        assert row["plan_streams"] == "fbh"

    def test_timings_are_opt_in(self, records):
        assert "seconds_train" not in report(records, "csv").splitlines()[0]
        timed = report(records, "csv", include_timings=True)
        assert "seconds_train" in timed.splitlines()[0]

    def test_unknown_format_rejected(self, records):
        with pytest.raises(PlanError, match="format"):
            report(records, "xml")


class TestCliParsing:
    def test_stream_letters(self):
        assert parse_streams("f,b,h") == (
            StreamKind.FOREGROUND, StreamKind.BACKGROUND, StreamKind.HYBRID,
        )
        assert parse_streams("b") == (StreamKind.BACKGROUND,)
        with pytest.raises(PlanError, match="unknown stream"):
            parse_streams("f,x")

    def test_c_grid_range_and_list(self):
        assert parse_c_grid("1..5") == (1.0, 2.0, 3.0, 4.0, 5.0)
        assert parse_c_grid("0.5,2,8") == (0.5, 2.0, 8.0)
        with pytest.raises(PlanError, match="c-grid"):
            parse_c_grid("5..1")
        with pytest.raises(PlanError, match="c-grid"):
            parse_c_grid("abc")


class TestCliCommands:
    def test_eval_command_end_to_end(
        self, corpus_manifest, mock_registry, tmp_path, capsys
    ):
        out = tmp_path / "out"
        code = main([
            "eval",
            "--manifest", str(corpus_manifest),
            "--registry", str(mock_registry),
            "--out", str(out),
            "--folds", "2",
            "--c-grid", "1..3",
        ])
        captured = capsys.readouterr()
        assert code == 0
        assert "mean accuracy: 100.0%" in captured.out
        assert (out / "records.jsonl").is_file()

        code = main([
            "report",
            "--records", str(out / "records.jsonl"),
            "--format", "csv",
        ])
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.startswith("label,")

    def test_extract_command_reports_cache_hits(
        self, corpus_manifest, mock_registry, tmp_path, capsys
    ):
        args = [
            "extract",
            "--manifest", str(corpus_manifest),
            "--registry", str(mock_registry),
            "--out", str(tmp_path / "out"),
        ]
        assert main(args) == 0
        capsys.readouterr()
        assert main(args) == 0
        assert "0 inference call(s)" in capsys.readouterr().out

    def test_mock_assets_command(self, tmp_path, capsys):
        code = main(["mock-assets", "--out", str(tmp_path / "a"), "--seed", "5"])
        assert code == 0
        registry = capsys.readouterr().out.strip()
        assert registry.endswith("registry.ini")

    def test_failures_exit_nonzero_with_error_line(self, tmp_path, capsys):
        code = main([
            "eval",
            "--manifest", str(tmp_path / "absent.tsv"),
            "--registry", str(tmp_path / "absent.ini"),
            "--out", str(tmp_path / "out"),
        ])
        captured = capsys.readouterr()
        assert code == 2
        assert captured.err.startswith("error: ")
        assert len(captured.err.strip().splitlines()) == 1

    def test_cache_env_overrides_store_dir(
        self, corpus_manifest, mock_registry, tmp_path, monkeypatch
    ):
        cache = tmp_path / "cachedir"
        monkeypatch.setenv("SCENEFUSE_CACHE", str(cache))
        plan = ExperimentPlan(
            corpus_manifest, mock_registry, out_dir=tmp_path / "out", **QUICK
        )
        run_extract(plan)
        assert list(cache.glob("*.sfv"))
        assert not (tmp_path / "out" / "stores").exists()
