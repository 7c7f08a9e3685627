"""Command-line interface.

Subcommands::

    extract       fill the feature-store cache for a plan
    train         grid-search C and save one model per split pair
    eval          extract (cached), train, and evaluate; append records
    ablate        layers | streams | aggregation | combinations
    report        render saved records as CSV or JSON lines
    mock-assets   generate tiny seeded backbones plus a registry config

Exit code 0 on success; any toolkit failure prints one ``error: ...`` line
to stderr and exits nonzero.
"""

import argparse
import json
import sys
from pathlib import Path

from .backbone import LayerId
from .classifier import grid_search
from .errors import PlanError, ScenefuseError
from .experiments import (
    STREAM_LETTERS,
    ExperimentPlan,
    ablate_aggregation,
    ablate_combinations,
    ablate_individual,
    ablate_layers,
    load_fused_split,
    report,
    run_extract,
    run_plan,
)
from .manifest import SplitSuite, parse_manifest
from .mockmodels import write_mock_assets
from .pipeline import AggregationMethod

_ABLATIONS = {
    "layers": ablate_layers,
    "streams": ablate_individual,
    "aggregation": ablate_aggregation,
    "combinations": ablate_combinations,
}


def parse_streams(text: str) -> tuple:
    streams = []
    for letter in text.split(","):
        letter = letter.strip().lower()
        if letter not in STREAM_LETTERS:
            raise PlanError(
                f"unknown stream {letter!r}; expected letters from f,b,h"
            )
        streams.append(STREAM_LETTERS[letter])
    return tuple(streams)


def parse_c_grid(text: str) -> tuple:
    """Accept a range like ``1..50`` or a comma list like ``1,5,25``."""
    text = text.strip()
    try:
        if ".." in text:
            low, high = text.split("..", maxsplit=1)
            start, stop = int(low), int(high)
            if stop < start:
                raise ValueError
            return tuple(float(c) for c in range(start, stop + 1))
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise PlanError(
            f"bad c-grid {text!r}; use LO..HI or a comma-separated list"
        ) from None


def _add_plan_arguments(sub, needs_agg: bool = True):
    source = sub.add_mutually_exclusive_group(required=True)
    source.add_argument("--manifest", type=Path, help="TSV sample manifest")
    source.add_argument(
        "--suite",
        type=Path,
        help="manifest whose split tags form multiple train/test pairs",
    )
    sub.add_argument("--registry", type=Path, required=True,
                     help="backbone registry config")
    sub.add_argument("--layer", default="p5",
                     choices=[l.name.lower() for l in LayerId])
    sub.add_argument("--streams", default="f,b,h",
                     help="comma list of stream letters (f,b,h)")
    if needs_agg:
        sub.add_argument("--agg", default="concat",
                         choices=[m.value for m in AggregationMethod])
    sub.add_argument("--c-grid", default="1..50",
                     help="LO..HI range or comma list of C values")
    sub.add_argument("--folds", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", type=Path, default=Path("scenefuse-out"))
    sub.add_argument("--force", action="store_true",
                     help="re-extract even when stores exist")


def _plan_from_args(args) -> ExperimentPlan:
    return ExperimentPlan(
        manifest_path=args.manifest or args.suite,
        registry_path=args.registry,
        streams=parse_streams(args.streams),
        layer=LayerId.parse(args.layer),
        method=AggregationMethod(getattr(args, "agg", "concat")),
        c_grid=parse_c_grid(args.c_grid),
        cv_folds=args.folds,
        seed=args.seed,
        out_dir=args.out,
    )


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _append_records(out_dir: Path, records) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "records.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(report(records, "json-lines"))
    return path


def _cmd_extract(args) -> int:
    plan = _plan_from_args(args)
    outcome = run_extract(plan, force=args.force, log=_log)
    for (stream, tag), path in sorted(
        outcome.paths.items(), key=lambda kv: (kv[0][0].value, kv[0][1])
    ):
        print(f"{stream.value}\t{tag}\t{path}")
    print(
        f"extracted {outcome.images_processed} image(s), "
        f"{outcome.inference_calls} inference call(s), "
        f"{len(outcome.skipped)} skipped, {outcome.seconds:.1f}s"
    )
    return 0


def _cmd_train(args) -> int:
    plan = _plan_from_args(args)
    run_extract(plan, force=args.force, log=_log)

    suite = SplitSuite.from_manifest(parse_manifest(plan.manifest_path))
    class_count = len(suite.categories)
    plan.out_dir.mkdir(parents=True, exist_ok=True)
    for pair in suite.pairs:
        prefix = "" if pair.name == "default" else f"{pair.name}/"
        train = load_fused_split(plan, f"{prefix}train", class_count)
        model = grid_search(train, plan.training_config())
        model_path = plan.out_dir / f"model_{pair.name.replace('/', '__')}.sflr"
        model.save(model_path)
        best = max(model.cv_table, key=lambda cell: cell.mean_accuracy)
        print(
            f"{pair.name}\tC={model.chosen_c:g}\t"
            f"cv_accuracy={best.mean_accuracy:.4f}\t{model_path}"
        )
    return 0


def _cmd_eval(args) -> int:
    plan = _plan_from_args(args)
    record = run_plan(plan, label="eval", force=args.force, log=_log)
    path = _append_records(plan.out_dir, [record])
    for name, accuracy in record.per_split:
        print(f"{name}\taccuracy={100.0 * accuracy:.1f}%")
    print(f"mean accuracy: {100.0 * record.accuracy:.1f}%")
    print(f"records: {path}")
    return 0


def _cmd_ablate(args) -> int:
    plan = _plan_from_args(args)
    records = _ABLATIONS[args.study](plan, force=args.force, log=_log)
    path = _append_records(plan.out_dir, records)
    for record in records:
        print(f"{record.label}\taccuracy={100.0 * record.accuracy:.1f}%")
    print(f"records: {path}")
    return 0


def _cmd_report(args) -> int:
    try:
        lines = args.records.read_text(encoding="utf-8").splitlines()
        rows = [json.loads(line) for line in lines if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise PlanError(f"cannot read records file: {exc}") from exc
    if not rows:
        raise PlanError(f"no records in {args.records}")
    if args.format == "json-lines":
        text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    else:
        import csv
        import io

        # Stored JSON lines carry keys alphabetically; restore the lead
        # columns a live report uses so both render identically.
        lead = [
            "label", "accuracy", "accuracy_pct", "chosen_c", "per_split",
            "plan_sha256",
        ]
        fields = [k for k in lead if k in rows[0]]
        fields += sorted(k for k in rows[0] if k not in fields)
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buffer.getvalue()
    if args.out_file:
        args.out_file.write_text(text, encoding="utf-8")
        print(f"wrote {args.out_file}")
    else:
        print(text, end="")
    return 0


def _cmd_mock_assets(args) -> int:
    registry = write_mock_assets(args.out, seed=args.seed)
    print(registry)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenefuse",
        description="Scene-image feature fusion and classification toolkit.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("extract", help="fill the feature-store cache")
    _add_plan_arguments(sub, needs_agg=False)
    sub.set_defaults(handler=_cmd_extract)

    sub = commands.add_parser("train", help="grid-search C and save models")
    _add_plan_arguments(sub)
    sub.set_defaults(handler=_cmd_train)

    sub = commands.add_parser("eval", help="train on each pair, report accuracy")
    _add_plan_arguments(sub)
    sub.set_defaults(handler=_cmd_eval)

    sub = commands.add_parser("ablate", help="run an ablation family")
    sub.add_argument("study", choices=sorted(_ABLATIONS))
    _add_plan_arguments(sub)
    sub.set_defaults(handler=_cmd_ablate)

    sub = commands.add_parser("report", help="render saved records")
    sub.add_argument("--records", type=Path, required=True,
                     help="records.jsonl written by eval/ablate")
    sub.add_argument("--format", default="csv", choices=["csv", "json-lines"])
    sub.add_argument("--out-file", type=Path, default=None)
    sub.set_defaults(handler=_cmd_report)

    sub = commands.add_parser(
        "mock-assets", help="generate tiny seeded test backbones"
    )
    sub.add_argument("--out", type=Path, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.set_defaults(handler=_cmd_mock_assets)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ScenefuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
