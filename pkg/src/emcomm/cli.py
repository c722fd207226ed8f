"""Command line entry point: ``emcomm <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import reporting, runner
from .errors import CapacityError, ConfigError, ContractError, DimensionError
from .metrics import DEFAULT_PAIR_BUDGET, LanguageTable, compute_metrics

log = logging.getLogger("emcomm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, ContractError, CapacityError, DimensionError)

ALLOWED_KINDS = {
    "train-alone": ("learning-alone-sender", "learning-alone-receiver"),
    "train-game": ("communication-game",),
    "sweep-capacity": ("capacity-sweep",),
}


def _spec(args) -> runner.ExperimentSpec:
    spec = runner.load_spec(args.spec)
    if getattr(args, "seeds", None) is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        spec = spec.with_seeds(args.seeds)
    return spec


def cmd_generate_data(args) -> int:
    for path in runner.generate_data(_spec(args), args.out):
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _spec(args)
    allowed = ALLOWED_KINDS[args.command]
    if spec.kind not in allowed:
        raise ConfigError(f"{args.command} runs {' or '.join(allowed)} specs, not {spec.kind}")
    records = runner.run_experiment(spec, args.out, resume=args.resume)
    report = reporting.aggregate(records)
    print(reporting.format_table(report), end="")
    return EXIT_OK


def cmd_score(args) -> int:
    table = LanguageTable.read_tsv(args.table)
    report = compute_metrics(table, args.pair_budget, seed=args.seed)
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    grouped = runner.load_records(args.out, args.experiment)
    if not grouped:
        raise ContractError("no records to report")
    for name, records in grouped.items():
        report = reporting.aggregate(records)
        target = Path(args.out) / "reports"
        reporting.emit_table(report, target / f"{name}.csv", "csv")
        reporting.emit_table(report, target / f"{name}.txt", "text")
        print(f"== {name} ({report.kind})")
        print(reporting.format_table(report), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    grouped = runner.load_records(args.out, args.experiment)
    if not grouped:
        raise ContractError("no records to plot")
    target = Path(args.out) / "figures"
    for name, records in grouped.items():
        for path in reporting.emit_curves(records, target, stem=f"{name}_curves"):
            print(path)
        if any(r.metrics for r in records):
            for path in reporting.emit_scatter(records, target, stem=f"{name}_scatter"):
                print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emcomm", description="Emergent communication experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the train / IND / OOD splits")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    for name, text in (
        ("train-alone", "train one agent against the oracle language"),
        ("train-game", "train sender and receiver in the reconstruction game"),
        ("sweep-capacity", "repeat a task over several hidden sizes"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--spec", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seeds", type=int, help="override the number of seeds")
        p.add_argument("--resume", action="store_true", help="skip runs already in the log")
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="posdis / bosdis / topsim of a language table")
    p.add_argument("table")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--pair-budget", type=int, default=DEFAULT_PAIR_BUDGET)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    for name, func, text in (
        ("report", cmd_report, "aggregate tables from the manifest"),
        ("plot", cmd_plot, "training curves and metric scatter plots"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--out", required=True, help="directory holding manifest.jsonl")
        p.add_argument("--experiment", help="restrict to one experiment name")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation failures here
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"emcomm: invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"emcomm: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
