"""Command-line entry point: ``precond-lab diagnose|train|sweep|verify``.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 verification-suite failure.
"""
import argparse
import sys

from .errors import NumericalError, ValidationError
from .harness.commands import cmd_diagnose, cmd_sweep, cmd_train, fmt
from .harness.config import load_config
from .harness.data import load_data
from .harness.suites import SUITES, run_suites

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3


def _alphas(text):
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="precond-lab",
                                     description="Preconditioned gradient descent laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", help="conditioning of X_e X_e^T under input transforms")
    p.add_argument("--data", required=True, help="CSV path or synthetic:key=value,...")
    p.add_argument("--targets", default="y", help="comma-separated target columns (CSV only)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="run one experiment, write CSV log and JSON summary")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides $PRECOND_LAB_SEED and the file")

    p = sub.add_parser("sweep", help="train once per learning rate")
    p.add_argument("--config", required=True)
    p.add_argument("--alphas", required=True, type=_alphas)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="runs in parallel (default 1)")

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("suite", choices=list(SUITES) + ["all"])
    return parser


def _diagnose(args, out):
    targets = tuple(t.strip() for t in args.targets.split(",") if t.strip())
    report = cmd_diagnose(load_data(args.data, targets, seed=args.seed))
    for line in report.lines():
        print(line, file=out)
    return EXIT_OK


def _train(args, out):
    config = load_config(args.config, args.seed)
    record, summary = cmd_train(config)
    print(f"steps: {summary['steps']}  final_loss: {fmt(summary['final_loss'])}", file=out)
    if summary["empirical_rate"] is not None:
        print(f"empirical_rate: {fmt(summary['empirical_rate'])}", file=out)
    if config.output_path:
        print(f"wrote {config.output_path}", file=out)
    return EXIT_OK


def _sweep(args, out):
    config = load_config(args.config, args.seed)
    result = cmd_sweep(config, args.alphas, jobs=args.jobs)
    print(result.table(), file=out)
    print(f"best alpha: {fmt(result.best_alpha)}  final_loss: {fmt(result.best_loss)}", file=out)
    if result.theoretical_alpha is not None:
        print(f"theoretical optimum 2/(lambda_min+lambda_max): {fmt(result.theoretical_alpha)}",
              file=out)
    return EXIT_OK


def _verify(args, out):
    results = run_suites(args.suite)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.elapsed:.2f}s)", file=out)
        for case in r.cases:
            print(case.line(), file=out)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed", file=out)
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"diagnose": _diagnose, "train": _train, "sweep": _sweep, "verify": _verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, sys.stdout)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
