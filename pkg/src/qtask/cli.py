"""Command line: ``qtask {ghz-cut,ghz-nocut,qir-run,replay}``.

Exit codes: 0 success, 1 execution error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ResourceLimitError
from .experiments import (ESTIMATORS, FORMATS, ExecutionError, ExperimentConfig, UsageError,
                          format_histogram, format_rows, manifest_path, read_manifest,
                          run_experiment, write_manifest)
from .qir import QirParseError

EXIT_OK, EXIT_EXEC, EXIT_USAGE = 0, 1, 2


def _cuts(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"cuts must be comma-separated integers, got {text!r}")


def _common(p: argparse.ArgumentParser, qubits: bool = True) -> None:
    if qubits:
        p.add_argument("--qubits", type=int, required=True, help="GHZ width n")
    p.add_argument("--shots", type=int, default=1000, help="shots per circuit (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--backend", action="append", dest="backends", metavar="SELECTOR",
                   help='backend selector, e.g. "sv" or "mock(sv):delay=0.4"; repeatable')
    _exec_opts(p)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--output", help="write the report here and the manifest beside it")


def _exec_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, help="QPU workers (default: QTASK_WORKERS or min(cpus, 8))")
    p.add_argument("--policy", default="roundrobin", help="roundrobin or leastloaded")
    p.add_argument("--batch-size", type=int, default=1, dest="batch",
                   help="consecutive tasks sent to one worker by round robin")
    p.add_argument("--transport", choices=("memory", "pipe"), default="memory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ghz-cut", help="cut a GHZ chain, run all variants, reconstruct <Z..Z>")
    _common(p)
    p.add_argument("--cuts", type=_cuts, required=True, help="cut positions, e.g. 1,2")
    p.add_argument("--dedup", action="store_true", help="run each distinct variant circuit once")
    p.add_argument("--estimator", choices=ESTIMATORS, default="factorized",
                   help="pool runs into per-fragment tables (factorized) or keep one "
                        "estimate per term pair (per-tuple)")

    p = sub.add_parser("ghz-nocut", help="run the uncut GHZ circuit as a single task")
    _common(p)
    p.add_argument("--exact", action="store_true", help="report the exact expectation")

    p = sub.add_parser("qir-run", help="run one .ll module and dump its histogram")
    p.add_argument("--file", required=True, type=Path)
    _common(p, qubits=False)

    p = sub.add_parser("replay", help="rerun an experiment from its manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--workers", type=int, help="override the worker count")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--output")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.command == "replay":
        config = read_manifest(args.manifest)
        if args.workers is not None:
            config = replace(config, workers=args.workers)
        return config
    common = dict(shots=args.shots, seed=args.seed, workers=args.workers, policy=args.policy,
                  backends=tuple(args.backends or ("sv",)), batch=args.batch,
                  transport=args.transport)
    if args.command == "qir-run":
        try:
            text = args.file.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {args.file}: {exc}") from None
        return ExperimentConfig("qir-run", qir=text, qir_name=args.file.stem, **common)
    if args.command == "ghz-cut":
        return ExperimentConfig("ghz-cut", n=args.qubits, cuts=args.cuts, dedup=args.dedup,
                                estimator=args.estimator, **common)
    return ExperimentConfig("ghz-nocut", n=args.qubits, exact=args.exact, **common)


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args).validate()
        result = run_experiment(config)
    except (UsageError, ResourceLimitError) as exc:
        print(f"qtask: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QirParseError as exc:
        print(f"qtask: {getattr(args, 'file', 'module')}: QIR parse failed", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return EXIT_EXEC
    except ExecutionError as exc:
        print(f"qtask: execution failed:\n{exc}", file=sys.stderr)
        return EXIT_EXEC

    if result.row is None:
        _emit(format_histogram(result.histogram, result.timing, args.format), args.output)
    else:
        _emit(format_rows([result.row], args.format), args.output)
    if args.output:
        write_manifest(config, manifest_path(args.output))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
