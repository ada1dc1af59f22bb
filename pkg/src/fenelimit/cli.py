"""Command-line front end: ``fenelimit {simulate,spectrum,sweep-nu,limit-compare}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import harness
from .errors import FeneError

log = logging.getLogger("fenelimit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fenelimit", description="Compressible FENE dumbbell simulator and limit harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in harness.KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", metavar="PATH", help="TOML experiment file (defaults built in)")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        sp.add_argument(
            "--workers", type=int, default=None, metavar="N",
            help=f"parallel sweep members (default: ${harness.WORKERS_ENV} or 1)",
        )
        sp.add_argument("--seed", type=int, default=None, metavar="S", help="initial-data seed (overrides the config)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = harness.load_config(args.config) if args.config else harness.default_spec(args.command)
        if spec.kind != args.command:
            raise harness.ParseError(f"config describes a {spec.kind!r} experiment, not {args.command!r}", field="kind")
        if args.seed is not None:
            spec = dataclasses.replace(spec, base=spec.base.replace(seed=args.seed))
        if args.out:
            spec = dataclasses.replace(spec, output_dir=args.out)
        workers = args.workers if args.workers is not None else harness.default_workers()
        report = harness.run(spec, workers=workers)
        paths = harness.emit_reports(report, spec.output_dir)
    except FeneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in sorted(report.flags.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
