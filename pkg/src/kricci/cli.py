"""Command line interface: ``python -m kricci <command> <config>``."""
from __future__ import annotations

import argparse
import os
import sys

from .errors import KRicciError
from .report import emit_report, headline, write_ray_tables
from .scenario import load_config
from .verify import (
    EXIT_USAGE,
    run_avr,
    run_curvature_audit,
    run_isoperimetric,
    run_ray_audit,
    run_verify,
)

COMMANDS = {
    "verify": run_verify,
    "isoperimetric": run_isoperimetric,
    "ray-audit": None,
    "avr": run_avr,
    "curvature-audit": run_curvature_audit,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kricci", description="Numerical checks of Michael-Simon type Sobolev inequalities.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="scenario JSON file")
        s.add_argument("--format", choices=["json", "csv", "text"], default="json")
        s.add_argument("--out", help="output file (ray-audit: directory for per-ray CSVs)")
        s.add_argument("--seed", type=int, help="override all seeds")
        s.add_argument("--refine", type=int, help="override the mesh refinement level")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # the volume ratio does not involve the submanifold; the curvature audit
    # needs k = min(n-1, m-1) >= 1
    codim = args.command != "avr"
    try:
        sc = load_config(args.config, require_codim=codim)
        if args.seed is not None or args.refine is not None:
            sc = sc.with_overrides(args.seed, args.refine, require_codim=codim)
    except (OSError, KRicciError, ValueError) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "ray-audit":
        report, tables = run_ray_audit(sc)
        if args.out:
            write_ray_tables(tables, args.out)
            emit_report(report, args.format, os.path.join(args.out, "summary." + args.format.replace("text", "txt")))
        else:
            sys.stdout.write(emit_report(report, args.format))
    else:
        report = COMMANDS[args.command](sc)
        doc = emit_report(report, args.format, args.out)
        if not args.out:
            sys.stdout.write(doc)
    print(headline(report), file=sys.stderr)
    return report.exit_code


def main_entry() -> None:
    sys.exit(main())
