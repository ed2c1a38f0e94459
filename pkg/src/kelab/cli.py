"""Command-line entry point: ``kelab run|verify|report|oracle-check``.

Exit codes: 0 all checks passed, 1 a numerical check failed or a solve did
not converge, 2 invalid configuration or missing inputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config

log = logging.getLogger("kelab")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def _print_checks(checks, stream):
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: measured={c.measured!r} threshold={c.threshold!r}"
              + (f" ({c.detail})" if c.detail else ""), file=stream)


def _cmd_run(args):
    from .experiment import run_experiment

    result = run_experiment(load_config(args.config), args.out, args.threads)
    _print_checks(result.checks, sys.stdout)
    print(f"outputs written to {result.out_dir}")
    return result.exit_code


def _cmd_verify(args):
    from .experiment import verify_suite

    checks, path = verify_suite(load_config(args.config), args.out, args.threads)
    _print_checks(checks, sys.stdout)
    print(f"verification report written to {path}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


def _cmd_report(args):
    from .experiment import report

    try:
        rdir = report(args.run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"report written to {rdir}")
    return EXIT_OK


def _cmd_oracle(args):
    from .checks import annulus_oracle_ladder

    defect, errors, order = annulus_oracle_ladder(args.r_in, tuple(args.levels))
    ok = defect < 1e-12 and 1.8 <= order <= 2.2
    print(json.dumps({"r_in": args.r_in, "levels": args.levels, "defect": defect,
                      "errors": errors, "order": order, "passed": ok}, indent=2))
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser():
    p = argparse.ArgumentParser(prog="kelab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML experiment configuration")
        sp.add_argument("--out", default=None,
                        help="output directory (default: config 'output' under $KELAB_OUTPUT_ROOT)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for fiber analyses")

    common(sub.add_parser("run", help="solve the family and write all artifacts"))
    common(sub.add_parser("verify", help="run verification batteries and invariants"))
    rp = sub.add_parser("report", help="plot data and consolidated summary for a run")
    rp.add_argument("run_dir")
    op = sub.add_parser("oracle-check", help="convergence against the closed-form annulus solution")
    op.add_argument("--r-in", type=float, default=0.05)
    op.add_argument("--levels", type=int, nargs="+", default=[32, 64, 128])
    return p


COMMANDS = {"run": _cmd_run, "verify": _cmd_verify, "report": _cmd_report,
            "oracle-check": _cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # unsupported chart/feature combinations are configuration problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
