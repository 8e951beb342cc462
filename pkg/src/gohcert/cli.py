"""``gohcert`` command line: ``certify``, ``selftest`` and ``dump``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .io import ParseError, multiplier_to_toml, problem_to_toml, trajectory_to_toml
from .registry import DEFAULT_N, registry_get, registry_names
from .report import ORDERS, known_multiplier, run_certify
from .selftest import format_report, run_selftest
from .tolerances import ENV_VAR

__all__ = ["main", "build_parser"]


def _tol_pair(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad tolerance value in {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gohcert", description="Certify optimality conditions of "
                                     "state-constrained control-affine trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="run the certification pipeline",
                       epilog=f"The default tolerance profile is read from {ENV_VAR} (default, strict, loose).")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--registry", metavar="NAME", help=f"builtin instance: {', '.join(registry_names())}")
    src.add_argument("--problem", metavar="PATH", help="problem TOML file (requires --trajectory)")
    c.add_argument("--trajectory", metavar="PATH", help="trajectory TOML file")
    c.add_argument("--multiplier", metavar="PATH", action="append", default=[],
                   help="multiplier TOML file (repeatable: a finite multiplier list)")
    c.add_argument("--fit-multiplier", action="store_true", help="fit a multiplier and add it to the list")
    c.add_argument("--order", choices=ORDERS, default="first")
    c.add_argument("--grid", type=int, metavar="N", default=None,
                   help=f"grid intervals for registry instances (default {DEFAULT_N})")
    c.add_argument("--tol", type=_tol_pair, action="append", default=[], metavar="NAME=VALUE",
                   help="override one tolerance")
    c.add_argument("--report", metavar="PATH", help="write the JSON report here instead of stdout")
    c.add_argument("--csv-dir", metavar="DIR", help="dump per-node arrays as CSV")

    s = sub.add_parser("selftest", help="run the property suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", metavar="PATH", help="also write the text report here")
    s.add_argument("--corrupt", action="store_true",
                   help="perturb registry trajectories by 1e-3 (the dynamics property must fail)")

    d = sub.add_parser("dump", help="write a registry instance as problem/trajectory/multiplier files")
    d.add_argument("--registry", metavar="NAME", required=True)
    d.add_argument("--grid", type=int, metavar="N", default=DEFAULT_N)
    d.add_argument("--out", metavar="DIR", required=True)
    return parser


def _certify(args) -> int:
    if args.problem and not args.trajectory:
        print("error: --problem requires --trajectory", file=sys.stderr)
        return 2
    report, code = run_certify(problem=args.problem, trajectory=args.trajectory, registry=args.registry,
                               multipliers=args.multiplier, fit=args.fit_multiplier, order=args.order,
                               N=args.grid, tol_overrides=dict(args.tol), csv_dir=args.csv_dir)
    text = report.to_json()
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    for name, entry in sorted(report.data["verdicts"].items()):
        flag = "" if entry["requested"] else "  (informational)"
        print(f"{name}: {entry['verdict']}{flag}", file=sys.stderr)
    print(f"exit code {code}", file=sys.stderr)
    return code


def _selftest(args) -> int:
    results = run_selftest(args.seed, corrupt=args.corrupt)
    text = format_report(results, args.seed)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    return 0 if all(r.passed for r in results) else 1


def _dump(args) -> int:
    entry = registry_get(args.registry, args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lam = known_multiplier(entry.spec, entry.traj, entry.seed)
    files = {"problem.toml": problem_to_toml(entry.spec), "trajectory.toml": trajectory_to_toml(entry.traj),
             "multiplier.toml": multiplier_to_toml(lam)}
    for name, text in files.items():
        (out / name).write_text(text)
        print(out / name)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"certify": _certify, "selftest": _selftest, "dump": _dump}[args.command](args)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
