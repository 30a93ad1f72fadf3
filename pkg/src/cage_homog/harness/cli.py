"""``cage-homog <command> --config <path>``.

Exit codes: 0 success, 1 failed checks or a solver/resonance error,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from ..fem import SolverError
from ..geometry import MeshTooLargeError, PatternError
from ..problems import ResonanceError
from . import checks, studies
from .config import COMMAND_KIND, ConfigError, from_dict, load_config
from .reports import _clean

COMMANDS = ("solve", "limit", "cell", "converge", "regularize", "shielding", "constants", "check")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cage-homog",
                                description="Homogenization studies for a thin high-contrast shielding layer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "solve": "solve the layered Helmholtz problem at one delta",
        "limit": "solve the limit problem (zero below the interface)",
        "cell": "solve the cell problem for the corrector V",
        "converge": "delta-convergence study with rate fits",
        "regularize": "theta-regularization study at fixed delta",
        "shielding": "transmitted and interface energy versus delta, plus an eps2 sweep",
        "constants": "explicit coercivity constants and a-priori bounds",
        "check": "run the invariant suites (JSON and JUnit XML)",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", required=name != "constants",
                       help="YAML configuration file (optional for 'constants')")
        if name == "constants":
            for flag in ("alpha", "tau", "omega", "theta", "diam", "fnorm"):
                s.add_argument(f"--{flag}", type=float, default=None)
        if name == "check":
            s.add_argument("--fault-injection", action="store_true",
                           help="corrupt the unfolding index map (the suite must then fail)")
            s.add_argument("--suite", action="append", choices=sorted(checks.SUITES),
                           help="run only the named suite (repeatable)")
    return p


def _summarize(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    kind = COMMAND_KIND[args.command]
    try:
        if args.config is None:
            cfg = from_dict({"study": args.command}, kind)
        else:
            cfg = load_config(args.config, kind)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"cage-homog: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cage-homog: error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "check":
            if args.fault_injection:
                cfg.raw["check"]["fault_injection"] = True
            rep = checks.run_check_ops(cfg, args.suite)
            for r in rep["objects"]:
                print(f"{'PASS' if r.passed else 'FAIL'}  {r.suite}.{r.name}  value={_clean(r.value)}")
            print(f"{rep['n_checks'] - rep['n_failed']}/{rep['n_checks']} checks passed; "
                  f"reports in {cfg.output_dir}")
            return 0 if rep["passed"] else 1
        if args.command == "constants":
            over = {k: getattr(args, k) for k in ("alpha", "tau", "omega", "theta", "diam", "fnorm")}
            print(_summarize(studies.run_constants(cfg, over)))
            return 0
        runner = {
            "solve": studies.run_solve, "limit": studies.run_limit, "cell": studies.run_cell,
            "converge": studies.run_converge_delta, "regularize": studies.run_regularize_theta,
            "shielding": studies.run_shielding,
        }[args.command]
        result = runner(cfg)
        if hasattr(result, "fits"):
            for name, fit in result.fits.items():
                slope = "n/a" if fit["slope"] is None else f"{fit['slope']:+.3f}"
                print(f"{name:24s} slope {slope}  residual {fit['residual']}")
        print(f"outputs written to {cfg.output_dir}")
        return 0
    except (ResonanceError, SolverError, MeshTooLargeError) as exc:
        print(f"cage-homog: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (PatternError, ValueError) as exc:
        print(f"cage-homog: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
