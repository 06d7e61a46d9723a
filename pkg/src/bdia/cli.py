"""``bdia`` command line: sample, roundtrip, verify, compare and sweep.

Exit status: 0 success, 1 invariant failure, 2 configuration error,
3 numeric failure (non-finite values).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .analysis import (
    ROUNDTRIP_TOL,
    compare,
    gamma_sweep,
    reports_to_csv,
    reports_to_json,
    run_roundtrip,
    run_sample,
    verify_invariants,
)
from .config import ROUNDTRIP_SOLVERS, SOLVERS, ConfigError, RunConfig
from .core import inject_fault

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
EXACT_SOLVERS = ("bdia-ddim", "edict", "cbdia")


def _csv_list(text: str, cast=str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        return [cast(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}: {exc}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--solver", help=f"one of {', '.join(SOLVERS + ('ddim-naive',))}")
    p.add_argument("--n", type=int, help="number of steps")
    p.add_argument("--gamma", type=float)
    p.add_argument("--p", type=float, help="EDICT mixing weight")
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--rho", type=float, help="power-law grid exponent")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int, help="number of trajectories")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", help="fill wall_time_s (makes output non-deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdia", description="Exactly invertible diffusion ODE solvers on analytic mixtures.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("sample", help="sample and report against exact draws"))
    rt = sub.add_parser("roundtrip", help="invert data to noise and regenerate")
    _common(rt)
    rt.add_argument("--edit", type=float, help="shift every mixture mean by this amount before regeneration")
    ver = sub.add_parser("verify", help="run the invariant suite")
    _common(ver)
    ver.add_argument("--inject-fault", choices=("flip-b-sign",), help="corrupt DDIM coefficients to exercise the suite")
    cmp_ = sub.add_parser("compare", help="report matrix over solvers x step counts")
    _common(cmp_)
    cmp_.add_argument("--solvers", default="ddim,bdia-ddim", help="comma-separated solver names")
    cmp_.add_argument("--ns", default="10,20,40", help="comma-separated step counts")
    sw = sub.add_parser("sweep", help="one report per gamma (or p for edict)")
    _common(sw)
    sw.add_argument("--values", "--gammas", dest="values", default="0.92,0.96,1.0", help="comma-separated values")
    sw.add_argument("--roundtrip", action="store_true", help="sweep round trips instead of sampling")
    sw.add_argument("--edit", type=float)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    d: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    if args.solver is not None:
        d["solver"] = args.solver
    cfg = RunConfig.from_dict(d)
    overrides = {
        k: getattr(args, k)
        for k in ("n", "gamma", "p", "gamma1", "gamma2", "rho", "seed", "batch", "out", "format", "workers")
        if getattr(args, k, None) is not None
    }
    if getattr(args, "edit", None) is not None:
        overrides["edit"] = args.edit
    return cfg.replace(**overrides) if overrides else cfg


def _emit(text: str, cfg: RunConfig, stem: str) -> None:
    sys.stdout.write(text)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, f"{stem}.{cfg.format}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _render(reports, cfg: RunConfig) -> str:
    return reports_to_json(reports) if cfg.format == "json" else reports_to_csv(reports)


def cmd_sample(cfg: RunConfig, timing: bool = False) -> int:
    trace, report = run_sample(cfg, timing)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "trace.csv"), "w", encoding="utf-8", newline="") as fh:
            trace.to_csv(fh)
    _emit(_render([report], cfg), cfg, "report")
    return EXIT_OK


def cmd_roundtrip(cfg: RunConfig, timing: bool = False) -> int:
    if cfg.solver not in ROUNDTRIP_SOLVERS:
        raise ConfigError(f"roundtrip needs one of {ROUNDTRIP_SOLVERS}, got {cfg.solver!r}")
    rt, report = run_roundtrip(cfg, timing)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "trace.csv"), "w", encoding="utf-8", newline="") as fh:
            rt.descent.to_csv(fh)
    _emit(_render([report], cfg), cfg, "report")
    if cfg.edit is None and cfg.solver in EXACT_SOLVERS and not report.roundtrip_error <= ROUNDTRIP_TOL:
        print(f"FAIL roundtrip error {report.roundtrip_error:.3e} exceeds {ROUNDTRIP_TOL:.0e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_verify(cfg: RunConfig, fault: Optional[str] = None) -> int:
    if fault:
        with inject_fault(fault):
            results = verify_invariants(cfg)
    else:
        results = verify_invariants(cfg)
    for r in results:
        print(f"{r.status.upper():4} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} invariant(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_compare(cfg: RunConfig, solvers: Sequence[str], ns: Sequence[int], timing: bool = False) -> int:
    reports = compare(cfg, solvers, ns, workers=cfg.workers, timing=timing)
    _emit(_render(reports, cfg), cfg, "compare")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, values: Sequence[float], roundtrip_mode: bool = False, timing: bool = False) -> int:
    reports = gamma_sweep(cfg, values, roundtrip_mode=roundtrip_mode, workers=cfg.workers, timing=timing)
    _emit(_render(reports, cfg), cfg, "sweep")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args)
        if args.command == "sample":
            return cmd_sample(cfg, args.timing)
        if args.command == "roundtrip":
            return cmd_roundtrip(cfg, args.timing)
        if args.command == "verify":
            return cmd_verify(cfg, args.inject_fault)
        if args.command == "compare":
            return cmd_compare(cfg, _csv_list(args.solvers), _csv_list(args.ns, int), args.timing)
        return cmd_sweep(cfg, _csv_list(args.values, float), args.roundtrip, args.timing)
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, IndexError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
