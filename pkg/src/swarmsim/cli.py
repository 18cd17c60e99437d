"""``swarmsim`` command line: run missions, verification suites and map exports."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import dump_config, load_config
from .errors import ConfigError, ExcludedInitialCondition, ScenarioError, SwarmSimError, SyncFailure
from .explore import ControlGains
from .export import export_mission, write_pgm
from .icp import IcpParams, icp_benchmark
from .stability import COLS, integrate_error_dynamics, verify_stability
from .swarm import run_mission
from .world import load_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SYNC = 0, 1, 2, 3

log = logging.getLogger("swarmsim")


class UsageError(Exception):
    pass


def _bundled(name: str) -> Path | None:
    # fall back to the files shipped in swarmsim/scenarios
    p = resources.files("swarmsim") / "scenarios" / name
    return Path(str(p)) if p.is_file() else None


def resolve_path(arg: str, what: str) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    if not p.is_absolute() and len(p.parts) == 1:
        b = _bundled(arg)
        if b is not None:
            return b
    raise UsageError(f"{what} file not found: {arg}")


def _load_config(args):
    cfg = load_config(resolve_path(args.config or "default.cfg", "config"))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be strictly positive, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    scenario = resolve_path(args.scenario, "scenario")
    env = load_scenario(scenario)
    cfg = _load_config(args)
    log.info("running %d agents for %.1f s on %s", cfg.n_agents, cfg.duration, scenario)
    try:
        mission_log = run_mission(cfg, env)
    except SyncFailure as exc:
        print(f"sync failure: {exc}", file=sys.stderr)
        return EXIT_SYNC
    out = export_mission(mission_log, args.out, dump_config(cfg))
    for i in mission_log.agent_ids:
        series = mission_log.coverage_series(i)
        final = series[-1, 1] if len(series) else 0.0
        print(f"agent {i}: final coverage {final:.1f}%")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_export_maps(args) -> int:
    """Rerun a mission from a config snapshot and write only the final maps."""
    scenario = resolve_path(args.scenario, "scenario")
    env = load_scenario(scenario)
    cfg = _load_config(args)
    try:
        mission_log = run_mission(cfg, env)
    except SyncFailure as exc:
        print(f"sync failure: {exc}", file=sys.stderr)
        return EXIT_SYNC
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step = int(round(cfg.duration / cfg.dt))
    for i in mission_log.agent_ids:
        write_pgm(out / f"slam_{i}_{step}.pgm", mission_log.final_slam[i].cells)
        write_pgm(out / f"cov_{i}_{step}.pgm", mission_log.final_coverage[i].cells)
    print(f"wrote {2 * len(mission_log.agent_ids)} maps to {out}")
    return EXIT_OK


def cmd_verify_stability(args) -> int:
    try:
        gains = ControlGains(args.k_c, args.k_s, args.k_t, args.k_theta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.initial is not None:
        e0 = np.array([args.initial])
        try:
            d = integrate_error_dynamics(e0, math.atan2(e0[0, 1], e0[0, 0]), gains, args.r_c,
                                         args.dt, args.t_final)
        except ExcludedInitialCondition as exc:
            raise UsageError(f"{exc} (initial heading errors of exactly pi form the set N "
                             "outside the convergence guarantee)") from None
        row = dict(zip(COLS, d[0]))
        ec, et = math.hypot(row["ex"], row["ey"]), abs(row["etheta"])
        ok = ec < args.tolerance and et < args.etheta_tolerance
        print(f"final |e_c| {ec:.3e}  |e_theta| {et:.3e}  {'converged' if ok else 'NOT converged'}")
        return EXIT_OK if ok else EXIT_FAIL
    rep = verify_stability(gains, args.r_c, args.trials, args.seed, args.tolerance,
                           args.etheta_tolerance, args.dt, args.t_final)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_icp_bench(args) -> int:
    if args.min_points > args.max_points:
        raise UsageError("--min-points must not exceed --max-points")
    rep = icp_benchmark(trials=args.trials, seed=args.seed, points=(args.min_points, args.max_points),
                        noise=args.noise, max_angle=math.radians(args.max_angle),
                        max_translation=args.max_translation,
                        angle_tol=math.radians(args.angle_tolerance), translation_tol=args.tolerance,
                        exact_trials=args.exact_trials, params=IcpParams())
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.ok else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def mission_args(sp):
        sp.add_argument("--scenario", default="two_rooms.txt",
                        help="scenario file, or the name of a bundled one (default two_rooms.txt)")
        sp.add_argument("--config", help="config file or bundled name (default: bundled default.cfg)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="run a mission and write its log directory")
    mission_args(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export-maps", help="run a mission and write only the final PGM maps")
    mission_args(e)
    e.set_defaults(func=cmd_export_maps)

    v = sub.add_parser("verify-stability", help="integrate the closed-loop error dynamics")
    v.add_argument("--trials", type=_positive_int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tolerance", type=_positive, default=1e-2, help="final |e_c| bound, m")
    v.add_argument("--etheta-tolerance", type=_positive, default=1e-3, help="final |e_theta| bound, rad")
    v.add_argument("--k-c", type=float, default=0.5)
    v.add_argument("--k-s", type=float, default=2.0)
    v.add_argument("--k-t", type=float, default=1.0)
    v.add_argument("--k-theta", type=float, default=1.0)
    v.add_argument("--r-c", type=_positive, default=0.2)
    v.add_argument("--dt", type=_positive, default=1e-3)
    v.add_argument("--t-final", type=_positive, default=120.0)
    v.add_argument("--initial", type=float, nargs=3, metavar=("EX", "EY", "ETHETA"),
                   help="integrate a single initial condition (radians) instead of a sweep")
    v.set_defaults(func=cmd_verify_stability)

    b = sub.add_parser("icp-bench", help="randomised ICP transform-recovery benchmark")
    b.add_argument("--trials", type=_positive_int, default=200)
    b.add_argument("--exact-trials", type=int, default=50, help="additional zero-noise trials")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--tolerance", type=_positive, default=0.05, help="translation error bound, m")
    b.add_argument("--angle-tolerance", type=_positive, default=2.0, help="rotation error bound, deg")
    b.add_argument("--noise", type=float, default=0.02, help="per-point noise sigma, m")
    b.add_argument("--max-angle", type=float, default=30.0, help="deg")
    b.add_argument("--max-translation", type=float, default=0.5, help="m")
    b.add_argument("--min-points", type=_positive_int, default=30)
    b.add_argument("--max-points", type=_positive_int, default=50)
    b.set_defaults(func=cmd_icp_bench)
    return p


def _setup_logging():
    level = os.environ.get("SWARMSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError) as exc:
        print(f"swarmsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SwarmSimError as exc:
        print(f"swarmsim {args.command}: mission aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
