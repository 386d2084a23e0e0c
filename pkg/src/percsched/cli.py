"""Command-line front end.

Subcommands::

    percsched check      --config cfg.json --sets SETFILE [SETFILE ...]
    percsched build-sets --config cfg.json --out DIR [--num-sets m] [--seed s]
    percsched simulate   --config cfg.json --sets DIR --policy P --out DIR
                         [--paths N] [--seed s] [--profile desk|paper]
                         [--trust-sets]
    percsched plan       --config cfg.json --sets DIR [--x0 v ...]

Policies for ``simulate``: ``static:2,2`` (cyclic pattern of mode indices),
``sp2-roundrobin``, ``sp2-balanced``.  Exit codes: 0 success, 1 set not
admissible, 2 configuration/parse error, 3 set construction failed,
4 more than 1% of simulated paths diverged.

Schedule-set files are JSON objects with keys ``m0`` (nested array),
``schedules`` (lists of 1-based mode indices), ``seed``, ``set_id`` and an
optional ``provenance`` block; ellipsoid matrices are recomputed from the
config's system/modes on load.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from percsched.admiss import check_admissibility, construction_checker
from percsched.config import ConfigError, ExperimentConfig
from percsched.belief import GaussianBelief
from percsched.planner import dynprog, make_balanced_selector
from percsched.schedset import EllipsoidSet, ScheduleSetConstructionError, build_schedule_set
from percsched.simlab import (
    SP2Policy, StaticSchedulePolicy, monte_carlo, round_robin_selector,
    write_histogram_csv, write_records_csv,
)

EXIT_OK = 0
EXIT_NOT_ADMISSIBLE = 1
EXIT_CONFIG = 2
EXIT_BUILD_FAILED = 3
EXIT_DIVERGED = 4


def _load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.load(path)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _set_paths(args_sets) -> list[Path]:
    paths: list[Path] = []
    for s in args_sets:
        p = Path(s)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    if not paths:
        print("error: no schedule-set files found", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    return paths


def _load_sets(args_sets, cfg: ExperimentConfig) -> list[EllipsoidSet]:
    sets = []
    for p in _set_paths(args_sets):
        try:
            sets.append(EllipsoidSet.load(p, cfg.model, cfg.modes))
        except (OSError, KeyError, ValueError) as err:
            print(f"error: {p}: {err}", file=sys.stderr)
            raise SystemExit(EXIT_CONFIG)
    return sets


def cmd_check(args) -> int:
    cfg = _load_config(args.config)
    worst = EXIT_OK
    for path, gamma in zip(_set_paths(args.sets), _load_sets(args.sets, cfg)):
        report = check_admissibility(gamma)
        print(f"{path}:")
        print(report.to_text())
        if not report.admissible:
            worst = EXIT_NOT_ADMISSIBLE
    return worst


def cmd_build_sets(args) -> int:
    cfg = _load_config(args.config)
    if cfg.M0 is None:
        print("error: sets.M0 required for build-sets", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else cfg.sim.seed
    print(f"effective seed = {seed}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    num_sets = args.num_sets if args.num_sets is not None else cfg.num_sets
    for i in range(num_sets):
        try:
            gamma = build_schedule_set(cfg.model, cfg.modes, cfg.ell, seed + i,
                                       checker=construction_checker(), M0=cfg.M0,
                                       set_id=f"{cfg.name}-{i}")
        except ScheduleSetConstructionError as err:
            print(f"error: set {i}: {err}", file=sys.stderr)
            return EXIT_BUILD_FAILED
        report = check_admissibility(gamma)
        path = out / f"set_{i:02d}.json"
        gamma.save(path, extra={"R": report.R, "seed": seed + i,
                                "num_schedules": len(gamma.members)})
        print(f"{path}: {len(gamma.members)} schedules, R={report.R:.6f}")
    return EXIT_OK


def _apply_profile(cfg: ExperimentConfig, profile: str) -> ExperimentConfig:
    if profile == "desk":
        return cfg
    # paper profile: the long-horizon fine-grid settings; not CI-sized.
    sim = replace(cfg.sim, h=1e-5, T_f=100.0, num_paths=400)
    return replace(cfg, sim=sim, cost=cfg.cost.with_horizon(100.0))


def _make_policy_factory(name: str, cfg: ExperimentConfig, sets):
    if name.startswith("static:"):
        pattern = tuple(int(t) for t in name.split(":", 1)[1].split(","))
        if any(not 1 <= p <= len(cfg.modes) for p in pattern):
            print(f"error: policy pattern {pattern} has out-of-range mode index",
                  file=sys.stderr)
            raise SystemExit(EXIT_CONFIG)
        return lambda: StaticSchedulePolicy(pattern)
    if name == "sp2-roundrobin":
        return lambda: SP2Policy(sets, round_robin_selector())
    if name == "sp2-balanced":
        selector = make_balanced_selector(cfg.model, cfg.modes, cfg.cost, cfg.lookahead)
        return lambda: SP2Policy(sets, selector)
    print(f"error: unknown policy '{name}'", file=sys.stderr)
    raise SystemExit(EXIT_CONFIG)


def cmd_simulate(args) -> int:
    cfg = _apply_profile(_load_config(args.config), args.profile)
    sets = _load_sets(args.sets, cfg) if args.sets else []
    if args.policy.startswith("sp2") and not sets:
        print("error: SP2 policies require --sets", file=sys.stderr)
        return EXIT_CONFIG
    if sets and not args.trust_sets:
        for gamma in sets:
            report = check_admissibility(gamma)
            if not report.admissible:
                print(f"error: set {gamma.set_id} not admissible (R={report.R:.6f})",
                      file=sys.stderr)
                return EXIT_NOT_ADMISSIBLE
    sim = cfg.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if args.paths is not None:
        sim = replace(sim, num_paths=args.paths)
    print(f"effective seed = {sim.seed}")
    factory = _make_policy_factory(args.policy, cfg, sets)
    summary = monte_carlo(cfg.model, cfg.modes, factory, cfg.cost, sim)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(out / "paths.csv", summary)
    write_histogram_csv(out / "histogram.csv", summary)
    (out / "summary.txt").write_text(summary.to_text() + "\n")
    from percsched.plots import plot_cost_histogram
    plot_cost_histogram(summary, out / "cost_histogram.png",
                        title=f"{cfg.name}: {args.policy}")
    print(summary.to_text())
    print(f"wrote {out / 'paths.csv'}, {out / 'histogram.csv'}, "
          f"{out / 'summary.txt'}, {out / 'cost_histogram.png'}")
    if len(summary.diverged) > 0.01 * sim.num_paths:
        print(f"error: {len(summary.diverged)} of {sim.num_paths} paths diverged",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    sets = _load_sets(args.sets, cfg)
    x0 = np.asarray(args.x0, dtype=float) if args.x0 else cfg.sim.x0
    belief = GaussianBelief.initial(x0, cfg.sim.P0)
    result = dynprog(cfg.cost.T_f, 0.0, belief, sets, cfg.model, cfg.modes, cfg.cost)
    print(f"schedule = {list(result.schedule.modes)}")
    print(f"cost = {result.cost:.9f}")
    print(f"chosen_set = {result.chosen_set}")
    print(f"nodes = {result.nodes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="percsched",
        description="Perception-latency scheduling for sampled-data stochastic control.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="verify admissibility of schedule-set files")
    p.add_argument("--config", required=True)
    p.add_argument("--sets", required=True, nargs="+")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("build-sets", help="randomized construction of admissible sets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-sets", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_build_sets)

    p = sub.add_parser("simulate", help="Monte Carlo closed-loop simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--sets", nargs="*", default=[])
    p.add_argument("--policy", required=True,
                   help="static:<i,j,...> | sp2-roundrobin | sp2-balanced")
    p.add_argument("--out", required=True)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--trust-sets", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="finite-horizon schedule optimization")
    p.add_argument("--config", required=True)
    p.add_argument("--sets", required=True, nargs="+")
    p.add_argument("--x0", type=float, nargs="*", default=None)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
