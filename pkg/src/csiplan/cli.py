"""Command-line entry point: ``csiplan <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .experiments import (compare_policies, export_results, proposed_scheme_se,
                          reference_protocol_se, validate_bound)
from .fast_policy import InstanceTooLarge
from .scenario import ConfigError, Scenario, ScenarioConfig, generate_scenario, load_config
from .slow_policy import (FAST_METHODS, VALUE_ITERATION_MAX_STATES, FastPlanner,
                          informative_feedback, mls_value_iteration, run_two_timescale)

EXIT_CONFIG = 2
EXIT_GUARD = 3
# Above this many location states the value-iteration policy is replaced by
# the equivalent uncertainty-ranked rule instead of solving every state.
VALUE_ITERATION_BUDGET = 4096


def _scenario(args) -> Scenario:
    if getattr(args, "scenario", None):
        try:
            return Scenario.load(args.scenario)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load scenario {args.scenario}: {exc}") from exc
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    seed = cfg.seed if args.seed is None else args.seed
    return generate_scenario(cfg, seed)


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _upper_policy(scenario, planner, U_max):
    models = scenario.mobility
    if models.L ** models.N_G <= VALUE_ITERATION_BUDGET:
        return mls_value_iteration(models, planner, scenario.config.alpha, U_max), "value_iteration"
    return informative_feedback(models, U_max), "uncertainty_ranked"


def cmd_gen(args):
    _emit(_scenario(args).to_json() + "\n", args.out)


def cmd_simulate(args):
    sc = _scenario(args)
    planner = FastPlanner(sc.mobility, sc.constants, sc.config.H, sc.tau, args.method)
    upper, kind = _upper_policy(sc, planner, sc.U_max)
    seed = sc.config.seed if args.seed is None else args.seed
    trace = run_two_timescale(sc.mobility, sc.constants, upper, planner,
                              sc.config.epochs, seed=seed)
    if args.out:
        export_results(trace, args.out, args.format)
    summary = {"method": args.method, "upper_policy": kind, "N_G": sc.N_G,
               "tau": sc.tau, "U_max": sc.U_max, "slots": len(trace.slots),
               "case": float(trace.case[-1]),
               "reference_se": reference_protocol_se(sc)}
    print(json.dumps(summary, indent=1))


def cmd_policy(args):
    sc = _scenario(args)
    ctx = sc.context()
    doc = {"fast": FAST_METHODS[args.method](ctx, sc.config.H, sc.tau).to_dict()}
    if args.upper:
        models = sc.mobility
        if models.L ** models.N_G > VALUE_ITERATION_MAX_STATES:
            raise InstanceTooLarge(f"{models.L}^{models.N_G} location states exceed "
                                   f"{VALUE_ITERATION_MAX_STATES}")
        planner = FastPlanner(models, sc.constants, sc.config.H, sc.tau, args.method)
        doc["upper"] = mls_value_iteration(models, planner, sc.config.alpha,
                                           sc.U_max).to_json_dict()
    _emit(json.dumps(doc, indent=1) + "\n", args.out)


def cmd_validate_bound(args):
    sc = _scenario(args)
    ctx = sc.context()
    delay = sc.config.d_max if args.delay is None else args.delay
    trials = sc.config.trials if args.trials is None else args.trials
    seed = sc.config.seed if args.seed is None else args.seed
    rows = validate_bound(ctx, np.full(sc.N_G, delay), sc.tau, trials, seed)
    for M in (50, 100, 150):
        c = ctx.with_antennas(M)
        row = next(r for r in rows if r["M"] == M)
        row["reference_se"] = reference_protocol_se(c)
        row["proposed_se"] = proposed_scheme_se(c, sc.config.d_max, sc.tau).se
    _emit(json.dumps(rows, indent=1) + "\n", args.out)


def cmd_compare(args):
    sc = _scenario(args)
    methods = args.method or ["local_search", "per_slot_greedy", "reference"]
    base = sc.config.seed if args.seed is None else args.seed
    report = compare_policies(sc, methods, seeds=list(range(base, base + args.runs)))
    if args.out:
        export_results(report, args.out, args.format)
    print(json.dumps(report.summary(), indent=1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csiplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_format=False):
        p.add_argument("--config", help="INI file with a [scenario] section")
        p.add_argument("--scenario", help="scenario JSON written by 'gen'")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path (stdout when omitted)")
        if out_format:
            p.add_argument("--format", choices=("csv", "json"), default="csv")
        return p

    common(sub.add_parser("gen", help="write a scenario file")).set_defaults(func=cmd_gen)

    p = common(sub.add_parser("simulate", help="two-time-scale run"), out_format=True)
    p.add_argument("--method", choices=sorted(FAST_METHODS), default="local_search")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("policy", help="solve and dump policies"))
    p.add_argument("--method", choices=sorted(FAST_METHODS), default="dp")
    p.add_argument("--upper", action="store_true", help="also solve the feedback policy")
    p.set_defaults(func=cmd_policy)

    p = common(sub.add_parser("validate-bound", help="bound vs Monte Carlo over M"))
    p.add_argument("--trials", type=int)
    p.add_argument("--delay", type=int, help="common CSI delay (default d_max)")
    p.set_defaults(func=cmd_validate_bound)

    p = common(sub.add_parser("compare", help="compare fast-time-scale methods"),
               out_format=True)
    p.add_argument("--method", action="append", choices=sorted(FAST_METHODS))
    p.add_argument("--runs", type=int, default=3, help="number of seeds")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstanceTooLarge as exc:
        print(f"instance too large: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except BrokenPipeError:
        sys.stderr.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
