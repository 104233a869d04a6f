"""
Experiment orchestration: baselines, policy comparisons and result export.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rate import RateContext, monte_carlo_se, rate_table, se_lower_bound
from .scenario import Scenario
from .slow_policy import (FAST_METHODS, FastPlanner, PolicyTrace, informative_feedback,
                          run_two_timescale)

CSV_COLUMNS = ("slot", "method", "reward", "case", "case_gain")


def reference_protocol_se(source) -> float:
    """Per-slot bound when every group trains every slot."""
    ctx = source.context() if isinstance(source, Scenario) else source
    return se_lower_bound(np.zeros(ctx.N_G, dtype=int), ctx.N_G, ctx)


@dataclass
class PeriodicSchedule:
    periods: np.ndarray
    phases: np.ndarray
    se: float
    actions: np.ndarray = field(repr=False)


def _cycle_actions(periods, phases, length):
    t = np.arange(length)[:, None]
    return ((t - phases[None, :]) % periods[None, :] == 0).astype(int)


def _cycle_se(table, periods, phases, length, T_s):
    acts = _cycle_actions(periods, phases, length)
    delays = (np.arange(length)[:, None] - phases[None, :]) % periods[None, :]
    groups = np.arange(table.shape[0])
    per_slot = (1.0 - acts.sum(axis=1) / T_s) * table[groups, delays].sum(axis=1)
    return float(per_slot.mean()), acts


def proposed_scheme_se(ctx: RateContext, d_max: int, tau: int) -> PeriodicSchedule:
    """Best steady-state periodic training with delays up to ``d_max``.

    Each group trains every ``p <= d_max + 1`` slots at some phase, at most
    ``tau`` groups train per slot, and the schedule repeats. Periods and
    phases are improved one group at a time until no single change helps;
    the result is the average per-slot bound over one cycle.
    """
    if d_max < 0:
        raise ValueError("d_max must be non-negative")
    N_G, top = ctx.N_G, d_max + 1
    if math.ceil(N_G / top) > tau:
        raise ValueError(f"tau={tau} cannot cover {N_G} groups with delays <= {d_max}")
    table = rate_table(ctx, d_max)
    length = math.lcm(*range(1, top + 1))
    periods = np.full(N_G, top)
    phases = np.arange(N_G) % top
    best, acts = _cycle_se(table, periods, phases, length, ctx.T_s)
    options = [(p, f) for p in range(1, top + 1) for f in range(p)]
    while True:
        move = None
        for g in range(N_G):
            for p, f in options:
                if (p, f) == (periods[g], phases[g]):
                    continue
                per, ph = periods.copy(), phases.copy()
                per[g], ph[g] = p, f
                val, a = _cycle_se(table, per, ph, length, ctx.T_s)
                if a.sum(axis=1).max() <= tau and val > best + 1e-12 * abs(best):
                    if move is None or val > move[0]:
                        move = (val, g, p, f, a)
        if move is None:
            return PeriodicSchedule(periods, phases, best, acts)
        best, g, p, f, acts = move
        periods[g], phases[g] = p, f


def validate_bound(ctx: RateContext, delays, active_trainers, trials, seed,
                   antennas=(50, 100, 150)) -> list[dict]:
    """Bound against Monte Carlo at every antenna count."""
    rows = []
    for M in antennas:
        c = ctx.with_antennas(M)
        bound = se_lower_bound(delays, active_trainers, c)
        mc = monte_carlo_se(c, delays, active_trainers, trials, seed=seed)
        rows.append({"M": M, "bound": bound, "monte_carlo": mc.mean,
                     "half_width": mc.half_width,
                     "relative_gap": (mc.mean - bound) / mc.mean})
    return rows


@dataclass
class ComparisonReport:
    traces: dict            # (method, seed) -> PolicyTrace
    methods: list
    seeds: list

    def final_case(self, method) -> np.ndarray:
        return np.array([self.traces[method, s].case[-1] for s in self.seeds])

    def summary(self) -> dict:
        out = {}
        ref = self.final_case("reference") if "reference" in self.methods else None
        for m in self.methods:
            vals = self.final_case(m)
            row = {"mean_case": float(vals.mean()), "std_case": float(vals.std())}
            if ref is not None:
                row["mean_case_gain"] = float((vals - ref).mean())
            out[m] = row
        return out

    def rows(self):
        for s in self.seeds:
            ref = self.traces["reference", s].case if "reference" in self.methods else None
            for m in self.methods:
                tr = self.traces[m, s]
                case = tr.case
                for i, slot in enumerate(tr.slots):
                    gain = case[i] - ref[i] if ref is not None else float("nan")
                    yield {"seed": s, "slot": slot["slot"], "method": m,
                           "reward": slot["reward"], "case": float(case[i]),
                           "case_gain": float(gain)}

    def to_dict(self) -> dict:
        return {"methods": self.methods, "seeds": self.seeds,
                "summary": self.summary(),
                "traces": [{"method": m, "seed": s, "trace": self.traces[m, s].to_dict()}
                           for s in self.seeds for m in self.methods]}


def compare_policies(scenario: Scenario, methods, H: int | None = None, seeds=(0,),
                     epochs: int | None = None, U_max: int | None = None,
                     upper_policy=None) -> ComparisonReport:
    """Run the two-time-scale loop for every (method, seed) cell.

    All methods share the feedback policy and, per seed, the same true
    location sequence, so differences come from the fast-time-scale plans.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    unknown = [m for m in methods if m not in FAST_METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}")
    cfg = scenario.config
    H = cfg.H if H is None else H
    epochs = cfg.epochs if epochs is None else epochs
    U_max = scenario.U_max if U_max is None else U_max
    models, constants = scenario.mobility, scenario.constants
    upper = upper_policy or informative_feedback(models, U_max)
    traces = {}
    for m in methods:
        planner = FastPlanner(models, constants, H, scenario.tau, m)
        for s in seeds:
            traces[m, s] = run_two_timescale(models, constants, upper, planner, epochs, seed=s)
    return ComparisonReport(traces, methods, list(seeds))


def export_results(result, path, fmt: str = "csv") -> Path:
    """Write a trace or a comparison report as CSV or JSON."""
    path = Path(path)
    if isinstance(result, PolicyTrace):
        result = ComparisonReport({("run", 0): result}, ["run"], [0])
    try:
        if fmt == "json":
            path.write_text(json.dumps(result.to_dict(), indent=1))
        elif fmt == "csv":
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=("seed",) + CSV_COLUMNS)
                writer.writeheader()
                writer.writerows(result.rows())
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path
