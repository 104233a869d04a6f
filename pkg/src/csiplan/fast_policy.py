"""
Finite-horizon training schedules for copilot groups.

Stage 0 of a horizon always trains every group; stages ``1..H-1`` train at
most ``tau`` groups each. A group's delay grows by one per untrained stage
and resets on training, and the payload of a stage is decoded with the
post-action delay.

Optimizers: exhaustive enumeration, backward induction over reachable
delay states, approximate local search for the non-monotone submodular
set formulation under per-stage partition matroids, and a myopic per-slot
greedy baseline.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rate import RateContext, rate_table, se_lower_bound

BRUTE_FORCE_MAX_GROUPS = 6
BRUTE_FORCE_MAX_HORIZON = 5
DP_MAX_STATES = 10 ** 7
DP_MAX_TRANSITIONS = 5 * 10 ** 7


class InstanceTooLarge(ValueError):
    """Raised when an exact optimizer would exceed its size guard."""


def delay_transition(d, a) -> np.ndarray:
    d = np.asarray(d, dtype=int)
    a = np.asarray(a, dtype=int)
    if d.shape != a.shape:
        raise ValueError("delay and action shapes differ")
    return (1 + d) * (1 - a)


def delay_from_actions(history, j: int) -> np.ndarray:
    """Delay vector after stage ``j`` in closed form.

    ``history[t - 1]`` is the action vector of stage ``t`` for ``t >= 1``;
    the delay is zero at stage 0. A group trained last at stage ``t <= j``
    has delay ``j - t``; one never trained since stage 0 has delay ``j``.
    """
    acts = np.asarray(history, dtype=int)
    if acts.ndim != 2:
        raise ValueError("history must be a 2-D array of action vectors")
    if not 0 <= j <= acts.shape[0]:
        raise ValueError(f"stage {j} not covered by a history of length {acts.shape[0]}")
    if j == 0:
        return np.zeros(acts.shape[1], dtype=int)
    window = acts[:j]
    # untrained[h] = prod_{s > h} (1 - a(s)) over stages h+1..j
    idle = 1 - window
    untrained = np.ones_like(window)
    untrained[:-1] = np.cumprod(idle[::-1], axis=0)[::-1][1:]
    never = np.prod(idle, axis=0)
    stages = np.arange(1, j + 1)[:, None]
    return j * never + ((j - stages) * window * untrained).sum(axis=0)


def reward_low(d, a, ctx: RateContext, budget: int | None = None) -> float:
    """Stage reward for post-action delays ``d`` and actions ``a``."""
    a = np.asarray(a, dtype=int)
    n_train = int(a.sum())
    if budget is not None and n_train > budget:
        raise ValueError(f"{n_train} trainers exceed the budget {budget}")
    if n_train > ctx.T_s:
        raise ValueError("more trainers than samples per slot")
    return se_lower_bound(d, n_train, ctx)


@dataclass
class SchedulePolicy:
    actions: np.ndarray
    value: float
    tau: int
    stats: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "tau": self.tau,
                "actions": self.actions.astype(int).tolist(), "value": self.value}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SchedulePolicy":
        doc = json.loads(text)
        actions = np.array(doc["actions"], dtype=int)
        if actions.shape[0] != doc["horizon"]:
            raise ValueError("horizon does not match the action matrix")
        return cls(actions, float(doc["value"]), int(doc["tau"]))


class ScheduleEvaluator:
    """Evaluates action matrices from a precomputed rate table."""

    def __init__(self, ctx: RateContext, H: int):
        if H < 1:
            raise ValueError("horizon must be >= 1")
        self.ctx = ctx
        self.H = H
        self.table = rate_table(ctx, H - 1)
        self.N_G = ctx.N_G
        self.T_s = ctx.T_s

    def stage_reward(self, delays, n_train) -> float:
        rates = self.table[np.arange(self.N_G), delays]
        return (1.0 - n_train / self.T_s) * math.fsum(rates)

    def value(self, actions) -> float:
        actions = np.asarray(actions, dtype=int)
        d = np.zeros(self.N_G, dtype=int)
        terms = []
        for t, a in enumerate(actions):
            d = delay_transition(d, a)
            pref = 1.0 - a.sum() / self.T_s
            terms.extend(pref * self.table[np.arange(self.N_G), d])
        return math.fsum(terms)

    def batch_values(self, tails) -> np.ndarray:
        """Values of many schedules given their stages ``1..H-1``.

        ``tails`` has shape ``(n, H-1, N_G)``; stage 0 trains everyone.
        """
        n = tails.shape[0]
        groups = np.arange(self.N_G)
        total = np.full(n, (1.0 - self.N_G / self.T_s) * self.table[:, 0].sum())
        d = np.zeros((n, self.N_G), dtype=int)
        for t in range(tails.shape[1]):
            a = tails[:, t]
            d = (1 + d) * (1 - a)
            pref = 1.0 - a.sum(axis=1) / self.T_s
            total += pref * self.table[groups, d].sum(axis=1)
        return total

    def set_to_actions(self, S) -> np.ndarray:
        actions = np.zeros((self.H, self.N_G), dtype=int)
        actions[0] = 1
        for t, g in S:
            if not 1 <= t < self.H or not 0 <= g < self.N_G:
                raise ValueError(f"element {(t, g)} outside the ground set")
            actions[t, g] = 1
        return actions

    def set_value(self, S) -> float:
        return self.value(self.set_to_actions(S))


def _policy(evaluator: ScheduleEvaluator, actions, tau, **stats) -> SchedulePolicy:
    actions = np.asarray(actions, dtype=int)
    return SchedulePolicy(actions, evaluator.value(actions), tau, stats)


def feasible_actions(N_G: int, tau: int) -> np.ndarray:
    """All binary vectors with at most ``tau`` ones, in lexicographic order."""
    grid = np.array(list(itertools.product((0, 1), repeat=N_G)), dtype=int)
    return grid[grid.sum(axis=1) <= tau]


def _check_tau(ctx, tau):
    if not 0 <= tau <= ctx.N_G:
        raise ValueError(f"tau must lie in [0, N_G], got {tau}")


def brute_force_policy(ctx: RateContext, H: int, tau: int,
                       chunk: int = 200_000) -> SchedulePolicy:
    """Exhaustive search over all budget-feasible schedules.

    Ties resolve to the lexicographically smallest action matrix.
    """
    _check_tau(ctx, tau)
    if ctx.N_G > BRUTE_FORCE_MAX_GROUPS or H > BRUTE_FORCE_MAX_HORIZON:
        raise InstanceTooLarge(
            f"brute force limited to N_G <= {BRUTE_FORCE_MAX_GROUPS}, "
            f"H <= {BRUTE_FORCE_MAX_HORIZON}")
    ev = ScheduleEvaluator(ctx, H)
    acts = feasible_actions(ctx.N_G, tau)
    if H == 1:
        return _policy(ev, np.ones((1, ctx.N_G)), tau, evaluated=1)
    stages = H - 1
    total = len(acts) ** stages
    best_val, best_idx = -math.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (len(acts),) * stages), axis=1)
        vals = ev.batch_values(acts[digits])
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_idx = vals[k], digits[k]
    actions = np.vstack([np.ones(ctx.N_G, dtype=int), acts[best_idx]])
    return _policy(ev, actions, tau, evaluated=total)


def dp_optimal_policy(ctx: RateContext, H: int, tau: int,
                      chunk_cells: int = 4_000_000) -> SchedulePolicy:
    """Backward induction over the reachable delay states."""
    _check_tau(ctx, tau)
    ev = ScheduleEvaluator(ctx, H)
    N_G = ctx.N_G
    acts, layers, n_states = _reachable_layers(N_G, H, tau)
    base = max(H, 2) ** np.arange(N_G, dtype=np.int64)
    groups = np.arange(N_G)
    a_count = acts.sum(axis=1)
    step = max(1, chunk_cells // (len(acts) * N_G))

    # values[j][i]: best reward of stages j+1..H-1 from state layers[j][i]
    values = [None] * H
    choice = [None] * H
    values[H - 1] = np.zeros(len(layers[H - 1]))
    pref = 1.0 - a_count / ctx.T_s
    for j in range(H - 2, -1, -1):
        cur = layers[j]
        codes = layers[j + 1] @ base
        order = np.argsort(codes)
        sorted_codes = codes[order]
        choice[j] = np.empty(len(cur), dtype=int)
        values[j] = np.empty(len(cur))
        for i in range(0, len(cur), step):
            nxt = (1 + cur[i:i + step, None, :]) * (1 - acts[None])
            pos = order[np.searchsorted(sorted_codes, nxt @ base)]
            q = pref[None, :] * ev.table[groups, nxt].sum(axis=2) + values[j + 1][pos]
            best = np.argmax(q, axis=1)
            choice[j][i:i + step] = best
            values[j][i:i + step] = q[np.arange(len(q)), best]

    actions = [np.ones(N_G, dtype=int)]
    d = np.zeros(N_G, dtype=int)
    for j in range(H - 1):
        i = _row_index(layers[j], d)
        a = acts[choice[j][i]].astype(int)
        actions.append(a)
        d = delay_transition(d, a)
    return _policy(ev, np.array(actions), tau, states=n_states)


@functools.lru_cache(maxsize=32)
def _reachable_layers(N_G: int, H: int, tau: int):
    """Delay states reachable at each stage; depends only on the sizes."""
    acts = feasible_actions(N_G, tau).astype(np.int8)
    radix = max(H, 2)
    base = radix ** np.arange(N_G, dtype=np.int64)
    step = max(1, 4_000_000 // (len(acts) * N_G))
    layers = [np.zeros((1, N_G), dtype=np.int8)]
    n_states, work = 1, 0
    for _ in range(1, H):
        prev = layers[-1]
        work += len(prev) * len(acts)
        if work > DP_MAX_TRANSITIONS:
            raise InstanceTooLarge(f"more than {DP_MAX_TRANSITIONS} DP transitions")
        codes = np.unique(np.concatenate([
            (((1 + prev[i:i + step, None, :]) * (1 - acts[None])) @ base).ravel()
            for i in range(0, len(prev), step)]))
        n_states += len(codes)
        if n_states > DP_MAX_STATES:
            raise InstanceTooLarge(f"more than {DP_MAX_STATES} reachable delay states")
        layers.append(((codes[:, None] // base[None, :]) % radix).astype(np.int8))
    for arr in (acts, *layers):
        arr.setflags(write=False)
    return acts, tuple(layers), n_states


def _row_index(rows, d):
    return int(np.flatnonzero((rows == d).all(axis=1))[0])


def objective_set_value(S, ctx: RateContext, H: int) -> float:
    """Horizon reward of training exactly the (stage, group) pairs in ``S``."""
    return ScheduleEvaluator(ctx, H).set_value(S)


def ground_set(N_G: int, H: int) -> list[tuple[int, int]]:
    return [(t, g) for t in range(1, H) for g in range(N_G)]


def _neighbours(S, ground, tau):
    """Delete and exchange moves from ``S`` in canonical order."""
    for e in sorted(S):
        yield "delete", S - {e}
    for new in ground:
        if new in S:
            continue
        for removal in _removals(S, new, tau):
            yield "exchange", (S - removal) | {new}


def _removals(S, new, tau):
    """Removal sets for inserting ``new``: at most one element per stage.

    When the stage of ``new`` is already full, one of its elements must go.
    """
    stages = sorted({t for t, _ in S} | {new[0]})
    options = []
    for t in stages:
        block = sorted(v for v in S if v[0] == t)
        if t == new[0] and len(block) >= tau:
            options.append(block)
        else:
            options.append([None] + block)
    for combo in itertools.product(*options):
        yield frozenset(v for v in combo if v is not None)


def _batch_set_values(ev, sets):
    tails = np.zeros((len(sets), ev.H - 1, ev.N_G), dtype=int)
    for i, S in enumerate(sets):
        for t, g in S:
            tails[i, t - 1, g] = 1
    return ev.batch_values(tails)


def _local_search(ev, ground, tau, threshold, stats, strategy):
    ground = sorted(ground)
    if not ground or tau == 0:
        return frozenset()
    singles = [frozenset([v]) for v in ground]
    S = singles[int(np.argmax(_batch_set_values(ev, singles)))]
    while True:
        current = _batch_set_values(ev, [S])[0]
        target = threshold * current if current > 0 else current
        moves = list(_neighbours(S, ground, tau))
        vals = _batch_set_values(ev, [m[1] for m in moves])
        better = np.flatnonzero(vals > target)
        if better.size == 0:
            return S
        if strategy == "first":
            deletes = [i for i in better if moves[i][0] == "delete"]
            pick = deletes[0] if deletes else better[0]
        else:
            pick = better[np.argmax(vals[better])]
        kind, S = moves[pick]
        stats[kind + "s"] += 1


def local_search_policy(ctx: RateContext, H: int, tau: int, eps: float = 0.5,
                        strategy: str = "first") -> SchedulePolicy:
    """Approximate local search over ``H`` rounds on shrinking ground sets.

    Each round runs delete/exchange local search from the best singleton,
    accepting a move only when it improves the objective by a factor of
    ``1 + eps / N_G**4``; the best set across rounds is returned.
    ``strategy`` picks among applicable moves: ``"first"`` takes deletions
    before exchanges in canonical order, ``"best"`` takes the largest gain.
    """
    if strategy not in ("first", "best"):
        raise ValueError(f"unknown strategy {strategy!r}")
    _check_tau(ctx, tau)
    if eps <= 0:
        raise ValueError("eps must be positive")
    ev = ScheduleEvaluator(ctx, H)
    f = ev.set_value
    threshold = 1.0 + eps / ctx.N_G ** 4
    stats = {"deletes": 0, "exchanges": 0, "rounds": 0}
    remaining = ground_set(ctx.N_G, H)
    best = None
    for _ in range(max(H, 1)):
        S = _local_search(ev, remaining, tau, threshold, stats, strategy)
        stats["rounds"] += 1
        if best is None or f(S) > f(best):
            best = S
        remaining = [v for v in remaining if v not in S]
        if not remaining:
            break
    stats["moves"] = stats["deletes"] + stats["exchanges"]
    stats["start_value"] = f(frozenset())
    return _policy(ev, ev.set_to_actions(best), tau, **stats)


def per_slot_greedy_policy(ctx: RateContext, H: int, tau: int) -> SchedulePolicy:
    """Myopic schedule: every stage maximizes its own reward only."""
    _check_tau(ctx, tau)
    ev = ScheduleEvaluator(ctx, H)
    groups = np.arange(ctx.N_G)
    actions = [np.ones(ctx.N_G, dtype=int)]
    d = np.zeros(ctx.N_G, dtype=int)
    for _ in range(1, H):
        aged = d + 1
        gain = ev.table[groups, 0] - ev.table[groups, aged]
        order = np.lexsort((groups, -gain))
        base = ev.table[groups, aged].sum()
        best_k, best_val = 0, base
        running = base
        for k in range(1, tau + 1):
            running += gain[order[k - 1]]
            val = (1.0 - k / ctx.T_s) * running
            if val > best_val:
                best_k, best_val = k, val
        a = np.zeros(ctx.N_G, dtype=int)
        a[order[:best_k]] = 1
        actions.append(a)
        d = delay_transition(d, a)
    return _policy(ev, np.array(actions), tau)


def always_train_policy(ctx: RateContext, H: int, tau: int) -> SchedulePolicy:
    """Reference protocol: every group trains at every stage, ignoring ``tau``."""
    return _policy(ScheduleEvaluator(ctx, H), np.ones((H, ctx.N_G)), tau)


def is_feasible(actions, tau: int) -> bool:
    actions = np.asarray(actions, dtype=int)
    return bool(np.all(actions[0] == 1) and np.all(actions[1:].sum(axis=1) <= tau))
