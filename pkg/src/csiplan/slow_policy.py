"""
Slow time scale: location feedback under Markov mobility.

Each copilot group moves on an ``L``-state Markov chain. The controller
keeps one belief column per group, may ask at most ``U_max`` groups per
epoch to report their location, and plans the fast time scale with the
most likely locations. The upper-level problem is reduced to the MDP over
location vectors and solved by discounted value iteration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import fast_policy
from .channel import SystemConstants, make_rng
from .rate import RateContext

VALUE_ITERATION_MAX_STATES = 10 ** 6

FAST_METHODS = {
    "dp": fast_policy.dp_optimal_policy,
    "local_search": fast_policy.local_search_policy,
    "per_slot_greedy": fast_policy.per_slot_greedy_policy,
    "brute_force": fast_policy.brute_force_policy,
    "reference": fast_policy.always_train_policy,
}


@dataclass
class MobilityModel:
    """Per-group location chains and the link statistics of every location.

    ``P[g]`` is the ``L x L`` row-stochastic transition matrix of group
    ``g``. ``beta_table[g, loc, j, c]`` (and ``rho_table``) hold the link
    from the group's member in cell ``c`` to BS ``j`` when the group is at
    location ``loc``; cells without a member hold zeros.
    """

    P: np.ndarray
    beta_table: np.ndarray
    rho_table: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.beta_table = np.asarray(self.beta_table, dtype=float)
        self.rho_table = np.asarray(self.rho_table, dtype=float)
        if self.P.ndim != 3 or self.P.shape[1] != self.P.shape[2]:
            raise ValueError("P must have shape (N_G, L, L)")
        if np.any(self.P < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.abs(self.P.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition matrix rows must sum to 1")
        N_G, L = self.P.shape[:2]
        if self.beta_table.ndim != 4 or self.beta_table.shape[:2] != (N_G, L):
            raise ValueError("beta_table must have shape (N_G, L, C, C)")
        if self.rho_table.shape != self.beta_table.shape:
            raise ValueError("rho_table and beta_table shapes differ")
        # links of present members, shape (N_G, L, C_bs, n_present)
        member_links = self.beta_table.transpose(0, 3, 1, 2)[self.present]
        if np.any(self.beta_table < 0) or np.any(member_links <= 0):
            raise ValueError("beta_table must be positive for every present member")

    @property
    def N_G(self) -> int:
        return self.P.shape[0]

    @property
    def L(self) -> int:
        return self.P.shape[1]

    @property
    def C(self) -> int:
        return self.beta_table.shape[2]

    @property
    def present(self) -> np.ndarray:
        """``present[g, c]``: group ``g`` has a member in cell ``c``."""
        own = np.arange(self.beta_table.shape[2])
        return self.beta_table[:, 0, own, own] > 0

    def context_at(self, locations, constants: SystemConstants,
                   tau: int | None = None) -> RateContext:
        loc = np.asarray(locations, dtype=int)
        if loc.shape != (self.N_G,) or np.any(loc < 0) or np.any(loc >= self.L):
            raise ValueError(f"invalid location vector {locations!r}")
        groups = np.arange(self.N_G)
        beta = self.beta_table[groups, loc].transpose(1, 0, 2)
        rho = self.rho_table[groups, loc].transpose(1, 0, 2)
        return RateContext(constants, beta, rho, tau)


def _check_belief(x, L, N_G):
    x = np.asarray(x, dtype=float)
    if x.shape != (L, N_G):
        raise ValueError(f"belief must be {L} x {N_G}, got {x.shape}")
    return x


def belief_update(x, u, observations, models: MobilityModel) -> np.ndarray:
    """Collapse observed columns to their reported location, then propagate.

    ``observations`` maps every group with ``u[g] == 1`` to its location.
    """
    x = _check_belief(x, models.L, models.N_G).copy()
    u = np.asarray(u, dtype=int)
    observed = set(np.flatnonzero(u).tolist())
    extra = set(observations) - observed
    if extra:
        raise ValueError(f"observations for unobserved groups {sorted(extra)}")
    missing = observed - set(observations)
    if missing:
        raise ValueError(f"missing observations for groups {sorted(missing)}")
    for g, loc in observations.items():
        x[:, g] = 0.0
        x[loc, g] = 1.0
    out = np.einsum("gij,ig->jg", models.P, x)
    # Renormalize round-off so columns stay on the simplex.
    return out / out.sum(axis=0, keepdims=True)


def most_likely_state(x) -> np.ndarray:
    """Per-group most likely location; ties go to the lowest index."""
    return np.argmax(np.asarray(x), axis=0)


class FastPlanner:
    """Memoized fast-time-scale optimizer keyed by location vector."""

    def __init__(self, models: MobilityModel, constants: SystemConstants,
                 H: int, tau: int, method: str = "dp", **options):
        if method not in FAST_METHODS:
            raise ValueError(f"unknown fast method {method!r}")
        self.models, self.constants = models, constants
        self.H, self.tau, self.method = H, tau, method
        self.options = options
        self._plans = {}

    def plan(self, locations) -> fast_policy.SchedulePolicy:
        key = tuple(int(v) for v in locations)
        if key not in self._plans:
            ctx = self.models.context_at(key, self.constants, self.tau)
            self._plans[key] = FAST_METHODS[self.method](ctx, self.H, self.tau, **self.options)
        return self._plans[key]

    def value(self, locations) -> float:
        return self.plan(locations).value


def planning_locations(state, u, observations=None) -> np.ndarray:
    """MLS locations with observed groups replaced by their reports."""
    loc = np.array(state, dtype=int)
    for g, where in (observations or {}).items():
        if not u[g]:
            raise ValueError(f"group {g} reported without being asked")
        loc[g] = where
    return loc


def r_max(state, u, planner: FastPlanner, observations=None) -> float:
    """Best fast-time-scale horizon reward when planning at ``state``."""
    return planner.value(planning_locations(state, u, observations))


def feedback_actions(N_G: int, U_max: int) -> np.ndarray:
    grid = np.array(list(itertools.product((0, 1), repeat=N_G)), dtype=int)
    return grid[grid.sum(axis=1) <= U_max]


@dataclass
class UpperPolicy:
    U_max: int
    actions: dict
    values: np.ndarray
    residuals: list = field(default_factory=list)
    iterations: int = 0

    def __call__(self, state) -> np.ndarray:
        return self.actions[tuple(int(v) for v in state)]

    def to_json_dict(self) -> dict:
        return {"U_max": self.U_max,
                "policy": {",".join(map(str, s)): a.astype(int).tolist()
                           for s, a in sorted(self.actions.items())}}

    @property
    def contraction_ratios(self) -> list:
        r = self.residuals
        return [r[k + 1] / r[k] for k in range(len(r) - 1) if r[k] > 0]


def _expect_next(V, P):
    # E[V(s') | s] with independent per-group chains, one axis at a time.
    out = V
    for g in range(P.shape[0]):
        out = np.moveaxis(np.tensordot(P[g], out, axes=([1], [g])), 0, g)
    return out


def mls_value_iteration(models: MobilityModel, planner: FastPlanner, alpha: float = 0.9,
                        U_max: int | None = None, tol: float = 1e-6,
                        max_iter: int = 10_000) -> UpperPolicy:
    """Discounted value iteration on the MDP over location vectors.

    In the reduced model the observation of a group coincides with its
    location in the MLS state, so the stage reward ``r_max(s, u)`` and the
    transition law are the same for every feedback vector. The greedy
    step therefore ties across ``u``; ties resolve toward asking the
    ``U_max`` groups whose next location is least predictable.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    N_G, L = models.N_G, models.L
    U_max = N_G if U_max is None else U_max
    if not 0 <= U_max <= N_G:
        raise ValueError("U_max must lie in [0, N_G]")
    if L ** N_G > VALUE_ITERATION_MAX_STATES:
        raise fast_policy.InstanceTooLarge(
            f"{L}^{N_G} location states exceed {VALUE_ITERATION_MAX_STATES}")
    shape = (L,) * N_G
    states = list(itertools.product(range(L), repeat=N_G))
    cand = feedback_actions(N_G, U_max)

    reward = np.empty((len(states), len(cand)))
    for i, s in enumerate(states):
        for k, u in enumerate(cand):
            obs = {g: s[g] for g in np.flatnonzero(u)}
            reward[i, k] = r_max(s, u, planner, obs)

    V = np.zeros(len(states))
    residuals = []
    for it in range(1, max_iter + 1):
        ev = _expect_next(V.reshape(shape), models.P).ravel()
        newV = (reward + alpha * ev[:, None]).max(axis=1)
        residuals.append(float(np.max(np.abs(newV - V))))
        V = newV
        if residuals[-1] < tol:
            break

    ev = _expect_next(V.reshape(shape), models.P).ravel()
    q = reward + alpha * ev[:, None]
    uncertainty = 1.0 - models.P.max(axis=2)          # [g, loc]
    actions = {}
    for i, s in enumerate(states):
        best = np.flatnonzero(q[i] >= q[i].max() - 1e-9 * max(1.0, abs(q[i].max())))
        spread = uncertainty[np.arange(N_G), list(s)]
        key = lambda k: (-int(cand[k].sum()), -float(cand[k] @ spread),
                         tuple(-cand[k]))
        actions[s] = cand[min(best, key=key)]
    return UpperPolicy(U_max, actions, V.reshape(shape), residuals, it)


def informative_feedback(models: MobilityModel, U_max: int):
    """Upper policy asking the ``U_max`` least predictable groups."""
    uncertainty = 1.0 - models.P.max(axis=2)

    def policy(state):
        spread = uncertainty[np.arange(models.N_G), np.asarray(state, dtype=int)]
        order = np.lexsort((np.arange(models.N_G), -spread))
        u = np.zeros(models.N_G, dtype=int)
        u[order[:U_max]] = 1
        return u
    return policy


@dataclass
class PolicyTrace:
    """Per-slot schedule outcome and per-epoch feedback decisions."""

    slots: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s["reward"] for s in self.slots], dtype=float)

    @property
    def case(self) -> np.ndarray:
        r = self.rewards
        return np.cumsum(r) / np.arange(1, r.size + 1) if r.size else r

    def to_dict(self) -> dict:
        return {"slots": self.slots, "epochs": self.epochs,
                "case": self.case.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "PolicyTrace":
        return cls(list(doc["slots"]), list(doc["epochs"]))


def run_two_timescale(models: MobilityModel, constants: SystemConstants, upper_policy,
                      planner: FastPlanner, Z: int, seed=0,
                      initial_locations=None) -> PolicyTrace:
    """Simulate ``Z`` epochs of feedback, planning and scoring.

    True locations follow the mobility chains from their own random
    stream. Plans use the believed locations; every slot is scored with
    the true link statistics.
    """
    if Z < 1:
        raise ValueError("Z must be >= 1")
    rng = make_rng(seed)
    N_G, L = models.N_G, models.L
    start = np.zeros(N_G, dtype=int) if initial_locations is None else \
        np.asarray(initial_locations, dtype=int)
    prior = np.zeros((L, N_G))
    prior[start, np.arange(N_G)] = 1.0
    x = np.einsum("gij,ig->jg", models.P, prior)
    truth = _step_locations(start, models.P, rng)

    trace = PolicyTrace()
    slot = 0
    for n in range(Z):
        state = most_likely_state(x)
        u = np.asarray(upper_policy(state), dtype=int)
        obs = {int(g): int(truth[g]) for g in np.flatnonzero(u)}
        believed = planning_locations(state, u, obs)
        plan = planner.plan(believed)
        true_ev = fast_policy.ScheduleEvaluator(
            models.context_at(truth, constants, planner.tau), planner.H)
        plan_ev = fast_policy.ScheduleEvaluator(
            models.context_at(believed, constants, planner.tau), planner.H)
        d = np.zeros(N_G, dtype=int)
        for t, a in enumerate(plan.actions):
            d = fast_policy.delay_transition(d, a)
            trace.slots.append({
                "slot": slot, "epoch": n, "stage": t,
                "actions": a.tolist(), "delays": d.tolist(),
                "reward": true_ev.stage_reward(d, int(a.sum())),
                "planned_reward": plan_ev.stage_reward(d, int(a.sum())),
            })
            slot += 1
        trace.epochs.append({"epoch": n, "u": u.tolist(), "mls": state.tolist(),
                             "believed": believed.tolist(), "true": truth.tolist()})
        x = belief_update(x, u, obs, models)
        truth = _step_locations(truth, models.P, rng)
    return trace


def _step_locations(loc, P, rng):
    # One uniform per group keeps the location stream independent of decisions.
    draws = rng.random(len(loc))
    cdf = np.cumsum(P[np.arange(len(loc)), loc], axis=1)
    nxt = (draws[:, None] >= cdf).sum(axis=1)
    return np.minimum(nxt, P.shape[1] - 1)
