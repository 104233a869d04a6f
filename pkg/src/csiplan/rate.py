"""
Uplink spectral efficiency with outdated CSI and MRC receivers.

Closed-form lower bound on the average achievable SE per copilot group,
the large-antenna gain condition against a classical TDD protocol, and a
Monte Carlo simulation of the pilot/estimation/aging/detection chain used
to validate the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import SystemConstants, complex_normal, estimate_scale, make_rng


@dataclass
class RateContext:
    """Per-copilot-group link statistics for one large-scale block.

    ``beta[j, g, c]`` and ``rho[j, g, c]`` describe the link between the
    member of group ``g`` in cell ``c`` and BS ``j``. Cells without a member
    in group ``g`` carry ``beta = 0``.
    """

    constants: SystemConstants
    beta: np.ndarray
    rho: np.ndarray
    tau: int | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.beta.ndim != 3 or self.beta.shape[0] != self.beta.shape[2]:
            raise ValueError(f"beta must be C x N_G x C, got {self.beta.shape}")
        if self.rho.shape != self.beta.shape:
            raise ValueError("rho and beta shapes differ")
        if np.any(self.beta < 0):
            raise ValueError("beta must be non-negative")
        if np.any(np.abs(self.rho) > 1 + 1e-12):
            raise ValueError("|rho| must be <= 1")
        if self.tau is None:
            self.tau = self.N_G
        if not 0 <= self.tau <= self.N_G:
            raise ValueError(f"tau must lie in [0, N_G], got {self.tau}")
        if self.N_G >= self.constants.T_s:
            raise ValueError("N_G must be smaller than T_s")

    @property
    def C(self) -> int:
        return self.beta.shape[0]

    @property
    def N_G(self) -> int:
        return self.beta.shape[1]

    @property
    def M(self) -> int:
        return self.constants.M

    @property
    def T_s(self) -> int:
        return self.constants.T_s

    @property
    def present(self) -> np.ndarray:
        """``present[g, l]``: group ``g`` has a member in cell ``l``."""
        return np.einsum("lgl->gl", self.beta) > 0

    def with_antennas(self, M: int) -> "RateContext":
        return RateContext(self.constants.replace(M=M), self.beta, self.rho, self.tau)


@dataclass
class SinrBreakdown:
    signal: float
    pilot_interference: float
    noise_and_error: float
    sinr: float


def _check_delays(delays, n_groups):
    d = np.asarray(delays)
    if d.shape != (n_groups,):
        raise ValueError(f"expected {n_groups} delays, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.equal(np.mod(d, 1), 0)):
        raise ValueError("delays must be non-negative integers")
    return d.astype(int)


def sinr_terms(ctx: RateContext, delays):
    """Vectorized SINR ingredients, each of shape ``(N_G, C)``.

    Returns ``(signal, pilot_interference, noise_and_error, sinr)``.
    """
    d = _check_delays(delays, ctx.N_G)
    P_p, P_u, M = ctx.constants.P_p, ctx.constants.P_u, ctx.M
    beta = np.transpose(ctx.beta, (1, 0, 2))     # [g, l, c]
    rho = np.transpose(ctx.rho, (1, 0, 2))
    aged = rho ** (2 * d[:, None, None])         # rho^(2 d_g), 0**0 == 1
    own = np.arange(ctx.C)

    denom = 1.0 / P_p + beta.sum(axis=2)          # [g, l]
    signal = beta[:, own, own] ** 2 * aged[:, own, own]
    contaminated = aged * beta ** 2
    pilot = contaminated.sum(axis=2) - contaminated[:, own, own]
    total_at_bs = ctx.beta.sum(axis=(1, 2))       # [l]
    other_groups = total_at_bs[None, :] - beta.sum(axis=2)
    residual = (beta - contaminated / denom[:, :, None]).sum(axis=2)
    noise = denom * (other_groups + residual + 1.0 / P_u)
    sinr = (M - 1) * signal / ((M - 1) * pilot + noise)
    return signal, pilot, noise, sinr


def sinr_mrc(group: int, cell: int, delay: int, ctx: RateContext) -> SinrBreakdown:
    """SINR of the member of ``group`` in ``cell`` with CSI that is ``delay`` slots old."""
    if delay < 0:
        raise ValueError("delay must be non-negative")
    delays = np.zeros(ctx.N_G, dtype=int)
    delays[group] = delay
    s, p, n, q = sinr_terms(ctx, delays)
    return SinrBreakdown(float(s[group, cell]), float(p[group, cell]),
                         float(n[group, cell]), float(q[group, cell]))


def user_rates(ctx: RateContext, delays) -> np.ndarray:
    """``log2(1 + SINR)`` per (group, cell); zero for empty slots."""
    sinr = sinr_terms(ctx, delays)[3]
    return np.where(ctx.present, np.log2(1.0 + sinr), 0.0)


def rate_table(ctx: RateContext, max_delay: int) -> np.ndarray:
    """``table[g, d]`` = sum over cells of ``log2(1 + SINR)`` at delay ``d``.

    The SINR of a group only depends on its own delay, so the per-slot
    bound is ``prefactor * sum_g table[g, d_g]``.
    """
    table = np.empty((ctx.N_G, max_delay + 1))
    for d in range(max_delay + 1):
        table[:, d] = user_rates(ctx, np.full(ctx.N_G, d)).sum(axis=1)
    return table


def training_prefactor(active_trainers, T_s) -> float:
    return 1.0 - active_trainers / T_s


def se_lower_bound(delays, active_trainers: int, ctx: RateContext) -> float:
    """Lower bound on the summed uplink SE (bits/s/Hz) for one slot."""
    if not 0 <= active_trainers <= ctx.T_s:
        raise ValueError("active_trainers must lie in [0, T_s]")
    pref = training_prefactor(active_trainers, ctx.T_s)
    if pref == 0:
        return 0.0
    return float(pref * user_rates(ctx, delays).sum())


def sinr_infinity(ctx: RateContext) -> np.ndarray:
    """Large-antenna SINR with fresh CSI, ``(N_G, C)``; inf without contamination."""
    own = np.arange(ctx.C)
    b2 = np.transpose(ctx.beta, (1, 0, 2)) ** 2
    serving = b2[:, own, own]
    contamination = b2.sum(axis=2) - serving
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(contamination > 0, serving / contamination, np.inf)


def gain_condition(rho_min, rho_max, d, sinr_inf, T_s, N_G, tau) -> bool:
    """Sufficient condition for outdated-CSI training to beat full training.

    Compares ``(rho_min**2 / rho_max**2) ** d`` with
    ``((1 + sinr_inf) ** ((T_s - N_G) / (T_s - tau)) - 1) / sinr_inf``.
    """
    if rho_max == 0:
        raise ValueError("rho_max must be non-zero")
    if not 0 < abs(rho_min) <= abs(rho_max) <= 1:
        raise ValueError("expected 0 < rho_min <= rho_max <= 1")
    if sinr_inf <= 0:
        raise ValueError("sinr_inf must be positive")
    if not 0 <= tau <= N_G < T_s:
        raise ValueError("expected tau <= N_G < T_s")
    lhs = (rho_min ** 2 / rho_max ** 2) ** d
    exponent = (T_s - N_G) / (T_s - tau)
    rhs = math.expm1(exponent * math.log1p(sinr_inf)) / sinr_inf
    return lhs >= rhs


def asymptotic_se(betas, rhos, serving: int, delay: int, active_trainers: int,
                  T_s: int) -> float:
    """Large-antenna limit of one user's SE bound.

    ``betas`` and ``rhos`` hold the gains/correlations toward the serving BS
    of every member of the user's copilot group (one per cell).
    """
    b2 = np.asarray(betas, dtype=float) ** 2
    aged = np.asarray(rhos, dtype=float) ** (2 * delay) * b2
    interference = aged.sum() - aged[serving]
    pref = training_prefactor(active_trainers, T_s)
    return pref * math.log2(1.0 + aged[serving] / interference)


@dataclass
class MonteCarloResult:
    mean: float
    half_width: float
    trials: int
    per_user: np.ndarray = field(repr=False)


def _pilot_phase_vector(rng, betas, pos, P_p, M, B):
    # Full M-antenna pilot phase: returns (||ghat||, combiner projections).
    h = complex_normal(rng, (B, len(betas), M), betas[None, :, None])
    w = complex_normal(rng, (B, M))
    y = math.sqrt(P_p) * h.sum(axis=1) + w
    ghat = estimate_scale(betas, P_p, pos) * y / math.sqrt(P_p)
    norm = np.linalg.norm(ghat, axis=1)
    u = ghat / norm[:, None]
    return norm, np.einsum("bcm,bm->bc", h, u.conj())


def _pilot_phase_projected(rng, betas, pos, P_p, M, B):
    # Same joint law as the vector version, drawn from sufficient statistics:
    # ||y||^2 is a scaled Gamma(M) variable and, given y, each channel splits
    # into a multiple of y plus a residual that is isotropic and independent
    # of the combiner direction.
    var_y = P_p * betas.sum() + 1.0
    norm_y = np.sqrt(var_y * rng.gamma(M, 1.0, size=B))
    gain = math.sqrt(P_p) * betas / var_y
    cov = np.diag(betas) - P_p * np.outer(betas, betas) / var_y
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    z = complex_normal(rng, (B, len(betas)))
    proj = norm_y[:, None] * gain[None, :] + z @ root.T
    return gain[pos] * norm_y, proj


def monte_carlo_se(ctx: RateContext, delays, active_trainers: int,
                   trials: int = 10_000, seed=0, method: str = "projected",
                   chunk: int = 2000) -> MonteCarloResult:
    """Simulated uplink SE with stale MMSE estimates and MRC detection.

    For every user the pilot phase of its copilot group is simulated, the BS
    forms the MMSE estimate, the combiner is aligned with it and the
    channels then age for ``d_g`` Gauss-Markov steps. Interference from other
    copilot groups and receiver noise are independent of the combiner and
    enter through their projections. The instantaneous SINR treats the
    estimate-aligned part of the desired signal as useful and everything
    else as noise.

    ``method="vector"`` draws full ``M``-antenna vectors; ``"projected"``
    (default) draws the same joint distribution of the combiner statistics
    directly, which makes the cost independent of ``M``.

    Returns the mean summed SE over trials with a normal-approximation 95%
    half-width.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    phase = {"vector": _pilot_phase_vector,
             "projected": _pilot_phase_projected}.get(method)
    if phase is None:
        raise ValueError(f"unknown method {method!r}")
    d = _check_delays(delays, ctx.N_G)
    rng = make_rng(seed)
    P_p, P_u, M = ctx.constants.P_p, ctx.constants.P_u, ctx.M
    pref = training_prefactor(active_trainers, ctx.T_s)
    present = ctx.present
    totals = np.zeros(trials)
    per_user = np.zeros((ctx.N_G, ctx.C))

    for start in range(0, trials, chunk):
        B = min(chunk, trials - start)
        for g in range(ctx.N_G):
            members = np.flatnonzero(present[g])
            for l in members:
                betas = ctx.beta[l, g, members]
                rhos = ctx.rho[l, g, members]
                pos = int(np.flatnonzero(members == l)[0])
                norm, proj = phase(rng, betas, pos, P_p, M, B)
                for _ in range(d[g]):
                    eps = complex_normal(rng, proj.shape, 1.0 - rhos ** 2)
                    proj = rhos * proj + np.sqrt(betas) * eps
                known = rhos[pos] ** d[g] * norm
                error = np.abs(proj[:, pos] - known) ** 2
                power = np.abs(proj) ** 2
                contamination = power.sum(axis=1) - power[:, pos]
                others = np.delete(ctx.beta[l], g, axis=0).ravel()
                others = others[others > 0]
                inter = (np.abs(complex_normal(rng, (B, others.size))) ** 2 * others).sum(axis=1)
                noise = np.abs(complex_normal(rng, B)) ** 2 / P_u
                sinr = known ** 2 / (contamination + error + inter + noise)
                rates = pref * np.log2(1.0 + sinr)
                totals[start:start + B] += rates
                per_user[g, l] += rates.sum()

    mean = float(totals.mean())
    std = float(totals.std(ddof=1)) if trials > 1 else 0.0
    return MonteCarloResult(mean, 1.96 * std / math.sqrt(trials), trials, per_user / trials)
