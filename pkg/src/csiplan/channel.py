"""
Physical-layer channel model.

Large-scale gains from distance-based pathloss, Doppler shifts and the
Jakes temporal autocorrelation, first-order Gauss-Markov channel aging and
MMSE uplink channel estimation under pilot reuse.

Index convention used throughout the package: ``beta[j, k, c]`` is the
large-scale gain of user ``k`` of cell ``c`` toward base station ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

SPEED_OF_LIGHT = 3e8
MIN_DISTANCE = 10.0


@dataclass(frozen=True)
class SystemConstants:
    """System-wide constants of the multi-cell TDD deployment.

    Powers are linear and normalized to the receiver noise power.
    """

    M: int = 100
    C: int = 7
    K: int = 8
    T_s: int = 200
    D_c: float = 1e-3
    f_c: float = 2e9
    P_p: float = 1e11
    P_u: float = 1e11
    pathloss_exponent: float = 3.5
    bandwidth: float = 200e6

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        for name in ("C", "K", "T_s", "D_c", "f_c", "P_p", "P_u",
                     "pathloss_exponent", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def replace(self, **changes) -> "SystemConstants":
        fields = dict(self.__dict__)
        fields.update(changes)
        return SystemConstants(**fields)


def doppler_shift(speed, f_c, angle):
    """Doppler shift in Hz of a user moving at ``speed`` m/s.

    ``angle`` is the angle between the movement direction and the incident
    wave. The result is negative when the user moves away from the source.
    """
    speed = np.asarray(speed, dtype=float)
    if np.any(speed < 0):
        raise ValueError("speed must be non-negative")
    if f_c <= 0:
        raise ValueError("carrier frequency must be positive")
    out = speed * f_c * np.cos(angle) / SPEED_OF_LIGHT
    return float(out) if out.ndim == 0 else out


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind."""
    out = special.j0(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def autocorrelation(doppler, D_c):
    """Jakes temporal correlation ``J0(2 pi f D_c)`` over one slot."""
    if D_c <= 0:
        raise ValueError("D_c must be positive")
    return bessel_j0(2.0 * math.pi * np.asarray(doppler, dtype=float) * D_c)


def pathloss_beta(distance, exponent, d_min=None):
    """Large-scale gain ``distance ** -exponent``.

    When ``d_min`` is given, distances below it are clamped to it.
    """
    distance = np.asarray(distance, dtype=float)
    if d_min is not None:
        distance = np.maximum(distance, d_min)
    out = distance ** (-float(exponent))
    return float(out) if out.ndim == 0 else out


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def complex_normal(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def evolve_channel(g_prev, rho, beta, rng) -> np.ndarray:
    """One step of the Gauss-Markov channel evolution.

    Returns ``rho * g_prev + sqrt(beta) * eps`` where ``eps`` has i.i.d.
    CN(0, 1 - rho**2) entries, so a stationary input with per-entry variance
    ``beta`` yields a stationary output.
    """
    if abs(rho) > 1:
        raise ValueError(f"|rho| must be <= 1, got {rho}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    g_prev = np.asarray(g_prev)
    if rho == 1:
        return g_prev.astype(complex, copy=True)
    rng = make_rng(rng)
    eps = complex_normal(rng, g_prev.shape, 1.0 - rho * rho)
    return rho * g_prev + math.sqrt(beta) * eps


def estimate_scale(betas, P_p, serving=0) -> float:
    """MMSE scaling ``beta_serving / (1/P_p + sum(betas))``."""
    betas = np.asarray(betas, dtype=float)
    return float(betas[serving] / (1.0 / P_p + betas.sum()))


def estimate_variance(betas, P_p, serving=0) -> float:
    """Per-entry variance of the MMSE estimate, ``beta**2 / (1/P_p + sum)``."""
    betas = np.asarray(betas, dtype=float)
    return float(betas[serving] ** 2 / (1.0 / P_p + betas.sum()))


def mmse_estimate(Y_p, pilot_index, betas_toward_bs, P_p, serving=0,
                  pilots=None) -> np.ndarray:
    """MMSE estimate of one user's channel from the received pilot block.

    Parameters
    ----------
    Y_p : np.ndarray
        Received pilot signal, ``M x tau`` (or ``... x M x tau``).
    pilot_index : int
        Index of the pilot sequence used by the target copilot group.
    betas_toward_bs : sequence of float
        Large-scale gains toward this BS of every user sharing the pilot,
        one per cell, including the target user.
    P_p : float
        Pilot power.
    serving : int
        Position of the target user inside ``betas_toward_bs``.
    pilots : np.ndarray, optional
        ``tau x tau`` matrix whose columns are the orthonormal pilot
        sequences. Defaults to the canonical basis.
    """
    Y_p = np.asarray(Y_p)
    if Y_p.ndim < 2 or Y_p.shape[-1] == 0:
        raise ValueError("Y_p must be M x tau with tau >= 1")
    tau = Y_p.shape[-1]
    if not 0 <= pilot_index < tau:
        raise ValueError(f"pilot_index {pilot_index} out of range for tau={tau}")
    if pilots is None:
        despread = Y_p[..., pilot_index]
    else:
        pilots = np.asarray(pilots)
        if pilots.shape != (tau, tau):
            raise ValueError(f"pilots must be {tau} x {tau}, got {pilots.shape}")
        despread = Y_p @ pilots[:, pilot_index]
    return estimate_scale(betas_toward_bs, P_p, serving) * despread / math.sqrt(P_p)
