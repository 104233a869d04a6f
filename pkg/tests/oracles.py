"""Independent reference implementations used as test oracles."""

import itertools

import mpmath
import numpy as np


def j0_series(x, dps=60):
    """Bessel J0 from its power series in high precision."""
    with mpmath.workdps(dps):
        x = mpmath.mpf(x)
        term = mpmath.mpf(1)
        total = term
        q = -(x * x) / 4
        k = 0
        while True:
            k += 1
            term *= q / (k * k)
            total += term
            if abs(term) < mpmath.mpf(10) ** (-dps + 5) and k > abs(x):
                break
        return float(total)


def best_contiguous_partition_sse(values, k):
    """Minimum within-cluster SSE over contiguous splits of the sorted values.

    Optimal 1-D k-means clusters are intervals of the sorted data, so this
    enumeration is exhaustive.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    k = min(k, len(np.unique(v)))
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        parts = np.split(v, cuts)
        best = min(best, sum(((p - p.mean()) ** 2).sum() for p in parts))
    return best


def min_matching_variance(cell_a, cell_b):
    """Exhaustive pairing of two equal-size cells minimizing summed pair variance."""
    best = np.inf
    for perm in itertools.permutations(range(len(cell_b))):
        total = sum(np.var([cell_a[i], cell_b[j]]) for i, j in enumerate(perm))
        best = min(best, total)
    return best


def iterate_delays(history, j):
    d = np.zeros(np.asarray(history).shape[1], dtype=int)
    for t in range(j):
        a = np.asarray(history[t])
        d = (1 + d) * (1 - a)
    return d


def joint_argmax(x):
    """Argmax of the product of per-column beliefs over the joint space."""
    L, n = x.shape
    best, arg = -1.0, None
    for combo in itertools.product(range(L), repeat=n):
        p = np.prod([x[combo[g], g] for g in range(n)])
        if p > best:
            best, arg = p, combo
    return np.array(arg)


def sinr_scalar(ctx, g, l, d):
    """Loop-based SINR bound for one user, written term by term."""
    M, P_p, P_u = ctx.M, ctx.constants.P_p, ctx.constants.P_u
    C = ctx.C
    b = ctx.beta[l]
    r = ctx.rho[l]
    denom = 1.0 / P_p + sum(b[g, c] for c in range(C))
    signal = b[g, l] ** 2 * r[g, l] ** (2 * d)
    pilot = sum(r[g, c] ** (2 * d) * b[g, c] ** 2 for c in range(C) if c != l)
    others = sum(b[k, c] for k in range(ctx.N_G) if k != g for c in range(C))
    resid = sum(b[g, c] - r[g, c] ** (2 * d) * b[g, c] ** 2 / denom for c in range(C))
    noise = denom * (others + resid + 1.0 / P_u)
    return (M - 1) * signal / ((M - 1) * pilot + noise)
