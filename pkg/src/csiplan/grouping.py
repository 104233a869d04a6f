"""
Autocorrelation-based user clustering and copilot-group formation.

Users are clustered on their serving-link autocorrelation with 1-D k-means;
inside every cluster the users of each cell are matched by rank so that
copilot groups gather users with similar channel aging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import make_rng


def cluster_count(D_max: float, D_c: float) -> int:
    """Number of autocorrelation clusters, ``ceil(D_max / D_c)``."""
    if D_c <= 0:
        raise ValueError("D_c must be positive")
    if D_max < D_c:
        raise ValueError(f"D_max ({D_max}) must be >= D_c ({D_c})")
    # Guard against 5e-3 / 1e-3 = 5.000000000000001.
    return max(1, math.ceil(round(D_max / D_c, 9)))


def coherence_time(max_doppler: float) -> float:
    """Classical 50%-correlation coherence time ``0.423 / f_max``."""
    if max_doppler <= 0:
        return math.inf
    return 0.423 / max_doppler


@dataclass
class Cluster:
    members: list
    rhos: np.ndarray
    mean_rho: float
    var_rho: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster must be non-empty")


def _sse(values, labels, centroids):
    return float(((values - centroids[labels]) ** 2).sum())


def _assign(values, centroids):
    # argmin picks the first (lowest-index) centroid on ties
    return np.abs(values[:, None] - centroids[None, :]).argmin(axis=1)


def kmeans_rho(rhos, n_clusters: int, seed=0, ids=None, max_iter: int = 300,
               restarts: int = 1) -> list[Cluster]:
    """1-D k-means with k-means++ seeding.

    Centroids are kept sorted so cluster order follows increasing mean
    autocorrelation. Duplicate centroids are merged, so fewer than
    ``n_clusters`` clusters come back when the data has fewer distinct
    values. With ``restarts > 1`` the lowest-SSE run is kept.
    """
    values = np.asarray(rhos, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot cluster an empty set")
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    ids = list(range(values.size)) if ids is None else list(ids)
    if len(ids) != values.size:
        raise ValueError("ids and rhos differ in length")
    rng = make_rng(seed)

    best = None
    for _ in range(restarts):
        centroids = _plus_plus(values, min(n_clusters, np.unique(values).size), rng)
        labels = _assign(values, centroids)
        for _ in range(max_iter):
            used = np.unique(labels)
            centroids = np.unique(np.array([values[labels == k].mean() for k in used]))
            new = _assign(values, centroids)
            if np.array_equal(new, labels):
                break
            labels = new
        sse = _sse(values, labels, centroids)
        if best is None or sse < best[0]:
            best = (sse, labels, centroids)

    _, labels, centroids = best
    clusters = []
    for k in range(centroids.size):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            continue
        vals = values[idx]
        clusters.append(Cluster([ids[i] for i in idx], vals,
                                float(vals.mean()), float(vals.var())))
    return clusters


def _plus_plus(values, k, rng):
    centroids = [values[rng.integers(values.size)]]
    for _ in range(1, k):
        dist2 = np.min((values[:, None] - np.array(centroids)[None, :]) ** 2, axis=1)
        total = dist2.sum()
        if total == 0:
            break
        centroids.append(values[rng.choice(values.size, p=dist2 / total)])
    return np.sort(np.array(centroids))


def clustering_sse(clusters: list[Cluster]) -> float:
    return float(sum(c.var_rho * len(c.members) for c in clusters))


@dataclass
class CopilotGroup:
    """Users sharing one pilot; ``members`` maps cell index to user id."""

    id: int
    members: dict
    rhos: dict
    pilot_index: int

    @property
    def rho_min(self) -> float:
        return min(self.rhos.values())

    @property
    def rho_max(self) -> float:
        return max(self.rhos.values())

    @property
    def variance(self) -> float:
        return float(np.var(list(self.rhos.values())))


def form_copilot_groups(clusters: list[Cluster], cell_of, C: int) -> list[CopilotGroup]:
    """Rank-match the users of each cell inside every cluster.

    ``cell_of`` maps a user id to its serving cell. Within a cluster the
    users of every cell are sorted by decreasing autocorrelation and the
    ``r``-th users of all cells form one group; cells with fewer members
    simply leave later groups partial.
    """
    groups = []
    for cluster in clusters:
        by_cell = [[] for _ in range(C)]
        for uid, rho in zip(cluster.members, cluster.rhos):
            cell = cell_of(uid)
            if not 0 <= cell < C:
                raise ValueError(f"user {uid!r} has cell {cell} outside 0..{C - 1}")
            by_cell[cell].append((-float(rho), str(uid), uid))
        for lst in by_cell:
            lst.sort()
        depth = max(len(lst) for lst in by_cell)
        for r in range(depth):
            members, rhos = {}, {}
            for cell, lst in enumerate(by_cell):
                if r < len(lst):
                    neg_rho, _, uid = lst[r]
                    members[cell] = uid
                    rhos[cell] = -neg_rho
            gid = len(groups)
            groups.append(CopilotGroup(gid, members, rhos, pilot_index=gid))
    return groups
