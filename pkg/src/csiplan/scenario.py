"""
Random multi-cell deployments and their configuration file.

A scenario holds the base-station layout, user positions and mobility,
all per-link gains and autocorrelations, the copilot groups, and the
per-group Markov mobility model with link statistics at every location.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (MIN_DISTANCE, SPEED_OF_LIGHT, SystemConstants, autocorrelation,
                      doppler_shift, make_rng, pathloss_beta)
from .grouping import (CopilotGroup, cluster_count, coherence_time, form_copilot_groups,
                       kmeans_rho)
from .rate import RateContext
from .slow_policy import MobilityModel

MAX_CELLS = 7


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class ScenarioConfig:
    cells: int = 7
    radius_m: float = 1500.0
    users_per_cell: int = 8
    antennas: int = 100
    speed_min_kmh: float = 4.0
    speed_max_kmh: float = 80.0
    T_s: int = 200
    D_c: float = 1e-3
    f_c: float = 2e9
    pathloss_exponent: float = 3.5
    P_p: float = 1e11
    P_u: float = 1e11
    bandwidth: float = 200e6
    min_distance_m: float = MIN_DISTANCE
    max_clusters: int = 2
    locations: int = 5
    U_max: int | None = None
    H: int = 4
    tau: int | None = None
    d_max: int = 2
    alpha: float = 0.9
    epochs: int = 30
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.cells <= MAX_CELLS:
            raise ConfigError(f"cells must lie in 1..{MAX_CELLS}")
        for name in ("radius_m", "users_per_cell", "T_s", "D_c", "f_c",
                     "pathloss_exponent", "P_p", "P_u", "bandwidth", "max_clusters",
                     "locations", "H", "epochs", "trials"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.antennas < 2:
            raise ConfigError("antennas must be >= 2")
        if not 0 <= self.speed_min_kmh <= self.speed_max_kmh:
            raise ConfigError("need 0 <= speed_min_kmh <= speed_max_kmh")
        if not 0 <= self.min_distance_m < self.radius_m:
            raise ConfigError("min_distance_m must be below the cell radius")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.d_max < 0:
            raise ConfigError("d_max must be non-negative")
        for name in ("U_max", "tau"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")

    def constants(self) -> SystemConstants:
        return SystemConstants(
            M=self.antennas, C=self.cells, K=self.users_per_cell, T_s=self.T_s,
            D_c=self.D_c, f_c=self.f_c, P_p=self.P_p, P_u=self.P_u,
            pathloss_exponent=self.pathloss_exponent, bandwidth=self.bandwidth)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _field_types():
    return {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _parse_value(name, raw, kind):
    raw = raw.strip()
    optional = "None" in kind
    if optional and raw.lower() in ("", "none", "auto"):
        return None
    try:
        if kind.startswith("int"):
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def load_config(path, **overrides) -> ScenarioConfig:
    """Read an INI file with a single ``[scenario]`` section.

    Unknown sections or keys are errors.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    extra = set(parser.sections()) - {"scenario"}
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    types = _field_types()
    values = {}
    if parser.has_section("scenario"):
        for key, raw in parser.items("scenario"):
            if key not in types:
                raise ConfigError(f"{path}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, str(types[key]))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**values)


def dump_config(config: ScenarioConfig) -> str:
    lines = ["[scenario]"]
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {'auto' if v is None else v}")
    return "\n".join(lines) + "\n"


def hex_layout(cells: int, radius: float) -> np.ndarray:
    """Centre BS plus a ring of neighbours at ``sqrt(3) * radius``."""
    ring = [(math.sqrt(3) * radius * math.cos(math.pi / 6 + k * math.pi / 3),
             math.sqrt(3) * radius * math.sin(math.pi / 6 + k * math.pi / 3))
            for k in range(6)]
    return np.array([(0.0, 0.0)] + ring)[:cells]


def in_hexagon(offset, radius) -> np.ndarray:
    x, y = np.abs(offset[..., 0]), np.abs(offset[..., 1])
    return (y <= math.sqrt(3) / 2 * radius) & (math.sqrt(3) * x + y <= math.sqrt(3) * radius)


def sample_in_cell(rng, center, radius, min_distance, n) -> np.ndarray:
    out = np.empty((0, 2))
    while len(out) < n:
        cand = rng.uniform(-radius, radius, size=(2 * n + 4, 2))
        ok = in_hexagon(cand, radius) & (np.hypot(cand[:, 0], cand[:, 1]) >= min_distance)
        out = np.vstack([out, cand[ok]])
    return np.asarray(center) + out[:n]


def link_statistics(positions, speeds, directions, bs, cfg: ScenarioConfig):
    """Gains and autocorrelations of users toward every BS.

    ``positions`` is ``(..., 2)``; results carry a leading BS axis.
    """
    offset = positions[None] - bs.reshape((len(bs),) + (1,) * (positions.ndim - 1) + (2,))
    dist = np.hypot(offset[..., 0], offset[..., 1])
    beta = pathloss_beta(dist, cfg.pathloss_exponent, cfg.min_distance_m)
    incident = np.arctan2(offset[..., 1], offset[..., 0])
    theta = np.mod(directions[None] - incident, 2 * math.pi)
    doppler = doppler_shift(np.broadcast_to(speeds, theta.shape), cfg.f_c, theta)
    rho = autocorrelation(doppler, cfg.D_c)
    return np.asarray(beta), np.asarray(rho)


@dataclass
class Scenario:
    config: ScenarioConfig
    bs: np.ndarray
    positions: np.ndarray          # [c, k, 2]
    speeds: np.ndarray             # [c, k] m/s
    directions: np.ndarray         # [c, k] rad
    beta: np.ndarray               # [j, k, c]
    rho: np.ndarray                # [j, k, c]
    groups: list
    mobility: MobilityModel
    n_clusters: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def N_G(self) -> int:
        return len(self.groups)

    @property
    def constants(self) -> SystemConstants:
        return self.config.constants()

    @property
    def tau(self) -> int:
        return self.N_G // 2 if self.config.tau is None else min(self.config.tau, self.N_G)

    @property
    def U_max(self) -> int:
        return self.N_G if self.config.U_max is None else min(self.config.U_max, self.N_G)

    def group_links(self):
        """``(beta, rho)`` in ``[j, g, c]`` layout at the actual positions."""
        C = self.config.cells
        beta = np.zeros((C, self.N_G, C))
        rho = np.ones((C, self.N_G, C))
        for grp in self.groups:
            for c, k in grp.members.items():
                beta[:, grp.id, c] = self.beta[:, k, c]
                rho[:, grp.id, c] = self.rho[:, k, c]
        return beta, rho

    def context(self, M: int | None = None, tau: int | None = None) -> RateContext:
        constants = self.constants if M is None else self.constants.replace(M=M)
        beta, rho = self.group_links()
        return RateContext(constants, beta, rho, self.tau if tau is None else tau)

    def to_dict(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "n_clusters": self.n_clusters,
            "bs": self.bs.tolist(),
            "positions": self.positions.tolist(),
            "speeds": self.speeds.tolist(),
            "directions": self.directions.tolist(),
            "beta": self.beta.tolist(),
            "rho": self.rho.tolist(),
            "groups": [{"id": g.id, "pilot_index": g.pilot_index,
                        "members": {str(c): k for c, k in sorted(g.members.items())},
                        "rhos": {str(c): r for c, r in sorted(g.rhos.items())}}
                       for g in self.groups],
            "mobility": {"P": self.mobility.P.tolist(),
                         "beta_table": self.mobility.beta_table.tolist(),
                         "rho_table": self.mobility.rho_table.tolist()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc) -> "Scenario":
        groups = [CopilotGroup(g["id"], {int(c): k for c, k in g["members"].items()},
                               {int(c): r for c, r in g["rhos"].items()}, g["pilot_index"])
                  for g in doc["groups"]]
        mob = doc["mobility"]
        return cls(ScenarioConfig(**doc["config"]), np.array(doc["bs"]),
                   np.array(doc["positions"]), np.array(doc["speeds"]),
                   np.array(doc["directions"]), np.array(doc["beta"]), np.array(doc["rho"]),
                   groups, MobilityModel(mob["P"], mob["beta_table"], mob["rho_table"]),
                   doc["n_clusters"], doc.get("meta", {}))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_scenario(config: ScenarioConfig, seed=None) -> Scenario:
    """Draw a deployment; a pure function of ``(config, seed)``."""
    seed = config.seed if seed is None else seed
    rng = make_rng(seed)
    C, K, R = config.cells, config.users_per_cell, config.radius_m
    bs = hex_layout(C, R)
    positions = np.stack([sample_in_cell(rng, bs[c], R, config.min_distance_m, K)
                          for c in range(C)])
    speeds = rng.uniform(config.speed_min_kmh, config.speed_max_kmh, (C, K)) / 3.6
    directions = rng.uniform(0.0, 2 * math.pi, (C, K))
    beta, rho = link_statistics(positions, speeds, directions, bs, config)
    beta = beta.transpose(0, 2, 1)       # [j, c, k] -> [j, k, c]
    rho = rho.transpose(0, 2, 1)

    serving = np.array([[rho[c, k, c] for k in range(K)] for c in range(C)])
    n_clusters = _cluster_target(speeds, config)
    ids = [(c, k) for c in range(C) for k in range(K)]
    clusters = kmeans_rho(serving.ravel(), n_clusters, rng, ids=ids, restarts=4)
    groups = [CopilotGroup(g.id, {c: k for c, (_, k) in g.members.items()}, g.rhos,
                           g.pilot_index)
              for g in form_copilot_groups(clusters, lambda uid: uid[0], C)]

    mobility = _mobility_model(rng, groups, positions, speeds, directions, bs, config)
    return Scenario(config, bs, positions, speeds, directions, beta, rho, groups,
                    mobility, n_clusters, {"seed": int(seed)})


def _cluster_target(speeds, config):
    # Clusters follow the slowest user's coherence time, capped for tractability.
    slowest = float(np.min(speeds)) * config.f_c / SPEED_OF_LIGHT
    D_max = coherence_time(slowest)
    if not math.isfinite(D_max):
        return config.max_clusters
    return min(cluster_count(max(D_max, config.D_c), config.D_c), config.max_clusters)


def _mobility_model(rng, groups, positions, speeds, directions, bs, config):
    C, L, N_G = config.cells, config.locations, len(groups)
    beta_table = np.zeros((N_G, L, C, C))
    rho_table = np.ones((N_G, L, C, C))
    for grp in groups:
        for c, k in sorted(grp.members.items()):
            where = np.vstack([positions[c, k][None],
                               sample_in_cell(rng, bs[c], config.radius_m,
                                              config.min_distance_m, L - 1)])
            b, r = link_statistics(where, speeds[c, k], directions[c, k], bs, config)
            beta_table[grp.id, :, :, c] = b.T
            rho_table[grp.id, :, :, c] = r.T
    P = rng.dirichlet(np.ones(L), size=(N_G, L))
    P /= P.sum(axis=2, keepdims=True)
    return MobilityModel(P, beta_table, rho_table)
