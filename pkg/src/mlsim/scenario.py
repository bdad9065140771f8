"""Scenario configuration and seeded generation of the vehicle population."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from mlsim.fd import FdParams
from mlsim.policy import MlPolicy
from mlsim.tolling import TollParams

PMF_TOL = 1e-9


class ConfigError(ValueError):
    """Raised for unparsable documents and invariant violations."""


@dataclass(frozen=True)
class Geometry:
    n_lanes: int = 3
    highway_length: float = 10.0  # km
    cell_length: float = 10.0 / 75  # km
    n_cells: int = 75
    n_groups: int = 5
    n_lc_cells: int = 3

    @property
    def cells_per_group(self) -> int:
        return self.n_cells // self.n_groups

    @property
    def ml_lane(self) -> int:
        return self.n_lanes - 1

    def validate(self) -> None:
        if self.n_lanes < 2:
            raise ConfigError("n_lanes must be ≥ 2")
        if self.n_cells < 1 or self.n_groups < 1:
            raise ConfigError("n_cells and n_groups must be ≥ 1")
        if self.cell_length <= 0:
            raise ConfigError("cell_length must be > 0")
        if abs(self.n_cells * self.cell_length - self.highway_length) > 1e-6:
            raise ConfigError("n_cells × cell_length must equal highway_length (±1e-6 km)")
        if self.n_cells % self.n_groups:
            raise ConfigError("n_cells must be divisible by n_groups")
        if self.n_lc_cells < 1:
            raise ConfigError("n_lc_cells must be ≥ 1")
        if self.cells_per_group <= self.n_lc_cells:
            raise ConfigError("group size n_cells/n_groups must exceed n_lc_cells")


@dataclass(frozen=True)
class DemandParams:
    cav_mpr: float = 0.4
    occupancy_pmf: tuple = ((1, 0.8), (2, 0.1), (3, 0.1))
    vot_mean: float = 20.0  # USD/h per occupant
    vot_sd: float = 10.0
    vot_lo: float = 0.5
    vot_hi: float = 300.0
    start_group_pmf: tuple = (0.6, 0.1, 0.1, 0.1, 0.1)
    end_group_pmf: tuple = (0.05, 0.05, 0.05, 0.05, 0.8)
    departure_dist: tuple = (7.0, 7.5, 8.5, 9.0)  # trapezoid a, b, c, d (clock hours)
    # CAV share among high-occupancy vehicles; None keeps cav_mpr for them
    hocav_rate: Optional[float] = None

    def validate(self, n_groups: int) -> None:
        _check_prob("cav_mpr", self.cav_mpr)
        if self.hocav_rate is not None:
            _check_prob("hocav_rate", self.hocav_rate)
        occ = dict(self.occupancy_pmf)
        if not set(occ) <= {1, 2, 3}:
            raise ConfigError("occupancy_pmf: support must be within {1, 2, 3}")
        _check_pmf("occupancy_pmf", list(occ.values()))
        for name in ("start_group_pmf", "end_group_pmf"):
            pmf = getattr(self, name)
            if len(pmf) != n_groups:
                raise ConfigError(f"{name}: expected {n_groups} entries, got {len(pmf)}")
            _check_pmf(name, pmf)
        if not self.vot_lo < self.vot_mean < self.vot_hi:
            raise ConfigError("vot bounds: require vot_lo < vot_mean < vot_hi")
        if self.vot_sd < 0:
            raise ConfigError("vot_sd must be ≥ 0")
        a, b, c, d = self.departure_dist
        if not a <= b <= c <= d or a == d:
            raise ConfigError("departure_dist: require a ≤ b ≤ c ≤ d with a < d")
        # the last start group must be able to reach some end group
        last_start = max(i for i, p in enumerate(self.start_group_pmf) if p > 0)
        if sum(self.end_group_pmf[last_start:]) <= 0:
            raise ConfigError("end_group_pmf: no end group reachable from every start group")


@dataclass(frozen=True)
class ScenarioConfig:
    fd: FdParams = field(default_factory=FdParams)
    geometry: Geometry = field(default_factory=Geometry)
    demand: DemandParams = field(default_factory=DemandParams)
    toll: TollParams = field(default_factory=TollParams)
    policy: MlPolicy = MlPolicy.ST1
    n_vehicles: int = 6000
    n_iterations: int = 100
    dt: float = 6.0  # s
    t_start: float = 7.0  # clock hours
    t_end: float = 10.0
    seed: int = 20230101
    locav_toll_factor: float = 1.0
    delta_lc: float = 0.1  # USD, lane-change threshold
    update_scheme: str = "downstream_first"
    # "cell_times": sum of the cached cell travel time over every occupied step
    # "occupancy": steps spent in cells times dt
    travel_time: str = "cell_times"

    def __getattr__(self, name):
        # flat read access to section fields, e.g. ``config.cav_mpr``
        section = _ROUTE.get(name)
        if section is None:
            raise AttributeError(name)
        return getattr(getattr(self, section), name)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) * 3600.0 / self.dt))

    @property
    def dt_hours(self) -> float:
        return self.dt / 3600.0

    def validate(self) -> "ScenarioConfig":
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if not self.t_start < self.t_end:
            raise ConfigError("t_start must be < t_end")
        if self.n_vehicles < 0:
            raise ConfigError("n_vehicles must be ≥ 0")
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be ≥ 1")
        if not 0 <= self.locav_toll_factor <= 1:
            raise ConfigError("locav_toll_factor must be in [0, 1]")
        if self.update_scheme not in ("downstream_first", "simultaneous"):
            raise ConfigError("update_scheme must be 'downstream_first' or 'simultaneous'")
        if self.travel_time not in ("cell_times", "occupancy"):
            raise ConfigError("travel_time must be 'cell_times' or 'occupancy'")
        if self.delta_lc < 0:
            raise ConfigError("delta_lc must be ≥ 0")
        try:
            self.fd.validate()
            self.toll.validate(self.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.geometry.validate()
        self.demand.validate(self.geometry.n_groups)
        return self

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with top-level or section fields overridden (``cav_mpr=0.1`` works)."""
        return _apply(self, changes).validate()


def _check_prob(name: str, p: float) -> None:
    if not 0 <= p <= 1:
        raise ConfigError(f"{name} must be in [0, 1]")


def _check_pmf(name: str, pmf: Sequence[float]) -> None:
    if any(p < 0 or p > 1 for p in pmf):
        raise ConfigError(f"{name}: probabilities must be in [0, 1]")
    if abs(sum(pmf) - 1.0) > PMF_TOL:
        raise ConfigError(f"{name}: probabilities must sum to 1")


# ---------------------------------------------------------------- loading

_SECTIONS = {"fd": FdParams, "geometry": Geometry, "demand": DemandParams, "toll": TollParams}
_TOP = {f.name for f in dataclasses.fields(ScenarioConfig)} - set(_SECTIONS)
_ROUTE = {f.name: sec for sec, cls in _SECTIONS.items() for f in dataclasses.fields(cls)}


def _coerce(section: Optional[str], key: str, value: Any) -> Any:
    if key == "policy":
        return value if isinstance(value, MlPolicy) else MlPolicy.parse(str(value))
    if key == "occupancy_pmf":
        items = value.items() if isinstance(value, dict) else value
        return tuple((int(k), float(p)) for k, p in items)
    if key in ("start_group_pmf", "end_group_pmf", "departure_dist"):
        if isinstance(value, dict):
            value = [value[k] for k in sorted(value)]
        return tuple(float(x) for x in value)
    if key in ("billing", "update_scheme", "travel_time"):
        return str(value)
    if key == "hocav_rate":
        return None if value is None else float(value)
    if key in ("n_vehicles", "n_iterations", "seed", "n_lanes", "n_cells", "n_groups", "n_lc_cells"):
        if isinstance(value, bool) or float(value) != int(value):
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    return float(value)


def _apply(cfg: ScenarioConfig, changes: dict) -> ScenarioConfig:
    top: dict = {}
    nested: dict = {sec: {} for sec in _SECTIONS}
    for key, value in changes.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            for sub, v in value.items():
                if _ROUTE.get(sub) != key:
                    raise ConfigError(f"unknown key {key}.{sub}")
                nested[key][sub] = v
        elif key in _TOP:
            top[key] = value
        elif key in _ROUTE:
            nested[_ROUTE[key]][key] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        out = {k: _coerce(None, k, v) for k, v in top.items()}
        for sec, vals in nested.items():
            if vals:
                coerced = {k: _coerce(sec, k, v) for k, v in vals.items()}
                out[sec] = dataclasses.replace(getattr(cfg, sec), **coerced)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if "geometry" in out and "cell_length" not in nested["geometry"]:
        g = out["geometry"]
        if {"n_cells", "highway_length"} & set(nested["geometry"]):
            out["geometry"] = dataclasses.replace(g, cell_length=g.highway_length / g.n_cells)
    return dataclasses.replace(cfg, **out)


def load_config(text: str = "") -> ScenarioConfig:
    """Parse a YAML document; omitted keys keep their defaults."""
    try:
        doc = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse failure: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("parse failure: top level must be a mapping")
    return _apply(ScenarioConfig(), doc).validate()


def load_config_file(path) -> ScenarioConfig:
    return load_config(Path(path).read_text())


def dump_config(cfg: ScenarioConfig) -> str:
    doc: dict = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            sec = dataclasses.asdict(v)
            if "occupancy_pmf" in sec:
                sec["occupancy_pmf"] = {int(k): p for k, p in sec["occupancy_pmf"]}
            doc[f.name] = {k: list(x) if isinstance(x, tuple) else x for k, x in sec.items()}
        elif isinstance(v, MlPolicy):
            doc[f.name] = v.value
        else:
            doc[f.name] = v
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------- population

@dataclass
class Vehicle:
    id: int
    is_cav: bool
    occupancy: int
    vot: float  # USD/h, already multiplied by occupancy
    depart: float  # clock hours
    start_group: int
    end_group: int
    lane: Optional[int] = None
    cell: Optional[int] = None
    toll_paid: float = 0.0
    cell_entry_step: Optional[int] = None
    travel_time: float = 0.0
    entered_step: Optional[int] = None
    exited_step: Optional[int] = None

    @property
    def is_hov(self) -> bool:
        return self.occupancy > 1


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent generator for one Monte Carlo iteration."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(iteration)]))


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def sample_truncated_normal(rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float, size=None):
    """Normal(mean, sd) conditioned on [lo, hi], by rejection."""
    if not lo < hi:
        raise ValueError("require lo < hi")
    n = 1 if size is None else int(size)
    if sd == 0:
        out = np.full(n, float(mean))
    else:
        accept = _norm_cdf((hi - mean) / sd) - _norm_cdf((lo - mean) / sd)
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            batch = rng.normal(mean, sd, size=int(math.ceil(need / max(accept, 1e-6) * 1.1)) + 8)
            ok = batch[(batch >= lo) & (batch <= hi)][:need]
            out[filled:filled + len(ok)] = ok
            filled += len(ok)
    return float(out[0]) if size is None else out


def trapezoidal_ppf(u, a: float, b: float, c: float, d: float):
    """Inverse CDF of the trapezoid rising on [a,b], flat on [b,c], falling on [c,d]."""
    u = np.asarray(u, dtype=float)
    h = 2.0 / ((d - a) + (c - b))
    fb = h * (b - a) / 2.0
    fc = fb + h * (c - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        rise = a + np.sqrt(np.maximum(2.0 * (b - a) * u / h, 0.0))
        flat = b + (u - fb) / h
        fall = d - np.sqrt(np.maximum(2.0 * (d - c) * (1.0 - u) / h, 0.0))
    x = np.where(u < fb, rise, np.where(u <= fc, flat, fall))
    return np.clip(x, a, d)


def sample_trapezoidal(rng: np.random.Generator, a: float, b: float, c: float, d: float, size=None):
    if not a <= b <= c <= d:
        raise ValueError("require a <= b <= c <= d")
    u = rng.random(size)
    x = trapezoidal_ppf(u, a, b, c, d)
    return float(x) if size is None else x


def _categorical(u: np.ndarray, pmf: Sequence[float]) -> np.ndarray:
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right")


def sample_arrays(config: ScenarioConfig, rng: np.random.Generator) -> dict:
    """Column-wise population, sorted by departure.

    Every attribute draws from its own child stream, so changing one
    distribution (CAV share, HOV automation rate, ...) leaves the other
    attributes of each vehicle untouched across sweep points.
    """
    dem = config.demand
    n = config.n_vehicles
    s_cav, s_occ, s_vot, s_start, s_end, s_dep = rng.spawn(6)

    u_cav = s_cav.random(n)
    occ_values, occ_p = zip(*dem.occupancy_pmf)
    occupancy = np.asarray(occ_values)[_categorical(s_occ.random(n), occ_p)]
    hov = occupancy > 1
    threshold = np.full(n, dem.cav_mpr)
    if dem.hocav_rate is not None:
        threshold[hov] = dem.hocav_rate
    is_cav = u_cav < threshold

    vot = sample_truncated_normal(s_vot, dem.vot_mean, dem.vot_sd, dem.vot_lo, dem.vot_hi, size=n) * occupancy

    start = _categorical(s_start.random(n), dem.start_group_pmf)
    end = _categorical(s_end.random(n), dem.end_group_pmf)
    bad = end < start
    while bad.any():
        end[bad] = _categorical(s_end.random(int(bad.sum())), dem.end_group_pmf)
        bad = end < start

    depart = trapezoidal_ppf(s_dep.random(n), *dem.departure_dist)

    order = np.argsort(depart, kind="stable")
    return {
        "is_cav": is_cav[order],
        "occupancy": occupancy[order].astype(np.int64),
        "vot": vot[order],
        "depart": depart[order],
        "start_group": start[order].astype(np.int64),
        "end_group": end[order].astype(np.int64),
    }


def sample_population(config: ScenarioConfig, rng: np.random.Generator) -> list[Vehicle]:
    cols = sample_arrays(config, rng)
    return vehicles_from_arrays(cols)


def vehicles_from_arrays(cols: dict) -> list[Vehicle]:
    return [
        Vehicle(
            id=i,
            is_cav=bool(cav),
            occupancy=int(occ),
            vot=float(vot),
            depart=float(dep),
            start_group=int(s),
            end_group=int(e),
        )
        for i, (cav, occ, vot, dep, s, e) in enumerate(
            zip(cols["is_cav"], cols["occupancy"], cols["vot"], cols["depart"], cols["start_group"], cols["end_group"])
        )
    ]


def arrays_from_vehicles(vehicles: Sequence[Vehicle]) -> dict:
    return {
        "is_cav": np.array([v.is_cav for v in vehicles], dtype=bool),
        "occupancy": np.array([v.occupancy for v in vehicles], dtype=np.int64),
        "vot": np.array([v.vot for v in vehicles], dtype=float),
        "depart": np.array([v.depart for v in vehicles], dtype=float),
        "start_group": np.array([v.start_group for v in vehicles], dtype=np.int64),
        "end_group": np.array([v.end_group for v in vehicles], dtype=np.int64),
    }
