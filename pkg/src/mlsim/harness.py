"""Monte Carlo runner, parameter sweeps and CSV writers."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from mlsim.behavior import Driver
from mlsim.mesh import ON_GRID, Engine
from mlsim.fd import flow_at, kernel_params, time_at
from mlsim.metrics import (
    CLASSES,
    METRICS,
    Summary,
    aggregate,
    build_records,
    fmt,
    stats_over_iterations,
    travel_times,
)
from mlsim.policy import MlPolicy
from mlsim.scenario import ScenarioConfig, iteration_rng, sample_arrays
from mlsim.tolling import TollCollector, TollSchedule

log = logging.getLogger(__name__)

SWEEP_AXES = ("cav_mpr", "locav_toll_factor", "hocav_mpr", "policy")
TRAJECTORY_SAMPLE = 10  # every tenth vehicle


@dataclass
class RunResult:
    iteration: int
    seed: int
    policy: MlPolicy
    records: dict
    reports: dict
    tolls: np.ndarray  # (horizons, groups)
    n_steps: int
    n_total: Optional[np.ndarray] = None  # (steps, lanes, cells), state at the start of each step
    n_cav: Optional[np.ndarray] = None
    trajectories: Optional[np.ndarray] = None  # rows (vehicle, step, lane, cell)
    lane_changes: Optional[np.ndarray] = None  # rows (step, vehicle, from, to, forced)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.records):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.records[key]).tobytes())
        h.update(np.ascontiguousarray(self.tolls).tobytes())
        return h.hexdigest()


def run_once(
    config: ScenarioConfig,
    iteration: int = 0,
    traces: bool = False,
    observer: Optional[Callable] = None,
) -> RunResult:
    """Simulate one iteration from ``t_start`` to ``t_end``.

    ``observer(step, engine, posted, paid)`` is called at the end of every
    step, after charges; it must not mutate its arguments.
    """
    geo = config.geometry
    rng = iteration_rng(config.seed, iteration)
    pop = sample_arrays(config, rng)
    engine = Engine(geo, config.fd, config.dt, pop, config.t_start, config.update_scheme)
    driver = Driver(engine, config.policy, config.toll, config.delta_lc, config.locav_toll_factor)
    schedule = TollSchedule(geo.n_groups, config.toll)
    collector = TollCollector(config.toll, geo.cells_per_group)

    n_steps = config.n_steps
    per_horizon = config.toll.steps_per_horizon(config.dt)
    ml, per_group = geo.ml_lane, geo.cells_per_group
    paid = np.zeros(engine.n_vehicles)
    if traces:
        shape = (n_steps, geo.n_lanes, geo.n_cells)
        n_total = np.zeros(shape, np.int16)
        n_cav = np.zeros(shape, np.int16)
        sample = np.arange(0, engine.n_vehicles, TRAJECTORY_SAMPLE)
        traj, changes = [], []

    for s in range(n_steps):
        engine.refresh()
        if s > 0 and s % per_horizon == 0:
            schedule.advance()
        posted = schedule.current
        counts = engine.counts
        schedule.accumulate(
            counts[ml].reshape(geo.n_groups, per_group).sum(axis=1) / geo.cell_length,
            engine.k_cr[ml].reshape(geo.n_groups, per_group).sum(axis=1),
        )
        if traces:
            n_total[s] = counts
            n_cav[s] = engine.n_a
            on = sample[engine.status[sample] == ON_GRID]
            traj.append(np.column_stack([on, np.full(len(on), s), engine.lane[on], engine.cell[on]]))

        engine.accrue()
        driver.decide(posted)
        events = engine.advance(s)

        arrived = np.flatnonzero(
            (engine.lane == ml)
            & (engine.status == ON_GRID)
            & (engine.entry_key == s + 1)
            & (engine.cell % per_group == geo.n_lc_cells)
        )
        for v in arrived:
            g = int(engine.cell[v]) // per_group
            paid[v] += collector.charge(int(v), g, float(posted[g]), float(driver.multiplier[v]))
        if traces and len(events):
            changes.append(np.column_stack([np.full(len(events), s), events]))
        if observer is not None:
            observer(s, engine, posted, paid)

    if collector.suppressed:
        log.debug("iteration %d: %d repeat charges suppressed", iteration, collector.suppressed)

    tt, censored = travel_times(
        engine.arrival,
        engine.entered,
        engine.exited,
        n_steps,
        config.dt_hours,
        engine.cell_time_sum if config.travel_time == "cell_times" else None,
    )
    records = build_records(
        {
            "id": np.arange(engine.n_vehicles),
            "is_cav": engine.is_cav,
            "occupancy": engine.occupancy,
            "vot": engine.vot,
            "depart": engine.depart,
            "start_group": engine.start_g,
            "end_group": engine.end_g,
            "travel_time": tt,
            "toll": paid,
            "multiplier": driver.multiplier,
            "censored": censored,
        }
    )
    result = RunResult(
        iteration=iteration,
        seed=config.seed,
        policy=config.policy,
        records=records,
        reports={c: aggregate(records, c) for c in CLASSES},
        tolls=schedule.as_array(),
        n_steps=n_steps,
    )
    if traces:
        result.n_total, result.n_cav = n_total, n_cav
        result.trajectories = np.vstack(traj) if traj else np.zeros((0, 4), np.int64)
        result.lane_changes = np.vstack(changes) if changes else np.zeros((0, 5), np.int64)
    return result


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    reports: list  # per iteration: {class: GroupReport}

    def values(self, cls: str, metric: str) -> np.ndarray:
        idx = METRICS.index(metric)
        return np.array([list(dataclasses.astuple(r[cls]))[idx] for r in self.reports], dtype=float)

    def summary(self, cls: str, metric: str):
        vals = self.values(cls, metric)
        if len(vals) < 2:
            v = float(vals[0])
            return Summary(v, v, 0.0, v, v)
        return stats_over_iterations(vals)

    def mean(self, cls: str, metric: str) -> float:
        return self.summary(cls, metric).mean


def _reports_only(args) -> dict:
    config, iteration = args
    return run_once(config, iteration).reports


def run_monte_carlo(config: ScenarioConfig, workers: int = 1, iterations: Optional[Sequence[int]] = None) -> MonteCarloResult:
    """Run the configured iterations; the merge is keyed by iteration index."""
    its = list(range(config.n_iterations)) if iterations is None else list(iterations)
    jobs = [(config, i) for i in its]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = dict(zip(its, pool.map(_reports_only, jobs)))
    else:
        out = {i: _reports_only(job) for i, job in zip(its, jobs)}
    return MonteCarloResult(config, [out[i] for i in sorted(out)])


def apply_axis(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "cav_mpr":
        return config.replace(cav_mpr=float(value))
    if axis == "locav_toll_factor":
        return config.replace(locav_toll_factor=float(value))
    if axis == "hocav_mpr":
        return config.replace(hocav_rate=float(value))
    if axis == "policy":
        return config.replace(policy=value)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")


@dataclass
class SweepSpec:
    axis: str
    values: list
    base: ScenarioConfig = field(default_factory=ScenarioConfig)

    def configs(self) -> list:
        return [apply_axis(self.base, self.axis, v) for v in self.values]


def run_sweep(spec: SweepSpec, workers: int = 1) -> list:
    """``(value, MonteCarloResult)`` per axis value."""
    return [(v, run_monte_carlo(cfg, workers)) for v, cfg in zip(spec.values, spec.configs())]


# ---------------------------------------------------------------- CSV output

SUMMARY_STATS = ("mean", "median", "sd", "p2.5", "p97.5")


def report_csv(mc: MonteCarloResult) -> str:
    """Per-iteration rows plus one row per summary statistic, for each class."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "class", "iteration", *METRICS])
    policy = mc.config.policy.value
    for cls in CLASSES:
        for i, rep in enumerate(mc.reports):
            w.writerow([policy, cls, i, *(fmt(x) for x in dataclasses.astuple(rep[cls]))])
        sums = [mc.summary(cls, m) for m in METRICS]
        for stat, attr in zip(SUMMARY_STATS, ("mean", "median", "sd", "lo", "hi")):
            w.writerow([policy, cls, stat, *(fmt(getattr(s, attr)) for s in sums)])
    return buf.getvalue()


def sweep_csv(axis: str, results: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "policy", "class", "metric", "mean", "sd", "p2.5", "p97.5"])
    for value, mc in results:
        for cls in CLASSES:
            for m in METRICS:
                s = mc.summary(cls, m)
                w.writerow([axis, value, mc.config.policy.value, cls, m, fmt(s.mean), fmt(s.sd), fmt(s.lo), fmt(s.hi)])
    return buf.getvalue()


def write_traces(result: RunResult, config: ScenarioConfig, out: Path) -> None:
    """Density, trajectory, toll and lane-change CSVs of one traced run."""
    out.mkdir(parents=True, exist_ok=True)
    p = kernel_params(config.fd)
    length = config.geometry.cell_length
    with open(out / "density.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lane", "cell", "n", "n_cav", "k", "q", "v"])
        steps, lanes, cells = result.n_total.shape
        for s in range(steps):
            for l in range(lanes):
                for i in range(cells):
                    n = int(result.n_total[s, l, i])
                    a = int(result.n_cav[s, l, i])
                    k = n / length
                    q = flow_at(float(n - a), float(a), k, p) if n else 0.0
                    v = length / time_at(float(n - a), float(a), length, p)
                    w.writerow([s, l, i, n, a, repr(k), repr(q), repr(v)])
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle", "step", "lane", "cell"])
        w.writerows(result.trajectories.tolist())
    with open(out / "tolls.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "group", "toll_per_cell"])
        for h, row in enumerate(result.tolls):
            for g, pi in enumerate(row):
                w.writerow([h, g, repr(float(pi))])
    with open(out / "lane_changes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "vehicle", "from_lane", "to_lane", "forced"])
        w.writerows(result.lane_changes.tolist())
