"""Per-vehicle accounting, class reports and cross-iteration statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

CLASSES = ("ALL", "CAV", "HOV", "HDV")

# report columns, in display order
METRICS = (
    "Total toll ($)",
    "Total tolled car",
    "Total tollable car",
    "Avg toll per tolled car ($)",
    "Tolled %",
    "Total vehicle travel time (h)",
    "Avg travel time (h)",
    "Total drivers' cost ($)",
    "Total social cost ($)",
)
UNDEFINED = "/"


@dataclass
class VehicleRecord:
    id: int
    is_cav: bool
    occupancy: int
    vot: float
    depart: float
    travel_time: float  # h, including ramp wait
    toll: float
    drivers_cost: float
    tolled: bool
    tollable: bool
    censored: bool

    @property
    def is_hov(self) -> bool:
        return self.occupancy > 1


def travel_times(arrival, entered, exited, n_steps: int, dt_h: float, cell_time_sum=None):
    """Trip durations (h) and the censoring flag.

    A vehicle joining its ramp queue during step ``a`` and entering at the
    boundary ``e`` waited ``e - 1 - a`` steps. Time on the road is either the
    supplied per-vehicle sum of cell travel times or, when ``cell_time_sum``
    is None, the occupied steps up to the exit boundary ``x`` times ``dt``.
    Vehicles still queued or on the road when the horizon closes are stamped
    with the last boundary.
    """
    arrival = np.asarray(arrival)
    entered = np.asarray(entered)
    exited = np.asarray(exited)
    censored = exited < 0
    never = entered < 0
    end = np.where(censored, n_steps, exited)
    wait = np.where(never, n_steps - arrival, entered - 1 - arrival)
    if cell_time_sum is None:
        road = np.where(never, 0, end - entered) * dt_h
    else:
        road = np.where(never, 0.0, np.asarray(cell_time_sum, dtype=float))
    return np.maximum(wait, 0) * dt_h + road, censored


def build_records(columns: dict) -> dict:
    """Complete the columnar record set: drivers' cost, tolled and tollable flags.

    Expects ``id, is_cav, occupancy, vot, depart, travel_time, toll, multiplier,
    start_group, end_group, censored``.
    """
    out = {k: np.asarray(v) for k, v in columns.items()}
    out["drivers_cost"] = out["vot"] * out["travel_time"] + out["toll"]
    out["tolled"] = out["toll"] > 0
    out["tollable"] = (out["multiplier"] > 0) & (out["end_group"] - out["start_group"] >= 2)
    return out


def finalize_vehicles(records: dict) -> list[VehicleRecord]:
    names = [f.name for f in fields(VehicleRecord)]
    cast = {f.name: f.type for f in fields(VehicleRecord)}
    rows = []
    for j in range(len(records["id"])):
        kw = {}
        for n in names:
            v = records[n][j]
            kw[n] = bool(v) if cast[n] == "bool" else int(v) if cast[n] == "int" else float(v)
        rows.append(VehicleRecord(**kw))
    return rows


def class_mask(records: dict, cls: str) -> np.ndarray:
    cav = np.asarray(records["is_cav"], dtype=bool)
    if cls == "ALL":
        return np.ones(len(cav), dtype=bool)
    if cls == "CAV":
        return cav
    if cls == "HOV":
        return np.asarray(records["occupancy"]) > 1
    if cls == "HDV":
        return ~cav
    raise ValueError(f"unknown class {cls!r}; expected one of {CLASSES}")


@dataclass
class GroupReport:
    total_toll: float = 0.0
    tolled_count: int = 0
    tollable_count: int = 0
    avg_toll_per_tolled: float = math.nan
    tolled_pct: float = math.nan
    total_vehicle_travel_time: float = 0.0
    avg_travel_time: float = math.nan
    total_drivers_cost: float = 0.0
    total_social_cost: float = 0.0

    def row(self) -> dict:
        return dict(zip(METRICS, asdict(self).values()))


def aggregate(records: dict, cls: str = "ALL") -> GroupReport:
    sel = class_mask(records, cls)
    toll = np.asarray(records["toll"], dtype=float)[sel]
    tt = np.asarray(records["travel_time"], dtype=float)[sel]
    vot = np.asarray(records["vot"], dtype=float)[sel]
    tolled = np.asarray(records["tolled"], dtype=bool)[sel]
    tollable = np.asarray(records["tollable"], dtype=bool)[sel]
    rep = GroupReport()
    rep.total_toll = float(toll.sum())
    rep.tolled_count = int(tolled.sum())
    rep.tollable_count = int(tollable.sum())
    if rep.tolled_count:
        rep.avg_toll_per_tolled = float(toll[tolled].sum() / rep.tolled_count)
    if rep.tollable_count:
        rep.tolled_pct = 100.0 * rep.tolled_count / rep.tollable_count
    rep.total_vehicle_travel_time = float(tt.sum())
    if len(tt):
        rep.avg_travel_time = rep.total_vehicle_travel_time / len(tt)
    social = vot * tt
    rep.total_social_cost = float(social.sum())
    rep.total_drivers_cost = float((social + toll).sum())
    return rep


def lane_diagnostics(n_total: np.ndarray, n_cav: np.ndarray, cell_times: np.ndarray, cell_length: float) -> dict:
    """Per step and lane: CAV share (NaN when empty), mean density, summed cell time.

    Inputs have shape ``(steps, lanes, cells)``.
    """
    n_total = np.asarray(n_total, dtype=float)
    lane_n = n_total.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(lane_n > 0, np.asarray(n_cav, dtype=float).sum(axis=2) / lane_n, np.nan)
    return {
        "cav_share": share,
        "mean_density": n_total.mean(axis=2) / cell_length,
        "instant_time": np.asarray(cell_times, dtype=float).sum(axis=2),
    }


@dataclass(frozen=True)
class Summary:
    mean: float
    median: float
    sd: float
    lo: float  # 2.5th percentile
    hi: float  # 97.5th percentile


def stats_over_iterations(values) -> Summary:
    """Mean, median, sample sd and the 2.5/97.5 percentile interval.

    Undefined (NaN) iteration values are dropped; if none remain the summary
    is all NaN.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 iterations")
    x = x[~np.isnan(x)]
    if x.size == 0:
        return Summary(*(math.nan,) * 5)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    lo, hi = np.percentile(x, [2.5, 97.5])
    return Summary(float(np.mean(x)), float(np.median(x)), sd, float(lo), float(hi))


def fmt(value: float) -> str:
    """Report cell text: ``/`` for undefined, otherwise a round-trippable number."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return UNDEFINED
    return repr(float(value)) if isinstance(value, float) else str(value)
