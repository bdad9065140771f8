"""Lane eligibility, generalized cost and lane-change intents.

Drivers judge the group after the one they are in. A lane's generalized
cost for that group is the driver's value of time times the summed current
cell travel times, plus the toll on the managed lane. Moves go one lane per
step; the cost of a faster lane also counts the lanes beyond it, so a driver
in lane 0 heads for the middle lane when the managed lane is the attraction.
The managed lane can only be entered or left inside a group's lane-change
window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from mlsim.mesh import ON_GRID, Engine
from mlsim.policy import Access, MlPolicy
from mlsim.scenario import Geometry, Vehicle
from mlsim.tolling import TollParams, toll_multiplier

STAY, UP, DOWN = 0, 1, -1


@dataclass(frozen=True)
class Intent:
    move: int  # +1 faster lane, -1 slower lane, 0 stay
    forced: bool = False


def class_admitted(vehicle: Vehicle, policy: MlPolicy) -> bool:
    return policy.access(vehicle.is_cav, vehicle.occupancy) is not Access.BARRED


def eligibility(vehicle: Vehicle, group: int, policy: MlPolicy) -> bool:
    """Whether the vehicle may ride the managed lane through ``group``."""
    return vehicle.start_group < group < vehicle.end_group and class_admitted(vehicle, policy)


@njit(cache=True)
def _lane_ok(l, a, ml, n_groups, start, end, admitted):
    if l == 0:
        return True
    if l == ml:
        return admitted and start < a and a < end
    # middle lanes: any trip that is not a one-group hop, until its exit group
    return start < end and (a <= end or end == n_groups - 1)


def lane_eligible(vehicle: Vehicle, group: int, lane: int, policy: MlPolicy, geometry: Geometry = Geometry()) -> bool:
    if not 0 <= lane < geometry.n_lanes:
        raise IndexError(f"lane {lane} outside [0, {geometry.n_lanes})")
    return bool(
        _lane_ok(lane, group, geometry.ml_lane, geometry.n_groups, vehicle.start_group, vehicle.end_group,
                 class_admitted(vehicle, policy))
    )


def perceived_toll(posted: float, multiplier: float, toll: TollParams, cells_per_group: int) -> float:
    return posted * multiplier * (cells_per_group if toll.billing == "per_cell" else 1)


def generalized_cost(
    group: int,
    lane: int,
    vehicle: Vehicle,
    cell_times: np.ndarray,
    posted: np.ndarray,
    policy: MlPolicy,
    geometry: Geometry = Geometry(),
    toll: TollParams = TollParams(),
    locav_toll_factor: float = 1.0,
) -> float:
    """Cost (USD) of riding ``lane`` through ``group`` at current cell times.

    ``cell_times`` has shape ``(lanes, cells)`` in hours; ``posted`` holds the
    managed-lane toll level per group. A group index past the last one costs 0.
    """
    if group >= geometry.n_groups:
        return 0.0
    cells = slice(group * geometry.cells_per_group, (group + 1) * geometry.cells_per_group)
    cost = vehicle.vot * float(np.sum(cell_times[lane, cells]))
    if lane == geometry.ml_lane:
        mult = toll_multiplier(vehicle.is_cav, vehicle.occupancy, policy, locav_toll_factor)
        cost += perceived_toll(float(posted[group]), mult, toll, geometry.cells_per_group)
    return cost


@njit(cache=True)
def _group_times(d, per_group, n_groups):
    lanes = d.shape[0]
    out = np.zeros((n_groups + 1, lanes))
    for l in range(lanes):
        for g in range(n_groups):
            acc = 0.0
            for i in range(g * per_group, (g + 1) * per_group):
                acc += d[l, i]
            out[g, l] = acc
    return out


@njit(cache=True)
def _gc(lane_idx, a, times, toll_cost, vot, ml, n_groups):
    c = vot * times[a, lane_idx]
    if lane_idx == ml and a < n_groups:
        c += toll_cost[a]
    return c


@njit(cache=True)
def _decide(l, i, dims, times, toll_cost, delta, vot, start, end, admitted):
    n_lanes, per_group, n_groups, n_lc = dims[0], dims[2], dims[3], dims[4]
    ml = n_lanes - 1
    g = i // per_group
    off = i - g * per_group
    window = off < n_lc
    a = g + 1

    can_down = l > 0 and (l != ml or window)
    if not _lane_ok(l, a, ml, n_groups, start, end, admitted):
        if not can_down:
            return 0, False
        if l == ml:
            forced = off == n_lc - 1
        else:
            forced = i >= (end + 1) * per_group - l
        return -1, forced

    cur = _gc(l, a, times, toll_cost, vot, ml, n_groups)
    up = math.inf
    if l < ml and _lane_ok(l + 1, a, ml, n_groups, start, end, admitted):
        for l2 in range(l + 1, n_lanes):
            if _lane_ok(l2, a, ml, n_groups, start, end, admitted):
                up = min(up, _gc(l2, a, times, toll_cost, vot, ml, n_groups))
    can_up = l + 1 < ml or (l + 1 == ml and window)
    down = math.inf
    for l2 in range(l):
        if _lane_ok(l2, a, ml, n_groups, start, end, admitted):
            down = min(down, _gc(l2, a, times, toll_cost, vot, ml, n_groups))
    if can_up and up + delta < cur and up < down:
        return 1, False
    if can_down and down + delta < cur and down < up:
        return -1, False
    return 0, False


@njit(cache=True)
def _prefers_ml(dims, times, toll_cost, delta, vot, start, end, admitted):
    """Whether a vehicle joining at the upstream end would accept the managed lane.

    No lane change is involved, so the threshold does not apply: the managed
    lane qualifies when it is no dearer than the best general lane.
    """
    n_lanes, n_groups = dims[0], dims[3]
    ml = n_lanes - 1
    if not _lane_ok(ml, 1, ml, n_groups, start, end, admitted):
        return False
    best = math.inf
    for l in range(ml):
        if _lane_ok(l, 1, ml, n_groups, start, end, admitted):
            best = min(best, _gc(l, 1, times, toll_cost, vot, ml, n_groups))
    return _gc(ml, 1, times, toll_cost, vot, ml, n_groups) <= best


@njit(cache=True)
def _intents(dims, d, posted, toll_scale, delta, status, lane, cell, vot, start_g, end_g, admitted, mult,
             intent, forced, entry_ml):
    per_group, n_groups = dims[2], dims[3]
    times = _group_times(d, per_group, n_groups)
    for v in range(status.shape[0]):
        if status[v] != ON_GRID:
            intent[v] = 0
            forced[v] = False
            if status[v] < ON_GRID and start_g[v] == 0:
                toll_cost = posted * (toll_scale * mult[v])
                entry_ml[v] = _prefers_ml(dims, times, toll_cost, delta, vot[v], start_g[v], end_g[v], admitted[v])
            continue
        toll_cost = posted * (toll_scale * mult[v])
        m, f = _decide(lane[v], cell[v], dims, times, toll_cost, delta, vot[v], start_g[v], end_g[v], admitted[v])
        intent[v] = m
        forced[v] = f


def lane_change_intent(
    vehicle: Vehicle,
    cell: int,
    lane: int,
    cell_times: np.ndarray,
    posted: np.ndarray,
    policy: MlPolicy,
    geometry: Geometry = Geometry(),
    toll: TollParams = TollParams(),
    delta: float = 0.1,
    locav_toll_factor: float = 1.0,
) -> Intent:
    """Intent of one vehicle sitting in ``(cell, lane)``."""
    dims = _dims(geometry)
    times = _group_times(np.asarray(cell_times, dtype=float), geometry.cells_per_group, geometry.n_groups)
    mult = toll_multiplier(vehicle.is_cav, vehicle.occupancy, policy, locav_toll_factor)
    toll_cost = np.asarray(posted, dtype=float) * (_toll_scale(toll, geometry) * mult)
    m, f = _decide(lane, cell, dims, times, toll_cost, float(delta), float(vehicle.vot),
                   vehicle.start_group, vehicle.end_group, class_admitted(vehicle, policy))
    return Intent(int(m), bool(f))


def _dims(geometry: Geometry) -> np.ndarray:
    return np.array(
        [geometry.n_lanes, geometry.n_cells, geometry.cells_per_group, geometry.n_groups, geometry.n_lc_cells],
        dtype=np.int64,
    )


def _toll_scale(toll: TollParams, geometry: Geometry) -> float:
    return float(geometry.cells_per_group) if toll.billing == "per_cell" else 1.0


class Driver:
    """Per-run policy data for every vehicle, and the batched intent evaluation."""

    def __init__(self, engine: Engine, policy: MlPolicy, toll: TollParams, delta: float, locav_toll_factor: float = 1.0):
        self.engine = engine
        self.toll_scale = _toll_scale(toll, engine.geometry)
        self.delta = float(delta)
        cav, occ = engine.is_cav, engine.occupancy
        self.admitted = np.array([policy.access(c, o) is not Access.BARRED for c, o in zip(cav, occ)], dtype=np.bool_)
        self.multiplier = np.array(
            [toll_multiplier(bool(c), int(o), policy, locav_toll_factor) for c, o in zip(cav, occ)], dtype=float
        )

    def decide(self, posted: np.ndarray) -> None:
        e = self.engine
        _intents(e.dims, e.d, np.asarray(posted, dtype=float), self.toll_scale, self.delta, e.status, e.lane,
                 e.cell, e.vot, e.start_g, e.end_g, self.admitted, self.multiplier, e.intent, e.forced, e.entry_ml)


def aggregate_demand(engine: Engine) -> dict[int, np.ndarray]:
    """Lane-change requests per ``(lane, cell)`` for each direction."""
    shape = (engine.geometry.n_lanes, engine.geometry.n_cells)
    out = {}
    on = engine.status == ON_GRID
    for m in (UP, DOWN):
        sel = on & (engine.intent == m)
        f = np.zeros(shape, dtype=np.int64)
        np.add.at(f, (engine.lane[sel], engine.cell[sel]), 1)
        out[m] = f
    return out
