"""Cell network: per-step longitudinal moves, lane changes, ramps and vehicle tracking.

Lane 0 is the slowest general-purpose lane (the only one ramps connect to),
lane ``L-1`` is the managed lane. Vehicles are tracked individually; each
cell's contents form a FIFO queue keyed by the step the vehicle entered it.
Real-valued transfer allowances are turned into whole vehicles by per-boundary
residual accumulators, so long-run rates are preserved without randomness.

A step runs these phases in order:

1. ramp exits from lane 0 at the first cell of the group after the trip's end group
2. longitudinal moves, downstream cells first, through traffic only
3. lane changes towards slower lanes
4. lane changes towards faster lanes
5. blocked lane changers that are not forced keep driving if room remains ahead
6. forced merges at the last permitted cell, ignoring supply
7. entries from per-group vertical queues: lane 0 at interior ramps; trips
   starting with the highway join the roomiest lane they would accept, the
   managed lane included when it is no dearer than the best general lane

Because downstream cells are emptied before their upstream neighbours are
processed, a full-speed platoon advances one cell per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from mlsim.fd import FdParams, flow_at, k_crit, k_jam, kernel_params, time_at
from mlsim.scenario import Geometry

PENDING, QUEUED, ON_GRID, EXITED = 0, 1, 2, 3

# "downstream_first": supply terms see moves already made this step.
# "simultaneous": every supply term reads the counts at the start of the step.
UPDATE_SCHEMES = ("downstream_first", "simultaneous")

_CELL_SHIFT = 42
_KEY_SHIFT = 21
_LOW_MASK = (1 << _KEY_SHIFT) - 1


class EngineError(RuntimeError):
    """The vehicle ledger and the cell counts disagree."""


# ---------------------------------------------------------------- indexing


def group_of(cell: int, geometry: Geometry = Geometry()) -> int:
    if not 0 <= cell < geometry.n_cells:
        raise IndexError(f"cell {cell} outside [0, {geometry.n_cells})")
    return cell // geometry.cells_per_group


def group_cells(group: int, geometry: Geometry = Geometry()) -> range:
    if not 0 <= group < geometry.n_groups:
        raise IndexError(f"group {group} outside [0, {geometry.n_groups})")
    c = geometry.cells_per_group
    return range(group * c, (group + 1) * c)


def charging_cell(group: int, geometry: Geometry = Geometry()) -> int:
    """First managed-lane cell past the group's lane-change window."""
    if not 0 <= group < geometry.n_groups:
        raise IndexError(f"group {group} outside [0, {geometry.n_groups})")
    return geometry.cells_per_group * group + geometry.n_lc_cells


# ---------------------------------------------------------------- transfer rules


@njit(cache=True)
def _receiving_kcr(k_cr_src, k_cr_dst, n_dst):
    # an empty cell has no mix of its own; it borrows the sender's
    return k_cr_dst if n_dst > 0.0 else k_cr_src


@njit(cache=True)
def _long_allow(n_src, q_max_src, k_cr_dst, n_dst, dt_h, cell_length):
    a = min(n_src, q_max_src * dt_h, k_cr_dst * cell_length - n_dst)
    return a if a > 0.0 else 0.0


@njit(cache=True)
def _lc_allow(demand, q_max_src, k_cr_tgt, n_tgt, dt_h, cell_length):
    a = min(demand, q_max_src * dt_h * (1.0 - n_tgt / (k_cr_tgt * cell_length)))
    return a if a > 0.0 else 0.0


@njit(cache=True)
def _integerize(allowance, residual):
    if allowance <= 0.0:
        return 0, residual
    total = allowance + residual
    moves = math.floor(total + 1e-12)
    rest = total - moves
    if rest < 0.0:
        rest = 0.0
    return moves, rest


def integerize(allowance: float, residual: float) -> tuple[int, float]:
    """Whole vehicles to move now and the carried fractional remainder."""
    if allowance < 0:
        raise ValueError("allowance must be ≥ 0")
    moves, rest = _integerize(float(allowance), float(residual))
    return int(moves), float(rest)


@dataclass
class CellState:
    """Contents of one (cell, lane): counts by class and FIFO vehicle ids."""

    n_H: float = 0.0
    n_A: float = 0.0
    vehicles: list = field(default_factory=list)
    cell_length: float = Geometry().cell_length

    @property
    def n(self) -> float:
        return self.n_H + self.n_A

    @property
    def density(self) -> float:
        return self.n / self.cell_length

    def critical_density(self, params: FdParams) -> float:
        return float(k_crit(float(self.n_H), float(self.n_A), kernel_params(params)))

    def max_flow(self, params: FdParams) -> float:
        return self.critical_density(params) * params.s_f

    def flow(self, params: FdParams) -> float:
        return float(flow_at(float(self.n_H), float(self.n_A), self.density, kernel_params(params)))

    def travel_time(self, params: FdParams) -> float:
        return float(time_at(float(self.n_H), float(self.n_A), self.cell_length, kernel_params(params)))


def longitudinal_allowance(src: CellState, dst: CellState, params: FdParams, dt_h: float, cell_length: float) -> float:
    """Vehicles (real) that may advance from ``src`` into its downstream neighbour.

    The gap supply is the room left below the destination's critical density;
    an empty destination is judged with the source mix.
    """
    if src.n <= 0:
        return 0.0
    k_ref = dst.critical_density(params) if dst.n > 0 else src.critical_density(params)
    return float(_long_allow(float(src.n), src.max_flow(params), k_ref, float(dst.n), dt_h, cell_length))


def lane_change_allowance(demand: float, src: CellState, tgt: CellState, params: FdParams, dt_h: float) -> float:
    """Vehicles (real) of ``demand`` that may move sideways into ``tgt``."""
    if demand <= 0 or src.n <= 0:
        return 0.0
    k_ref = tgt.critical_density(params) if tgt.n > 0 else src.critical_density(params)
    return float(_lc_allow(float(demand), src.max_flow(params), k_ref, float(tgt.n), dt_h, src.cell_length))


# ---------------------------------------------------------------- compiled step


@njit(cache=True)
def refresh_caches(n_h, n_a, cell_length, p, k_cr, q_max, d):
    lanes, cells = n_h.shape
    for l in range(lanes):
        for i in range(cells):
            h = float(n_h[l, i])
            a = float(n_a[l, i])
            kc = k_crit(h, a, p)
            k_cr[l, i] = kc
            q_max[l, i] = kc * p[4]
            d[l, i] = time_at(h, a, cell_length, p)


@njit(cache=True)
def _take(v, is_cav, n_h, n_a, lane, cell):
    if is_cav[v]:
        n_a[lane, cell] -= 1
    else:
        n_h[lane, cell] -= 1


@njit(cache=True)
def _put(v, is_cav, n_h, n_a, lane, cell):
    if is_cav[v]:
        n_a[lane, cell] += 1
    else:
        n_h[lane, cell] += 1


@njit(cache=True)
def _advance(
    s, dims, cell_length, dt_h, p,
    status, lane, cell, entry_key, arrival, start_g, end_g, is_cav, intent, forced, entry_ml,
    entered, exited, moved,
    n_h, n_a, k_cr, q_max,
    res_long, res_lc, res_entry,
    ramp_ids, ramp_off, ramp_ptr,
    events, keys,
):
    n_lanes, n_cells, per_group, n_groups = dims[0], dims[1], dims[2], dims[3]
    simultaneous = dims[5] == 1
    nv = status.shape[0]
    # supply terms read either the step-start counts or the live ones
    ref = n_h + n_a
    ml = n_lanes - 1
    n_ev = 0

    for v in range(nv):
        moved[v] = False
        if status[v] == PENDING and arrival[v] <= s:
            status[v] = QUEUED

    # FIFO order of each cell at the start of the step
    m = 0
    for v in range(nv):
        if status[v] == ON_GRID:
            keys[m] = ((lane[v] * n_cells + cell[v]) << _CELL_SHIFT) | (entry_key[v] << _KEY_SHIFT) | v
            m += 1
    order = np.sort(keys[:m])
    head = np.zeros(n_lanes * n_cells + 1, np.int64)
    for j in range(m):
        head[(order[j] >> _CELL_SHIFT) + 1] += 1
    for c in range(n_lanes * n_cells):
        head[c + 1] += head[c]
    for j in range(m):
        order[j] = order[j] & _LOW_MASK

    # 1. ramp exits
    for j in range(head[0], head[n_cells]):
        v = order[j]
        if end_g[v] < n_groups - 1 and cell[v] == (end_g[v] + 1) * per_group:
            _take(v, is_cav, n_h, n_a, 0, cell[v])
            status[v] = EXITED
            exited[v] = s
            moved[v] = True

    # 2. longitudinal moves, downstream first
    fwd = np.zeros((n_lanes, n_cells), np.int64)
    for l in range(n_lanes):
        for i in range(n_cells - 1, -1, -1):
            c = l * n_cells + i
            cand = 0
            for j in range(head[c], head[c + 1]):
                v = order[j]
                if not moved[v] and intent[v] == 0:
                    cand += 1
            if cand == 0:
                continue
            if i == n_cells - 1:
                allow = min(float(cand), q_max[l, i] * dt_h)
            else:
                n_dst = ref[l, i + 1] if simultaneous else n_h[l, i + 1] + n_a[l, i + 1]
                k_ref = _receiving_kcr(k_cr[l, i], k_cr[l, i + 1], float(n_dst))
                allow = _long_allow(float(cand), q_max[l, i], k_ref, float(n_dst), dt_h, cell_length)
            k, res_long[l, i] = _integerize(allow, res_long[l, i])
            for j in range(head[c], head[c + 1]):
                if k == 0:
                    break
                v = order[j]
                if moved[v] or intent[v] != 0:
                    continue
                _take(v, is_cav, n_h, n_a, l, i)
                if i == n_cells - 1:
                    status[v] = EXITED
                    exited[v] = s + 1
                else:
                    cell[v] = i + 1
                    entry_key[v] = s + 1
                    _put(v, is_cav, n_h, n_a, l, i + 1)
                moved[v] = True
                fwd[l, i] += 1
                k -= 1

    # 3./4. lane changes: towards slower lanes from the top, then towards faster lanes
    for phase in range(2):
        direction = -1 if phase == 0 else 1
        for step_l in range(n_lanes - 1):
            l = n_lanes - 1 - step_l if phase == 0 else step_l
            tgt = l + direction
            for i in range(n_cells):
                c = l * n_cells + i
                f = 0
                for j in range(head[c], head[c + 1]):
                    v = order[j]
                    if not moved[v] and intent[v] == direction and lane[v] == l:
                        f += 1
                if f == 0:
                    continue
                n_tgt = ref[tgt, i] if simultaneous else n_h[tgt, i] + n_a[tgt, i]
                k_ref = _receiving_kcr(k_cr[l, i], k_cr[tgt, i], float(n_tgt))
                allow = _lc_allow(float(f), q_max[l, i], k_ref, float(n_tgt), dt_h, cell_length)
                k, res_lc[phase, l, i] = _integerize(allow, res_lc[phase, l, i])
                for j in range(head[c], head[c + 1]):
                    if k == 0:
                        break
                    v = order[j]
                    if moved[v] or intent[v] != direction or lane[v] != l:
                        continue
                    _take(v, is_cav, n_h, n_a, l, i)
                    lane[v] = tgt
                    entry_key[v] = s + 1
                    _put(v, is_cav, n_h, n_a, tgt, i)
                    moved[v] = True
                    events[n_ev, 0] = v
                    events[n_ev, 1] = l
                    events[n_ev, 2] = tgt
                    events[n_ev, 3] = 0
                    n_ev += 1
                    k -= 1

    # 5. blocked discretionary changers continue in their own lane
    for l in range(n_lanes):
        for i in range(n_cells - 1, -1, -1):
            c = l * n_cells + i
            cap = q_max[l, i] * dt_h
            if simultaneous and i < n_cells - 1:
                k_ref = _receiving_kcr(k_cr[l, i], k_cr[l, i + 1], float(ref[l, i + 1]))
                cap = min(cap, k_ref * cell_length - ref[l, i + 1])
            for j in range(head[c], head[c + 1]):
                v = order[j]
                if moved[v] or intent[v] == 0 or forced[v] or lane[v] != l:
                    continue
                if fwd[l, i] + 1 > cap:
                    break
                if not simultaneous and i < n_cells - 1:
                    n_dst = float(n_h[l, i + 1] + n_a[l, i + 1])
                    if _receiving_kcr(k_cr[l, i], k_cr[l, i + 1], n_dst) * cell_length - n_dst < 1.0:
                        break
                _take(v, is_cav, n_h, n_a, l, i)
                if i == n_cells - 1:
                    status[v] = EXITED
                    exited[v] = s + 1
                else:
                    cell[v] = i + 1
                    entry_key[v] = s + 1
                    _put(v, is_cav, n_h, n_a, l, i + 1)
                moved[v] = True
                fwd[l, i] += 1

    # 6. forced merges
    for j in range(m):
        v = order[j]
        if status[v] == ON_GRID and not moved[v] and forced[v] and lane[v] > 0:
            l = lane[v]
            _take(v, is_cav, n_h, n_a, l, cell[v])
            lane[v] = l - 1
            entry_key[v] = s + 1
            _put(v, is_cav, n_h, n_a, l - 1, cell[v])
            moved[v] = True
            events[n_ev, 0] = v
            events[n_ev, 1] = l
            events[n_ev, 2] = l - 1
            events[n_ev, 3] = 1
            n_ev += 1

    # 7. ramp entries
    slots = np.zeros(n_lanes, np.int64)
    for g in range(n_groups):
        lo = ramp_off[g] + ramp_ptr[g]
        hi = ramp_off[g + 1]
        waiting = 0
        for j in range(lo, hi):
            if arrival[ramp_ids[j]] > s:
                break
            waiting += 1
        if waiting == 0:
            continue
        i = g * per_group
        # trips starting with the highway may join any lane; ramps feed lane 0
        n_entry_lanes = n_lanes if g == 0 else 1
        n_gpl = max(n_lanes - 1, 1) if g == 0 else 1
        for l in range(n_entry_lanes):
            h = float(n_h[l, i])
            a = float(n_a[l, i])
            n_here = float(ref[l, i]) if simultaneous else h + a
            gap = k_jam(h, a, p) * cell_length - n_here
            allow = min(float(waiting), gap)
            if allow < 0.0:
                allow = 0.0
            slots[l], res_entry[g, l] = _integerize(allow, res_entry[g, l])
        for j in range(lo, hi):
            v = ramp_ids[j]
            if arrival[v] > s:
                break
            best = -1
            if g == 0 and entry_ml[v] and slots[ml] > slots[:n_gpl].max():
                best = ml
            elif start_g[v] == end_g[v]:
                if slots[0] > 0:
                    best = 0
            else:
                for l in range(n_gpl):
                    if slots[l] > 0 and (best < 0 or slots[l] > slots[best]):
                        best = l
            if best < 0:
                break
            slots[best] -= 1
            status[v] = ON_GRID
            lane[v] = best
            cell[v] = i
            entry_key[v] = s + 1
            entered[v] = s + 1
            moved[v] = True
            _put(v, is_cav, n_h, n_a, best, i)
            ramp_ptr[g] += 1

    # ledger check
    on = 0
    for v in range(nv):
        if status[v] == ON_GRID:
            on += 1
    total = 0
    bad = 0
    for l in range(n_lanes):
        for i in range(n_cells):
            if n_h[l, i] < 0 or n_a[l, i] < 0:
                bad = 1
            total += n_h[l, i] + n_a[l, i]
    if bad or total != on:
        return -1
    return n_ev


@njit(cache=True)
def _accrue(status, lane, cell, d, acc):
    for v in range(status.shape[0]):
        if status[v] == ON_GRID:
            acc[v] += d[lane[v], cell[v]]


class Engine:
    """Mutable simulation state for one run: the lane grid plus the vehicle table."""

    def __init__(
        self,
        geometry: Geometry,
        fd: FdParams,
        dt_seconds: float,
        population: dict,
        t_start: float = 7.0,
        scheme: str = "downstream_first",
    ):
        if scheme not in UPDATE_SCHEMES:
            raise ValueError(f"update scheme must be one of {UPDATE_SCHEMES}")
        self.geometry = geometry
        self.fd = fd
        self.p = kernel_params(fd)
        self.dt_h = dt_seconds / 3600.0
        self.dims = np.array(
            [geometry.n_lanes, geometry.n_cells, geometry.cells_per_group, geometry.n_groups, geometry.n_lc_cells,
             UPDATE_SCHEMES.index(scheme)],
            dtype=np.int64,
        )
        L, N, G = geometry.n_lanes, geometry.n_cells, geometry.n_groups
        nv = len(population["depart"])
        if nv >= 1 << _KEY_SHIFT:
            raise ValueError("too many vehicles for the cell ordering key")
        self.n_vehicles = nv
        self.is_cav = np.asarray(population["is_cav"], dtype=np.bool_)
        self.occupancy = np.asarray(population["occupancy"], dtype=np.int64)
        self.vot = np.asarray(population["vot"], dtype=np.float64)
        self.depart = np.asarray(population["depart"], dtype=np.float64)
        self.start_g = np.asarray(population["start_group"], dtype=np.int64)
        self.end_g = np.asarray(population["end_group"], dtype=np.int64)
        self.arrival = np.floor((self.depart - t_start) / self.dt_h + 1e-9).astype(np.int64)
        np.maximum(self.arrival, 0, out=self.arrival)

        self.status = np.zeros(nv, np.int8)
        self.lane = np.full(nv, -1, np.int64)
        self.cell = np.full(nv, -1, np.int64)
        self.entry_key = np.zeros(nv, np.int64)
        self.entered = np.full(nv, -1, np.int64)
        self.exited = np.full(nv, -1, np.int64)
        self.intent = np.zeros(nv, np.int8)
        self.forced = np.zeros(nv, np.bool_)
        self.entry_ml = np.zeros(nv, np.bool_)
        self.cell_time_sum = np.zeros(nv)  # h, cached cell times over occupied steps
        self._moved = np.zeros(nv, np.bool_)
        self._keys = np.zeros(max(nv, 1), np.int64)
        self._events = np.zeros((max(nv, 1), 4), np.int64)

        self.n_h = np.zeros((L, N), np.int64)
        self.n_a = np.zeros((L, N), np.int64)
        self.k_cr = np.zeros((L, N))
        self.q_max = np.zeros((L, N))
        self.d = np.zeros((L, N))
        self.res_long = np.zeros((L, N))
        self.res_lc = np.zeros((2, L, N))
        self.res_entry = np.zeros((G, L))

        # vehicles are indexed in departure order, so each ramp queue is FIFO by id
        order = np.argsort(self.start_g, kind="stable")
        self.ramp_ids = order.astype(np.int64)
        self.ramp_off = np.zeros(G + 1, np.int64)
        self.ramp_off[1:] = np.cumsum(np.bincount(self.start_g, minlength=G))
        self.ramp_ptr = np.zeros(G, np.int64)
        self.refresh()

    # -- queries

    def refresh(self) -> None:
        refresh_caches(self.n_h, self.n_a, self.geometry.cell_length, self.p, self.k_cr, self.q_max, self.d)

    @property
    def counts(self) -> np.ndarray:
        return self.n_h + self.n_a

    def cell_state(self, cell: int, lane: int) -> CellState:
        ids = np.flatnonzero((self.status == ON_GRID) & (self.lane == lane) & (self.cell == cell))
        ids = ids[np.lexsort((ids, self.entry_key[ids]))]
        return CellState(
            float(self.n_h[lane, cell]), float(self.n_a[lane, cell]), [int(v) for v in ids], self.geometry.cell_length
        )

    def tally(self) -> dict:
        return {
            "pending": int(np.sum(self.status == PENDING)),
            "queued": int(np.sum(self.status == QUEUED)),
            "on_grid": int(np.sum(self.status == ON_GRID)),
            "exited": int(np.sum(self.status == EXITED)),
            "in_cells": int(self.counts.sum()),
        }

    # -- dynamics

    def accrue(self) -> None:
        """Add each tracked vehicle's current cell time to its running total."""
        _accrue(self.status, self.lane, self.cell, self.d, self.cell_time_sum)

    def advance(self, step: int) -> np.ndarray:
        """Apply one step; returns lane-change events ``(vehicle, from, to, forced)``."""
        n_ev = _advance(
            step, self.dims, self.geometry.cell_length, self.dt_h, self.p,
            self.status, self.lane, self.cell, self.entry_key, self.arrival, self.start_g, self.end_g,
            self.is_cav, self.intent, self.forced, self.entry_ml,
            self.entered, self.exited, self._moved,
            self.n_h, self.n_a, self.k_cr, self.q_max,
            self.res_long, self.res_lc, self.res_entry,
            self.ramp_ids, self.ramp_off, self.ramp_ptr,
            self._events, self._keys,
        )
        if n_ev < 0:
            raise EngineError(f"cell counts diverged from the vehicle ledger at step {step}")
        return self._events[:n_ev].copy()


def advance_step(engine: Engine, step: int) -> np.ndarray:
    """One mesh update using the intents already stored on ``engine``."""
    return engine.advance(step)
