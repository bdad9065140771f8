"""Mixed CAV/HDV triangular fundamental diagram.

Two-class form with branch intercepts ``q_H0``/``q_A0`` and backward wave
speeds ``w_H``/``w_A``. For a cell holding ``n_H`` human-driven and ``n_A``
automated vehicles at density ``k``::

    k_cr  = n / ((s_f + w_H) n_H / q_H0 + (s_f + w_A) n_A / q_A0)
    q_max = k_cr * s_f
    q     = s_f * k                                         k <= k_cr
    q     = (n - k (w_H n_H/q_H0 + w_A n_A/q_A0))
            / (n_H/q_H0 + n_A/q_A0)                         k >  k_cr

Every quantity depends on the mix only through the CAV fraction, so the
functions accept counts or fractions interchangeably. All functions broadcast
over numpy arrays; the scalar path returns plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class FdParams:
    q_H0: float = 2424.0  # veh/h
    q_A0: float = 4400.0  # veh/h
    w_H: float = 30.5  # km/h
    w_A: float = 61.1  # km/h
    s_f: float = 88.0  # km/h
    s_min: float = 5.0  # km/h
    # informational only; the implied values below govern the dynamics
    q_Hm: float = 1800.0
    q_Am: float = 2600.0
    k_jH: float = 94.4
    k_jA: float = 75.0

    def validate(self) -> None:
        if not self.q_A0 > self.q_H0 > 0:
            raise ValueError("fd: require q_A0 > q_H0 > 0")
        if not self.w_A > self.w_H > 0:
            raise ValueError("fd: require w_A > w_H > 0")
        if not self.s_f > self.s_min > 0:
            raise ValueError("fd: require s_f > s_min > 0")
        for cap, implied, name in (
            (self.q_Hm, self.implied_capacity(0.0), "q_Hm"),
            (self.q_Am, self.implied_capacity(1.0), "q_Am"),
        ):
            if abs(implied - cap) > 0.01 * cap:
                raise ValueError(
                    f"fd: {name}={cap} disagrees with implied capacity {implied:.1f} by more than 1%"
                )

    def implied_capacity(self, cav_fraction: float) -> float:
        return float(max_flow(MixState(1.0 - cav_fraction, cav_fraction), self))

    def implied_jam_density(self, cav_fraction: float) -> float:
        return float(jam_density(MixState(1.0 - cav_fraction, cav_fraction), self))


@dataclass
class MixState:
    """Vehicle mix of one cell. ``density`` is only read by ``flow``/``cell_time``."""

    n_H: float
    n_A: float
    density: float = 0.0

    @property
    def n(self):
        return self.n_H + self.n_A

    @classmethod
    def from_fraction(cls, cav_fraction: float, n: float = 1.0, density: float = 0.0) -> "MixState":
        return cls(n * (1.0 - cav_fraction), n * cav_fraction, density)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_nonempty(mix: MixState) -> None:
    if np.any(np.asarray(mix.n_H) + np.asarray(mix.n_A) <= 0):
        raise ValueError("fundamental diagram query on an empty mix")


def critical_density(mix: MixState, params: FdParams):
    """Critical density (veh/km) of the mix."""
    _check_nonempty(mix)
    n_H = np.asarray(mix.n_H, dtype=float)
    n_A = np.asarray(mix.n_A, dtype=float)
    denom = (params.s_f + params.w_H) * n_H / params.q_H0 + (params.s_f + params.w_A) * n_A / params.q_A0
    return _out((n_H + n_A) / denom)


def max_flow(mix: MixState, params: FdParams):
    """Capacity (veh/h) of the mix: critical density times free-flow speed."""
    return _out(np.asarray(critical_density(mix, params)) * params.s_f)


def jam_density(mix: MixState, params: FdParams):
    """Density where the congested branch reaches zero flow."""
    _check_nonempty(mix)
    n_H = np.asarray(mix.n_H, dtype=float)
    n_A = np.asarray(mix.n_A, dtype=float)
    return _out((n_H + n_A) / (params.w_H * n_H / params.q_H0 + params.w_A * n_A / params.q_A0))


def flow(mix: MixState, params: FdParams):
    """Flow (veh/h) at ``mix.density``; zero above the implied jam density."""
    k = np.asarray(mix.density, dtype=float)
    if np.any(k < 0):
        raise ValueError("negative density")
    _check_nonempty(mix)
    n_H = np.asarray(mix.n_H, dtype=float)
    n_A = np.asarray(mix.n_A, dtype=float)
    n = n_H + n_A
    k_cr = np.asarray(critical_density(mix, params))
    congested = (n - k * (params.w_H * n_H / params.q_H0 + params.w_A * n_A / params.q_A0)) / (
        n_H / params.q_H0 + n_A / params.q_A0
    )
    q = np.where(k <= k_cr, params.s_f * k, np.maximum(congested, 0.0))
    return _out(q)


def cell_time(mix: MixState, params: FdParams, cell_length: float):
    """Cell traversal time (h) at the mix's density, speed floored at ``s_min``.

    An empty cell (or zero density) returns the free-flow time.
    """
    n_H = np.asarray(mix.n_H, dtype=float)
    n_A = np.asarray(mix.n_A, dtype=float)
    k = np.asarray(mix.density, dtype=float)
    if np.any(k < 0):
        raise ValueError("negative density")
    occupied = (n_H + n_A > 0) & (k > 0)
    # placeholder mix for empty cells keeps the vectorised path defined
    safe = MixState(np.where(occupied, n_H, 1.0), np.where(occupied, n_A, 0.0), np.where(occupied, k, 1.0))
    q = np.asarray(flow(safe, params))
    v = np.where(occupied, q / safe.density, params.s_f)
    return _out(cell_length / np.maximum(v, params.s_min))


def fd_table(params: FdParams, cav_fractions, densities):
    """Rows ``(cav_fraction, k, q, v)`` over a grid, for plotting and validation."""
    rows = []
    for p in cav_fractions:
        for k in densities:
            mix = MixState.from_fraction(p, density=k)
            q = flow(mix, params)
            v = q / k if k > 0 else params.s_f
            rows.append((float(p), float(k), float(q), float(v)))
    return rows


# ---------------------------------------------------------------- compiled scalar kernels
# The simulation loop evaluates the diagram for every cell every step; these
# mirror the vectorised functions above and are cross-checked against them.



def kernel_params(params: FdParams) -> np.ndarray:
    """Packed ``(q_H0, q_A0, w_H, w_A, s_f, s_min)`` for the compiled kernels."""
    return np.array([params.q_H0, params.q_A0, params.w_H, params.w_A, params.s_f, params.s_min])


@njit(cache=True)
def k_crit(n_h, n_a, p):
    """Critical density; an empty cell reports the pure-HDV value."""
    if n_h + n_a <= 0:
        n_h, n_a = 1.0, 0.0
    return (n_h + n_a) / ((p[4] + p[2]) * n_h / p[0] + (p[4] + p[3]) * n_a / p[1])


@njit(cache=True)
def k_jam(n_h, n_a, p):
    """Density where the congested branch reaches zero flow (pure HDV when empty)."""
    if n_h + n_a <= 0:
        n_h, n_a = 1.0, 0.0
    return (n_h + n_a) / (p[2] * n_h / p[0] + p[3] * n_a / p[1])


@njit(cache=True)
def flow_at(n_h, n_a, k, p):
    k_cr = k_crit(n_h, n_a, p)
    if k <= k_cr:
        return p[4] * k
    if n_h + n_a <= 0:
        n_h, n_a = 1.0, 0.0
    q = (n_h + n_a - k * (p[2] * n_h / p[0] + p[3] * n_a / p[1])) / (n_h / p[0] + n_a / p[1])
    return q if q > 0.0 else 0.0


@njit(cache=True)
def time_at(n_h, n_a, cell_length, p):
    if n_h + n_a <= 0:
        return cell_length / p[4]
    k = (n_h + n_a) / cell_length
    v = flow_at(n_h, n_a, k, p) / k
    return cell_length / max(v, p[5])
