"""Reactive ML toll controller and toll collection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from mlsim.policy import Access, MlPolicy, VehicleClass, vehicle_class

log = logging.getLogger(__name__)

BILLING_MODES = ("group", "per_cell")


@dataclass(frozen=True)
class TollParams:
    pi_min: float = 0.0  # USD
    pi_max: float = 15.0  # USD
    pi_step: float = 0.2  # USD
    theta: float = 0.85  # fraction of critical density that triggers a raise
    horizon: float = 5.0  # minutes
    # "group": the posted level is perceived and paid once per group traversal.
    # "per_cell": the posted level is per cell, perceived and paid x group size.
    billing: str = "group"

    def validate(self, dt_seconds: float) -> None:
        if not 0 <= self.pi_min < self.pi_max:
            raise ValueError("toll: require 0 <= pi_min < pi_max")
        if self.pi_step <= 0:
            raise ValueError("toll: pi_step must be > 0")
        if not 0 < self.theta <= 1:
            raise ValueError("toll: theta must be in (0, 1]")
        if self.billing not in BILLING_MODES:
            raise ValueError(f"toll: billing must be one of {BILLING_MODES}")
        steps = self.horizon * 60.0 / dt_seconds
        if self.horizon <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("toll: horizon must be a positive multiple of dt")

    def steps_per_horizon(self, dt_seconds: float) -> int:
        return int(round(self.horizon * 60.0 / dt_seconds))


def toll_multiplier(is_cav: bool, occupancy: int, policy: MlPolicy, locav_toll_factor: float = 1.0) -> float:
    """Fraction of the posted toll a vehicle pays; 0 for free or barred classes."""
    access = policy.access(is_cav, occupancy)
    if access is not Access.TOLL:
        return 0.0
    if vehicle_class(is_cav, occupancy) is VehicleClass.LOCAV:
        return float(locav_toll_factor)
    return 1.0


def toll_cap(is_cav: bool, occupancy: int, policy: MlPolicy) -> float:
    """Largest toll the vehicle can be charged: 0 for free use, unbounded when tolled."""
    return math.inf if policy.access(is_cav, occupancy) is Access.TOLL else 0.0


def update_toll(previous: float, sum_k: float, sum_kcr: float, params: TollParams) -> float:
    """One controller step over the densities accumulated during the last horizon."""
    if sum_k >= params.theta * sum_kcr:
        new = min(params.pi_max, previous + params.pi_step)
    else:
        new = max(params.pi_min, previous - params.pi_step)
    # keep levels on the step lattice instead of drifting in the last bits
    return round(new, 10)


class TollSchedule:
    """Posted ML toll per group and horizon, with the density accumulators."""

    def __init__(self, n_groups: int, params: TollParams):
        self.params = params
        self.n_groups = n_groups
        self.history: list[np.ndarray] = [np.full(n_groups, params.pi_min)]
        self.sum_k = np.zeros(n_groups)
        self.sum_kcr = np.zeros(n_groups)

    @property
    def horizon(self) -> int:
        return len(self.history) - 1

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]

    def accumulate(self, k_by_group, kcr_by_group) -> None:
        self.sum_k += k_by_group
        self.sum_kcr += kcr_by_group

    def advance(self) -> np.ndarray:
        prev = self.history[-1]
        new = np.array(
            [update_toll(prev[g], self.sum_k[g], self.sum_kcr[g], self.params) for g in range(self.n_groups)]
        )
        self.history.append(new)
        self.sum_k[:] = 0.0
        self.sum_kcr[:] = 0.0
        return new

    def as_array(self) -> np.ndarray:
        """Shape ``(n_horizons, n_groups)``."""
        return np.vstack(self.history)

    def trace_rows(self):
        for h, row in enumerate(self.history):
            for g, pi in enumerate(row):
                yield h, g, float(pi)


@dataclass
class TollCollector:
    """Charges each vehicle at most once per group it rides in the ML."""

    params: TollParams
    cells_per_group: int
    total: float = 0.0
    charged: set = field(default_factory=set)
    suppressed: int = 0

    def amount(self, posted: float, multiplier: float, cap: float = math.inf) -> float:
        base = posted * self.cells_per_group if self.params.billing == "per_cell" else posted
        return min(multiplier * base, cap)

    def charge(self, vehicle_id: int, group: int, posted: float, multiplier: float, cap: float = math.inf) -> float:
        key = (vehicle_id, group)
        if key in self.charged:
            self.suppressed += 1
            log.debug("suppressed repeat charge for vehicle %d in group %d", vehicle_id, group)
            return 0.0
        self.charged.add(key)
        paid = self.amount(posted, multiplier, cap)
        self.total += paid
        return paid
