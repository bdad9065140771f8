"""Closed-form value of converting a high-occupancy HDV into a CAV.

One extra CAV in a managed-lane cell raises that cell's critical density, and
with it the room available to vehicles shifting over from a congested general
lane. The benefit splits into the time saved by the shifted vehicles and the
time saved by those left behind in the thinner general lane. Everything here
is per cell and per unit of time; how it adds up over a corridor is left to
the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from mlsim.fd import FdParams, MixState, cell_time, critical_density, flow
from mlsim.scenario import DemandParams, Geometry


def dkcr_dnA(mix: MixState, params: FdParams = FdParams()) -> float:
    """Change of critical density (veh/km) per added CAV, HDV count held fixed."""
    n_H, n_A = float(mix.n_H), float(mix.n_A)
    if n_H + n_A <= 0:
        raise ValueError("derivative undefined for an empty cell")
    a = (params.s_f + params.w_H) / params.q_H0
    b = (params.s_f + params.w_A) / params.q_A0
    return (a - b) * n_H / (a * n_H + b * n_A) ** 2


def _congested_range(params: FdParams) -> tuple[float, float]:
    k_cr = params.q_H0 / (params.s_f + params.w_H)
    k_jam = params.q_H0 / params.w_H if params.w_H > 0 else math.inf
    return k_cr, k_jam


def dd_dn(gpl_density: float, params: FdParams = FdParams()) -> float:
    """Change of pure-HDV cell travel time (h) per added vehicle on the congested branch."""
    k_cr, k_jam = _congested_range(params)
    if not k_cr - 1e-9 <= gpl_density < k_jam:
        raise ValueError(
            f"gpl_density={gpl_density} is outside the congested branch ({k_cr:.3f}, {k_jam:.3f}) veh/km"
        )
    q = params.q_H0 - params.w_H * gpl_density
    return 1.0 / q + gpl_density * params.w_H / q**2


def default_mean_vot(demand: DemandParams = DemandParams()) -> float:
    """Population mean VOT (USD/h): truncated-normal mean times the mean occupancy."""
    mu, sd, lo, hi = demand.vot_mean, demand.vot_sd, demand.vot_lo, demand.vot_hi
    if sd == 0:
        base = mu
    else:
        a, b = (lo - mu) / sd, (hi - mu) / sd
        pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
        cdf = lambda z: 0.5 * (1 + math.erf(z / math.sqrt(2)))  # noqa: E731
        base = mu + sd * (pdf(a) - pdf(b)) / (cdf(b) - cdf(a))
    occupancy = sum(k * p for k, p in demand.occupancy_pmf)
    return base * occupancy


@dataclass(frozen=True)
class ConversionScenario:
    ml_cav_fraction: float = 0.4
    ml_density_ratio: float = 0.85  # managed-lane density as a fraction of its critical density
    gpl_density: float = 63.0  # veh/km, pure HDV
    mean_vot: float = field(default_factory=default_mean_vot)
    cell_length: float = Geometry().cell_length
    params: FdParams = field(default_factory=FdParams)

    def validate(self) -> None:
        if not 0 <= self.ml_cav_fraction <= 1:
            raise ValueError("ml_cav_fraction must be in [0, 1]")
        if not 0 < self.ml_density_ratio <= 1:
            raise ValueError("ml_density_ratio must be in (0, 1]")
        if self.cell_length <= 0:
            raise ValueError("cell_length must be > 0")
        if self.mean_vot < 0:
            raise ValueError("mean_vot must be ≥ 0")
        k_cr, k_jam = _congested_range(self.params)
        if not k_cr - 1e-9 <= self.gpl_density < k_jam:
            raise ValueError("gpl_density must lie on the congested branch of the pure-HDV diagram")

    def ml_mix(self) -> MixState:
        """Managed-lane cell contents at the stated density ratio."""
        k_cr = critical_density(MixState.from_fraction(self.ml_cav_fraction), self.params)
        density = self.ml_density_ratio * k_cr
        return MixState.from_fraction(self.ml_cav_fraction, n=density * self.cell_length, density=density)


@dataclass(frozen=True)
class MarginalBenefit:
    shifted_vehicles: float  # extra vehicles the managed-lane cell can take
    time_value: float  # USD per shifted vehicle: own saving plus relief left behind
    shifted_term: float  # USD, saving of the vehicles that move over
    remaining_term: float  # USD, saving of the vehicles that stay
    d_gpl: float  # h
    d_ml: float  # h
    q_gpl: float  # veh/h

    @property
    def total(self) -> float:
        return self.shifted_vehicles * self.time_value

    def as_dict(self) -> dict:
        return {
            "shifted_vehicles": self.shifted_vehicles,
            "time_value": self.time_value,
            "shifted_term": self.shifted_term,
            "remaining_term": self.remaining_term,
            "total": self.total,
            "d_gpl": self.d_gpl,
            "d_ml": self.d_ml,
            "q_gpl": self.q_gpl,
        }


def marginal_benefit(scenario: ConversionScenario = ConversionScenario()) -> MarginalBenefit:
    """Social-cost reduction (USD) of one HOV-to-CAV conversion in a managed-lane cell."""
    scenario.validate()
    p, L = scenario.params, scenario.cell_length
    shifted = 2.0 * dkcr_dnA(scenario.ml_mix(), p) * L

    gpl = MixState(1.0, 0.0, scenario.gpl_density)
    q_gpl = float(flow(gpl, p))
    d_gpl = float(cell_time(gpl, p, L))
    d_ml = L / p.s_f  # the managed lane is held in free flow
    own = (d_gpl - d_ml) * scenario.mean_vot
    relief = dd_dn(scenario.gpl_density, p) * q_gpl * d_ml * scenario.mean_vot
    return MarginalBenefit(
        shifted_vehicles=shifted,
        time_value=own + relief,
        shifted_term=shifted * own,
        remaining_term=shifted * relief,
        d_gpl=d_gpl,
        d_ml=d_ml,
        q_gpl=q_gpl,
    )


def annualize(per_trip_savings: float, trips_per_day: float = 2, days_per_year: float = 250) -> float:
    """Yearly value of a per-trip saving."""
    if per_trip_savings < 0 or trips_per_day < 0 or days_per_year < 0:
        raise ValueError("annualize expects non-negative inputs")
    return per_trip_savings * trips_per_day * days_per_year

