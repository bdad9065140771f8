import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mlsim.behavior import (
    DOWN,
    STAY,
    UP,
    Driver,
    aggregate_demand,
    class_admitted,
    eligibility,
    generalized_cost,
    lane_change_intent,
    lane_eligible,
)
from mlsim.fd import FdParams
from mlsim.mesh import ON_GRID, Engine
from mlsim.policy import MlPolicy
from mlsim.scenario import Geometry, Vehicle
from mlsim.tolling import TollParams

GEO = Geometry()
ML = GEO.ml_lane
D_F = GEO.cell_length / 88.0
FREE = np.full((GEO.n_lanes, GEO.n_cells), D_F)
NO_TOLL = np.zeros(GEO.n_groups)


def vehicle(cav=False, occ=1, vot=20.0, start=0, end=4):
    return Vehicle(id=0, is_cav=cav, occupancy=occ, vot=vot, depart=7.0, start_group=start, end_group=end)


LOHDV = vehicle()


def test_eligibility_examples():
    assert eligibility(LOHDV, 2, MlPolicy.ST1)
    for occ in (1, 2, 3):
        assert not eligibility(vehicle(occ=occ), 2, MlPolicy.EU2)
    for policy in MlPolicy:
        assert not eligibility(vehicle(cav=True, occ=2, start=2), 2, policy)
    assert not eligibility(LOHDV, 4, MlPolicy.ST1)


def test_admission_table():
    assert class_admitted(vehicle(occ=2), MlPolicy.EU1)
    assert not class_admitted(vehicle(cav=True), MlPolicy.EU1)
    assert class_admitted(vehicle(cav=True), MlPolicy.EU2)
    assert not class_admitted(LOHDV, MlPolicy.EU4)
    assert class_admitted(LOHDV, MlPolicy.AU1)


def test_lane_eligibility():
    assert lane_eligible(LOHDV, 2, 0, MlPolicy.EU1)
    assert not lane_eligible(LOHDV, 2, ML, MlPolicy.EU1)
    assert lane_eligible(LOHDV, 2, ML, MlPolicy.ST1)
    with pytest.raises(IndexError):
        lane_eligible(LOHDV, 2, 3, MlPolicy.ST1)


def test_generalized_cost_free_flow():
    assert generalized_cost(1, 0, LOHDV, FREE, NO_TOLL, MlPolicy.ST1) == pytest.approx(0.4546, abs=1e-4)
    assert generalized_cost(1, 0, vehicle(vot=0.0), FREE, NO_TOLL, MlPolicy.ST1) == 0.0
    assert generalized_cost(5, 0, LOHDV, FREE, NO_TOLL, MlPolicy.ST1) == 0.0


def test_generalized_cost_per_cell_toll():
    posted = np.full(GEO.n_groups, 0.2)
    per_cell = TollParams(billing="per_cell")
    gc = generalized_cost(1, ML, LOHDV, FREE, posted, MlPolicy.ST1, toll=per_cell)
    assert gc == pytest.approx(15 * (0.2 + 20 * D_F), abs=1e-9)
    assert gc == pytest.approx(3.4546, abs=1e-4)
    # the same level billed once per group
    assert generalized_cost(1, ML, LOHDV, FREE, posted, MlPolicy.ST1) == pytest.approx(0.2 + 15 * 20 * D_F)
    # free riders perceive no toll
    hov = vehicle(occ=2)
    assert generalized_cost(1, ML, hov, FREE, posted, MlPolicy.ST1, toll=per_cell) == pytest.approx(0.4546, abs=1e-4)


def test_intent_must_leave_ml():
    short = vehicle(start=0, end=2)
    # in group 1, the next group is the exit group: the managed lane is no longer allowed
    assert lane_change_intent(short, 15, ML, FREE, NO_TOLL, MlPolicy.ST1).move == DOWN
    forced = lane_change_intent(short, 17, ML, FREE, NO_TOLL, MlPolicy.ST1)
    assert forced.move == DOWN and forced.forced
    # outside the window it cannot leave
    assert lane_change_intent(short, 20, ML, FREE, NO_TOLL, MlPolicy.ST1).move == STAY


def test_intent_tie_stays():
    for lane in range(GEO.n_lanes):
        assert lane_change_intent(LOHDV, 16, lane, FREE, NO_TOLL, MlPolicy.AU1).move == STAY


def test_intent_two_step_traversal():
    times = FREE.copy()
    times[:ML] = 0.01  # congested general lanes
    assert lane_change_intent(LOHDV, 15, 0, times, NO_TOLL, MlPolicy.ST1).move == UP
    assert lane_change_intent(LOHDV, 16, 1, times, NO_TOLL, MlPolicy.ST1).move == UP
    # an expensive toll keeps the driver in the general lanes
    dear = np.full(GEO.n_groups, 15.0)
    assert lane_change_intent(LOHDV, 16, 1, times, dear, MlPolicy.ST1).move == STAY
    # a barred class never heads for the managed lane
    assert lane_change_intent(LOHDV, 16, 1, times, NO_TOLL, MlPolicy.EU1).move == STAY


def test_aggregate_demand_tallies_per_direction():
    pop = {
        "is_cav": np.zeros(6, bool),
        "occupancy": np.ones(6, np.int64),
        "vot": np.full(6, 20.0),
        "depart": np.full(6, 7.0),
        "start_group": np.zeros(6, np.int64),
        "end_group": np.full(6, 4, np.int64),
    }
    e = Engine(GEO, FdParams(), 6.0, pop)
    e.refresh()
    e.advance(0)
    on = np.flatnonzero(e.status == ON_GRID)
    assert len(on)
    e.intent[on] = UP
    e.intent[on[::2]] = DOWN
    demand = aggregate_demand(e)
    assert demand[UP].sum() + demand[DOWN].sum() == len(on)
    assert demand[DOWN].sum() == len(on[::2])
    assert demand[UP].sum() + demand[DOWN].sum() == e.counts.sum()


def test_driver_multipliers_follow_policy():
    pop = {
        "is_cav": np.array([False, False, True, True]),
        "occupancy": np.array([1, 2, 1, 2]),
        "vot": np.full(4, 20.0),
        "depart": np.full(4, 7.0),
        "start_group": np.zeros(4, np.int64),
        "end_group": np.full(4, 4, np.int64),
    }
    e = Engine(GEO, FdParams(), 6.0, pop)
    d = Driver(e, MlPolicy.ST2, TollParams(), 0.1, locav_toll_factor=0.5)
    assert d.multiplier.tolist() == [1.0, 0.0, 0.5, 0.0]
    assert d.admitted.all()
    d = Driver(e, MlPolicy.EU1, TollParams(), 0.1)
    assert d.admitted.tolist() == [False, True, False, True]


# ---------------------------------------------------------------- properties

times_st = hnp.arrays(float, (GEO.n_lanes, GEO.n_cells), elements=st.floats(D_F, GEO.cell_length / 5.0))
tolls_st = hnp.arrays(float, GEO.n_groups, elements=st.floats(0.0, 15.0))
trips = st.tuples(st.integers(0, 4), st.integers(0, 4)).map(sorted)
vehicles_st = st.builds(
    lambda cav, occ, vot, trip: vehicle(cav, occ, vot, trip[0], trip[1]),
    st.booleans(),
    st.integers(1, 3),
    st.floats(0.5, 900.0),
    trips,
)
positions = st.tuples(st.integers(0, GEO.n_cells - 1), st.integers(0, GEO.n_lanes - 1))
policies = st.sampled_from(list(MlPolicy))


@given(vehicles_st, positions, times_st, tolls_st, policies, st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_threshold_monotonicity(v, pos, times, tolls, policy, d1, d2):
    lo, hi = sorted((d1, d2))
    cell, lane = pos
    strict = lane_change_intent(v, cell, lane, times, tolls, policy, delta=hi)
    loose = lane_change_intent(v, cell, lane, times, tolls, policy, delta=lo)
    if strict.move != STAY and not strict.forced:
        assert loose.move != STAY


@given(vehicles_st, positions, times_st, tolls_st, policies)
def test_intent_legality(v, pos, times, tolls, policy):
    cell, lane = pos
    intent = lane_change_intent(v, cell, lane, times, tolls, policy)
    nxt = cell // GEO.cells_per_group + 1
    if intent.move == UP:
        assert lane_eligible(v, nxt, lane + 1, policy)
        if lane + 1 == ML:
            assert cell % GEO.cells_per_group < GEO.n_lc_cells
    if intent.move == DOWN:
        assert lane > 0


@given(vehicles_st, st.integers(0, GEO.n_cells - 1), times_st, tolls_st, st.floats(0.0, 5.0), policies)
def test_toll_sensitivity(v, cell, times, tolls, raise_by, policy):
    g = cell // GEO.cells_per_group + 1
    higher = tolls + raise_by
    if g < GEO.n_groups:
        assert generalized_cost(g, ML, v, times, higher, policy) >= generalized_cost(g, ML, v, times, tolls, policy)
    before = lane_change_intent(v, cell, ML - 1, times, tolls, policy)
    after = lane_change_intent(v, cell, ML - 1, times, higher, policy)
    if before.move != UP:
        assert after.move != UP


@given(st.integers(2, 3), st.booleans(), times_st, st.integers(0, 4), st.sampled_from([MlPolicy.ST1, MlPolicy.ST2, MlPolicy.AU1]))
def test_free_hov_prefers_faster_ml(occ, cav, times, g, policy):
    times = times.copy()
    times[ML] = np.minimum(times[ML], times[:ML].min(axis=0))
    hov = vehicle(cav=cav, occ=occ)
    tolls = np.full(GEO.n_groups, 15.0)
    for lane in range(ML):
        assert generalized_cost(g, ML, hov, times, tolls, policy) <= generalized_cost(g, lane, hov, times, tolls, policy)
