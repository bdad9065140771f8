import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlsim.policy import MlPolicy
from mlsim.tolling import TollCollector, TollParams, TollSchedule, toll_cap, toll_multiplier, update_toll

T = TollParams()


def test_update_examples():
    assert update_toll(0.4, 10.0, 10.0 / 0.85, T) == pytest.approx(0.6)
    assert update_toll(0.4, 9.0, 10.0 / 0.85, T) == pytest.approx(0.2)
    assert update_toll(0.0, 0.0, 100.0, T) == 0.0
    assert update_toll(15.0, 100.0, 100.0, T) == 15.0


def test_caps_and_multipliers():
    assert toll_cap(False, 2, MlPolicy.ST1) == 0.0
    assert toll_cap(False, 1, MlPolicy.ST1) == math.inf
    assert toll_cap(True, 3, MlPolicy.AT1) == math.inf
    assert toll_multiplier(False, 2, MlPolicy.ST1) == 0.0
    assert toll_multiplier(False, 1, MlPolicy.ST1) == 1.0
    assert toll_multiplier(True, 1, MlPolicy.ST2, locav_toll_factor=0.25) == 0.25
    assert toll_multiplier(True, 1, MlPolicy.ST1, locav_toll_factor=0.25) == 0.0
    assert toll_multiplier(False, 1, MlPolicy.EU1) == 0.0


def test_per_cell_charge_once():
    c = TollCollector(TollParams(billing="per_cell"), 15)
    assert c.charge(7, 2, 0.2, 1.0) == pytest.approx(3.0)
    for _ in range(3):
        assert c.charge(7, 2, 0.2, 1.0) == 0.0
    assert c.suppressed == 3
    assert c.total == pytest.approx(3.0)
    # a later group is a new charge
    assert c.charge(7, 3, 0.2, 1.0) == pytest.approx(3.0)


def test_group_billing_and_free_riders():
    c = TollCollector(T, 15)
    assert c.charge(1, 1, 0.2, 1.0) == pytest.approx(0.2)
    assert c.charge(2, 1, 0.2, toll_multiplier(False, 2, MlPolicy.ST1)) == 0.0
    assert c.amount(10.0, 1.0, cap=2.0) == 2.0


def test_params_validation():
    with pytest.raises(ValueError):
        TollParams(horizon=0.05).validate(6.0)
    with pytest.raises(ValueError):
        TollParams(billing="lump").validate(6.0)
    assert T.steps_per_horizon(6.0) == 50


def test_empty_ml_decays_in_predicted_horizons():
    sched = TollSchedule(2, T)
    sched.history[0] = np.array([3.0, 0.4])
    horizons = 0
    while sched.current.max() > T.pi_min:
        sched.accumulate(np.zeros(2), np.full(2, 20.0))
        sched.advance()
        horizons += 1
    assert horizons == math.ceil((3.0 - T.pi_min) / T.pi_step)


def test_saturated_ml_reaches_cap():
    sched = TollSchedule(1, T)
    horizons = 0
    while sched.current[0] < T.pi_max:
        sched.accumulate(np.array([30.0]), np.array([20.0]))
        sched.advance()
        horizons += 1
    assert horizons == math.ceil((T.pi_max - T.pi_min) / T.pi_step)
    assert sched.as_array().shape == (horizons + 1, 1)
    assert len(list(sched.trace_rows())) == horizons + 1


@given(st.lists(st.tuples(st.floats(0.0, 100.0), st.floats(1.0, 100.0)), min_size=1, max_size=120))
def test_bounds_and_step_discipline(inputs):
    sched = TollSchedule(1, T)
    for k, kcr in inputs:
        sched.accumulate(np.array([k]), np.array([kcr]))
        sched.advance()
    levels = sched.as_array()[:, 0]
    assert ((levels >= T.pi_min) & (levels <= T.pi_max)).all()
    deltas = np.round(np.diff(levels), 9)
    assert set(deltas) <= {-0.2, 0.0, 0.2}
    for prev, d in zip(levels[:-1], deltas):
        if d == 0.0:
            assert prev in (T.pi_min, T.pi_max)
