import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpnsr.errors import EtaBoundsError, KappaError, ScheduleOrderError, StepCountError, StepRangeError
from lpnsr.schedule import DiffusionSchedule, build_schedule


def geometric_oracle(T, lo, hi):
    # independent evaluation: log-linear interpolation between the endpoints
    if T == 1:
        return [0.0, hi]
    return [0.0] + [float(np.exp(np.log(lo) + (np.log(hi) - np.log(lo)) * k / (T - 1))) for k in range(T)]


def test_default_values():
    s = build_schedule()
    assert s.T == 4 and s.kappa == 2.0
    np.testing.assert_allclose(s.eta, [0, 0.001, 0.009997, 0.09993, 0.999], atol=5e-6)
    np.testing.assert_allclose(s.eta, geometric_oracle(4, 0.001, 0.999), rtol=1e-12)


def test_single_step():
    assert build_schedule(1).eta == (0.0, 0.999)


def test_alpha_telescopes():
    s = build_schedule()
    assert s.alpha[0] == 0
    assert abs(s.alpha.sum() - s.eta[-1]) < 1e-6
    assert s.alpha_at(1) == s.eta[1]


@pytest.mark.parametrize("kwargs, err", [
    ({"T": 0}, StepCountError),
    ({"eta_max": 1.0}, EtaBoundsError),
    ({"eta_min": 0.0}, EtaBoundsError),
    ({"eta_min": 0.5, "eta_max": 0.4}, ScheduleOrderError),
    ({"kappa": -1.0}, KappaError),
])
def test_distinct_errors(kwargs, err):
    with pytest.raises(err):
        build_schedule(**kwargs)


def test_direct_construction_validated():
    with pytest.raises(ScheduleOrderError):
        DiffusionSchedule(3, (0.0, 0.2, 0.1, 0.5), 2.0)
    with pytest.raises(ScheduleOrderError):
        DiffusionSchedule(2, (0.1, 0.2, 0.5), 2.0)


def test_step_range():
    s = build_schedule()
    with pytest.raises(StepRangeError):
        s.alpha_at(0)
    with pytest.raises(StepRangeError):
        s.eta_at(5)
    assert s.eta_at(0) == 0.0


def test_rebuild_bit_identical():
    assert build_schedule(4, 0.002, 0.99, 1.5) == build_schedule(4, 0.002, 0.99, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(1e-4, 0.4), st.floats(0.5, 0.9999), st.floats(0.1, 5))
def test_invariants_hold(T, lo, hi, kappa):
    s = build_schedule(T, lo, hi, kappa)
    eta = np.array(s.eta)
    assert eta[0] == 0 and np.all(np.diff(eta) > 0) and eta[-1] < 1
    assert abs(s.alpha.sum() - eta[-1]) < 1e-6
    np.testing.assert_allclose(eta, geometric_oracle(T, lo, hi), rtol=1e-12)
