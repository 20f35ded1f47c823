import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowseir.control import (
    ControlPolicy,
    Controller,
    ReopenRule,
    VaccinePolicy,
    apply_restriction,
    binary_theta,
    proportional_theta,
    vaccine_move,
)
from flowseir.errors import ScenarioError
from flowseir.model import simulate


# --- proportional -------------------------------------------------------------

def test_proportional_examples():
    assert proportional_theta(0.0, 10) == 1.0
    assert proportional_theta(1.0, 10) == 0.0
    assert proportional_theta(0.01, 1) == pytest.approx(0.99, rel=1e-15)
    assert proportional_theta(0.01, 2) == pytest.approx(0.9, rel=1e-15)
    assert proportional_theta(1e-4, 4) == pytest.approx(0.9, rel=1e-14)


def test_proportional_clamps_out_of_range_mean():
    assert proportional_theta(-1e-17, 3) == 1.0
    assert proportional_theta(1 + 1e-15, 3) == 0.0


def test_eta_zero_means_no_control():
    assert ControlPolicy.proportional(0).kind == "none"
    with pytest.raises(ScenarioError):
        ControlPolicy("proportional", eta=-1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 100))
def test_proportional_monotone_and_bounded(a, b, eta):
    lo, hi = sorted((a, b))
    t_lo, t_hi = proportional_theta(lo, eta), proportional_theta(hi, eta)
    assert 0.0 <= t_hi <= t_lo <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(0.01, 50), st.floats(0.01, 50))
def test_larger_eta_restricts_more(x_bar, e1, e2):
    lo, hi = sorted((e1, e2))
    assert proportional_theta(x_bar, hi) <= proportional_theta(x_bar, lo) + 1e-15


# --- binary -------------------------------------------------------------------

def _thetas(policy, xbars):
    reopened = False
    out = []
    for k, xb in enumerate(xbars):
        theta, reopened = binary_theta(policy, k, xb, reopened)
        out.append(theta)
    return out


def test_binary_schedule():
    pol = ControlPolicy.binary(2, ReopenRule.threshold(0.001))
    xbars = [0.01, 0.01, 0.0005, 0.01, 0.0005, 0.01]
    # step 2 is the shutdown step, so the low value there is ignored
    assert _thetas(pol, xbars) == [1, 1, 0, 0, 1, 1]


def test_binary_reopen_is_latched():
    pol = ControlPolicy.binary(0, ReopenRule.threshold(0.001))
    assert _thetas(pol, [0.5, 0.0001, 0.9, 0.9]) == [0, 1, 1, 1]


def test_binary_zero_rule():
    pol = ControlPolicy.binary(0, ReopenRule.zero())
    assert _thetas(pol, [0.1, 1e-8, 5e-10]) == [0, 0, 1]


def test_binary_validation():
    with pytest.raises(ScenarioError) as info:
        ControlPolicy("binary", shutdown_step=-1, reopen=ReopenRule.zero())
    assert info.value.field == "control.shutdown_step"
    with pytest.raises(ScenarioError):
        ReopenRule.threshold(0.0)
    with pytest.raises(ScenarioError):
        ControlPolicy("binary", shutdown_step=3)


def test_controller_records_reopen_once():
    ctl = Controller(ControlPolicy.binary(0, ReopenRule.threshold(0.01)))
    s = np.ones(2)
    outs = [ctl(k, s, np.array(x)) for k, x in enumerate([[0.1, 0.1], [0.0, 0.001], [0.0, 0.0]])]
    assert [o.theta for o in outs] == [0.0, 1.0, 1.0]
    assert [o.reopened for o in outs] == [False, True, False]
    assert all(o.vaccine_move is None for o in outs)


# --- restriction --------------------------------------------------------------

def test_apply_restriction_examples():
    g, p = apply_restriction([0.0114], [0.005], 0.9)
    assert g[0] == pytest.approx(0.01026, rel=1e-14)
    assert p[0] == pytest.approx(0.0045, rel=1e-14)
    g, p = apply_restriction([0.0114, 0.002], [0.005, 0.001], 0.0)
    assert np.all(g == 0) and np.all(p == 0)


# --- vaccine ------------------------------------------------------------------

def test_vaccine_examples():
    s = np.array([0.8, 0.6, 1.0, 1.0])
    pol = VaccinePolicy(start_step=500, rate=0.001, s_bar_floor=0.01)
    assert np.allclose(vaccine_move(s, pol, 500), [0.0008, 0.0006, 0.001, 0.001], rtol=1e-14, atol=0)
    assert np.all(vaccine_move(s, pol, 499) == 0)
    low = np.full(4, 0.01)
    assert np.all(vaccine_move(low, pol, 600) == 0)
    assert np.all(vaccine_move(s, None, 600) == 0)


def test_vaccine_policy_validation():
    with pytest.raises(ScenarioError):
        VaccinePolicy(rate=1.5)
    with pytest.raises(ScenarioError):
        VaccinePolicy(start_step=-1)


def test_vaccine_run_conserves_and_records(four_city):
    pol = VaccinePolicy(start_step=50, rate=0.001)
    traj = simulate(four_city, horizon=300, vaccine=pol)
    Y = np.stack([traj.s, traj.e, traj.x, traj.r])
    assert np.max(np.abs(Y.sum(axis=0) - 1)) <= 1e-9
    assert np.all(traj.vaccinated[:50] == 0)
    assert np.all(traj.vaccinated[50:] > 0)
    assert any(ev.kind == "vaccine_start" and ev.step == 50 for ev in traj.events)
    base = simulate(four_city, horizon=300)
    assert np.array_equal(traj.s[:51], base.s[:51])
    assert np.all(traj.r[-1] > base.r[-1])
