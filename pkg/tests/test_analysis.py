import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_balanced_flows, random_scenario
from flowseir.analysis import (
    aggregate_totals,
    build_consensus_matrix,
    check_row_stochastic,
    consensus_error,
    consensus_trace,
    detect_extinction,
    equilibrium_report,
    infection_burden,
    mean_recovered,
)
from flowseir.control import ControlPolicy, VaccinePolicy
from flowseir.model import CompartmentState, Scenario, SpreadParams, simulate
from flowseir.network import FlowSchedule, normalize_flows, outflow_fraction


def _L(F, N, h=0.14):
    return build_consensus_matrix(h, outflow_fraction(F, N), normalize_flows(F), N)


# --- consensus matrix ---------------------------------------------------------

def test_identity_when_nobody_travels():
    L = _L(np.zeros((3, 3)), np.ones(3))
    assert np.array_equal(L, np.eye(3))
    rep = check_row_stochastic(L)
    assert rep.passed and rep.min_positive_entry == 1.0


def test_four_city_rows_sum_to_one(four_city):
    L = _L(four_city.flows.default, four_city.N)
    assert np.max(np.abs(L @ np.ones(4) - 1)) < 1e-12
    assert check_row_stochastic(L).passed


def test_two_node_hand_values():
    N = np.array([100.0, 200.0])
    F = np.array([[0, 10.0], [10.0, 0]])
    L = _L(F, N, h=0.5)
    # gamma = (0.1, 0.05); off-diagonals (N_j/N_i) h w_ij gamma_j
    expected = np.array([[1 - 0.05, 0.5 * 2 * 0.05], [0.5 * 0.5 * 0.1, 1 - 0.025]])
    assert np.allclose(L, expected, rtol=1e-15, atol=0)


def test_two_node_unequal_populations():
    f = 20.0
    N = np.array([1000.0, 500.0])
    L = _L(np.array([[0, f], [f, 0]]), N, h=0.14)
    assert L[0, 0] == pytest.approx(1 - 0.14 * f / 1000, rel=1e-15)
    assert L[0, 1] == pytest.approx(0.14 * f / 1000, rel=1e-15)
    assert np.allclose(L.sum(axis=1), 1.0, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_diagonal_positive_when_step_small(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    N = rng.uniform(1e3, 1e7, n)
    F = random_balanced_flows(rng, N, gamma_max=0.9)
    h = rng.uniform(0.01, 1.0)
    assert np.all(np.diag(_L(F, N, h)) > 0)


def test_consensus_trace_under_control(four_city):
    traj = simulate(four_city, ControlPolicy.proportional(10), horizon=2000)
    trace = consensus_trace(four_city, traj)
    assert trace.max_deviation.shape == (2000,)
    assert trace.worst_deviation < 1e-12
    assert np.all(trace.min_positive_entry > 0)


def test_unbalanced_network_fails():
    F = np.array([[0, 5.0], [3.0, 0]])
    rep = check_row_stochastic(_L(F, np.array([100.0, 100.0]), h=1.0))
    assert not rep.passed
    assert rep.max_deviation == pytest.approx(0.02, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_constant_vector_is_fixed(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 17))
    N = rng.uniform(1e3, 1e7, n)
    L = _L(random_balanced_flows(rng, N, gamma_max=0.9), N, h=rng.uniform(0.01, 1.0))
    c = rng.uniform(0, 1)
    assert np.max(np.abs(L @ np.full(n, c) - c)) < 1e-12


# --- aggregates ---------------------------------------------------------------

def test_healthy_aggregates():
    sc = random_scenario(np.random.default_rng(5), n_min=3)
    healthy = Scenario(sc.N, sc.base_flows, sc.params,
                       CompartmentState(np.ones(sc.n), np.zeros(sc.n), np.zeros(sc.n), np.zeros(sc.n)))
    rep = aggregate_totals(simulate(healthy, horizon=50), sc.params)
    assert np.allclose(rep.summed[:, 0], sc.n, rtol=0, atol=1e-12)
    assert np.all(rep.summed[:, 1:] == 0)


def test_single_node_aggregates_exact():
    params = SpreadParams.homogeneous(1, 0.5, 0.19, 0.34, 0.0, 0.14)
    sc = Scenario(np.array([1e5]), FlowSchedule(np.zeros((1, 1))), params,
                  CompartmentState([0.99], [0.005], [0.005], [0.0]))
    rep = aggregate_totals(simulate(sc, horizon=400), params)
    assert rep.max_discrepancy < 1e-14


def test_four_city_aggregates_agree(four_city):
    rep = aggregate_totals(simulate(four_city, horizon=2000), four_city.params)
    assert rep.max_discrepancy < 1e-9


def test_unweighted_sum_misses_with_unequal_populations(four_city):
    traj = simulate(four_city, horizon=2000)
    rep = aggregate_totals(traj, four_city.params, weighting="uniform")
    assert rep.max_discrepancy > 1e-6


# --- extinction and consensus -------------------------------------------------

def test_extinction_examples(four_city):
    clean = Scenario(four_city.N, four_city.base_flows, four_city.params,
                     CompartmentState(np.ones(4), np.zeros(4), np.zeros(4), np.zeros(4)))
    assert detect_extinction(simulate(clean, horizon=5)) == 0
    traj = simulate(four_city, horizon=3000)
    ext = detect_extinction(traj)
    assert ext is not None and traj.x_bar()[ext] <= 1e-4 < traj.x_bar()[ext - 1]
    with pytest.raises(ValueError):
        detect_extinction(traj, 0.0)


def test_consensus_error_examples():
    assert consensus_error(CompartmentState([0.3] * 4, [0] * 4, [0] * 4, [0.7] * 4)) == 0.0
    st2 = CompartmentState([0.2, 0.4], [0, 0], [0, 0], [0.8, 0.6])
    assert consensus_error(st2) == pytest.approx(0.1, rel=1e-15)


# --- burden -------------------------------------------------------------------

def test_burden_zero_without_infection(four_city):
    clean = Scenario(four_city.N, four_city.base_flows, four_city.params,
                     CompartmentState(np.ones(4), np.zeros(4), np.zeros(4), np.zeros(4)))
    assert infection_burden(simulate(clean, horizon=50), 0.34, 0.14) == 0.0


def test_burden_is_additive_over_segments(four_city):
    traj = simulate(four_city, horizon=1500)
    whole = infection_burden(traj, 0.34, 0.14)
    parts = sum(infection_burden(traj.segment(a, b), 0.34, 0.14) for a, b in [(0, 400), (400, 401), (401, 1500)])
    assert parts == pytest.approx(whole, rel=1e-12)


def test_single_node_burden_matches_recovered():
    params = SpreadParams.homogeneous(1, 0.5, 0.19, 0.34, 0.0, 0.14)
    sc = Scenario(np.array([1e5]), FlowSchedule(np.zeros((1, 1))), params,
                  CompartmentState([0.99], [0.005], [0.005], [0.0]))
    traj = simulate(sc, horizon=500)
    assert infection_burden(traj, 0.34, 0.14) == pytest.approx(mean_recovered(traj.final), abs=1e-14)


def test_vaccine_burden_below_recovered(four_city):
    traj = simulate(four_city, horizon=4000, vaccine=VaccinePolicy())
    assert infection_burden(traj, 0.34, 0.14) < mean_recovered(traj.final)


def test_equilibrium_report_fields(four_city):
    traj = simulate(four_city, horizon=3000)
    rep = equilibrium_report(traj, four_city.params)
    d = rep.as_dict()
    assert list(d) == ["extinction_step", "alpha", "consensus_error", "burden", "r_bar_final",
                       "peak_x_bar", "peak_step"]
    assert rep.alpha == pytest.approx(traj.final.s.mean())
    assert 0 < rep.peak_step < rep.extinction_step
