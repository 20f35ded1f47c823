import numpy as np
import pytest

from flowseir.model import CompartmentState, Scenario, SpreadParams
from flowseir.network import FlowSchedule
from flowseir.scenario import builtin_four_city


@pytest.fixture
def four_city():
    return builtin_four_city(100.0)


def random_balanced_flows(rng, N, gamma_max=0.1, density=0.6):
    """Balanced flow matrix: weighted directed cycles plus a symmetric part, scaled so max outflow fraction is gamma_max."""
    n = N.size
    F = np.zeros((n, n))
    if n < 2:
        return F
    for _ in range(rng.integers(1, 2 * n + 1)):
        length = rng.integers(2, n + 1)
        nodes = rng.permutation(n)[:length]
        w = rng.uniform(0.1, 1.0)
        for a, b in zip(nodes, np.roll(nodes, -1)):
            F[b, a] += w
    sym = rng.uniform(0, 1, (n, n)) * (rng.uniform(0, 1, (n, n)) < density)
    sym = np.triu(sym, 1)
    F += sym + sym.T
    np.fill_diagonal(F, 0.0)
    gamma = F.sum(axis=0) / N
    if gamma.max() > 0:
        F *= gamma_max * rng.uniform(0.2, 1.0) / gamma.max()
    return F


def random_simplex_state(rng, n, x_cap=0.9):
    rows = []
    while len(rows) < n:
        p = rng.dirichlet(np.ones(4))
        if p[2] <= x_cap:
            rows.append(p)
    arr = np.array(rows).T
    arr[3] = 1.0 - arr[0] - arr[1] - arr[2]
    return CompartmentState(*arr)


def random_scenario(rng, n_max=8, n_min=1, gamma_max=0.1):
    """Scenario satisfying the static and (by construction) the runtime parameter bounds."""
    n = int(rng.integers(n_min, n_max + 1))
    N = rng.uniform(1e4, 1e6, n)
    F = random_balanced_flows(rng, N, gamma_max)
    h = rng.uniform(0.05, 0.5)
    rates = [rng.uniform(0.05, 0.7, n) / h for _ in range(3)]
    gamma = F.sum(axis=0) / N
    # infected travel close to the average keeps p_T near gamma for any state
    p_x = gamma * rng.uniform(0.8, 1.0, n)
    params = SpreadParams(rates[0], rates[1], rates[2], p_x, h)
    return Scenario(N, FlowSchedule(F), params, random_simplex_state(rng, n), tuple(f"n{i}" for i in range(n)))


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; the lines are printed in the terminal summary."""

    def record(number, title, passed, detail):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
