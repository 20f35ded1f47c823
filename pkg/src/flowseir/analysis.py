"""Checks of the model's theoretical claims on recorded trajectories.

Network-level totals and averages of infection burden are population
weighted: ``sum_i (N_i / mean(N)) q_i``. Travel moves people, not
proportions, so only the weighted totals are conserved by the flow terms.
With equal populations the weights are all one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import ControlPolicy, VaccinePolicy
from .model import CompartmentState, Scenario, SpreadParams, StopRule, Trajectory, simulate
from .network import normalize_flows

DEFAULT_EXTINCTION = 1e-4
ROW_SUM_TOL = 1e-12


def _weights(traj: Trajectory, weighting: str) -> np.ndarray:
    if weighting == "population":
        N = np.asarray(traj.populations, dtype=float)
        return N / N.mean()
    if weighting == "uniform":
        return np.ones(traj.n)
    raise ValueError(f"unknown weighting {weighting!r}")


# --------------------------------------------------------------------------
# consensus matrix

def build_consensus_matrix(h: float, gamma, W, N) -> np.ndarray:
    """Transition matrix of the susceptible dynamics once infection is gone."""
    gamma = np.asarray(gamma, dtype=float)
    W = np.asarray(W, dtype=float)
    N = np.asarray(N, dtype=float)
    n = N.size
    if gamma.shape != (n,) or W.shape != (n, n):
        raise ValueError(f"dimension mismatch: gamma {gamma.shape}, W {W.shape}, N {N.shape}")
    L = h * (W * (gamma * N)[None, :]) / N[:, None]
    L[np.diag_indices(n)] = 1.0 - h * gamma
    return L


@dataclass(frozen=True)
class RowStochasticReport:
    passed: bool
    max_deviation: float
    min_entry: float
    min_positive_entry: float


def check_row_stochastic(L, tol: float = ROW_SUM_TOL) -> RowStochasticReport:
    L = np.asarray(L, dtype=float)
    dev = float(np.max(np.abs(L.sum(axis=1) - 1.0)))
    low = float(L.min())
    pos = L[L > 0]
    min_pos = float(pos.min()) if pos.size else 0.0
    return RowStochasticReport(dev <= tol and low >= -tol, dev, low, min_pos)


@dataclass(frozen=True)
class ConsensusTrace:
    """Per-step row-sum deviation and smallest positive entry of the consensus matrix."""

    max_deviation: np.ndarray = field(repr=False)
    min_positive_entry: np.ndarray = field(repr=False)

    @property
    def worst_deviation(self) -> float:
        return float(self.max_deviation.max()) if self.max_deviation.size else 0.0


def consensus_trace(scenario: Scenario, traj: Trajectory) -> ConsensusTrace:
    """Build each recorded step's consensus matrix from the flows actually used and check it.

    The smallest positive entry is reported rather than asserted against a
    uniform lower bound, since no such bound is fixed a priori.
    """
    weights = {}
    dev = np.empty(traj.horizon)
    low = np.empty(traj.horizon)
    for k in range(traj.horizon):
        F = scenario.flows.at(k)
        if id(F) not in weights:
            weights[id(F)] = normalize_flows(F)
        L = build_consensus_matrix(scenario.params.h, traj.gammas_effective[k], weights[id(F)], scenario.N)
        rep = check_row_stochastic(L)
        dev[k], low[k] = rep.max_deviation, rep.min_positive_entry
    return ConsensusTrace(dev, low)


# --------------------------------------------------------------------------
# aggregate dynamics

@dataclass(frozen=True)
class AggregateReport:
    """``summed`` and ``recursed`` have shape ``(horizon + 1, 3)`` for (S, E, X)."""

    summed: np.ndarray = field(repr=False)
    recursed: np.ndarray = field(repr=False)
    max_discrepancy: float


def aggregate_totals(traj: Trajectory, params: SpreadParams, weighting: str = "population") -> AggregateReport:
    """Network totals of S, E, X two ways: summed from states and propagated by the aggregate recursion.

    The recursion contains only the local epidemic terms (and vaccination);
    every travel term must cancel for the two to agree.
    """
    w = _weights(traj, weighting)
    S, E, X = traj.s @ w, traj.e @ w, traj.x @ w
    summed = np.column_stack((S, E, X))

    h = params.h
    s, e, x = traj.s[:-1], traj.e[:-1], traj.x[:-1]
    infection = h * (params.beta * x * s) @ w
    progression = h * (params.sigma * e) @ w
    recovery = h * (params.delta * x) @ w
    vaccinated = traj.vaccinated @ w

    dS = -infection - vaccinated
    dE = infection - progression
    dX = progression - recovery
    recursed = np.empty_like(summed)
    recursed[0] = summed[0]
    recursed[1:] = summed[0] + np.cumsum(np.column_stack((dS, dE, dX)), axis=0)
    return AggregateReport(summed, recursed, float(np.max(np.abs(summed - recursed))) if summed.size else 0.0)


# --------------------------------------------------------------------------
# extinction, consensus, burden

def detect_extinction(traj: Trajectory, threshold: float = DEFAULT_EXTINCTION) -> int | None:
    """First step at which the mean infected proportion is at or below ``threshold``."""
    if not threshold > 0:
        raise ValueError(f"extinction threshold must be positive, got {threshold!r}")
    hits = np.flatnonzero(traj.x_bar() <= threshold)
    return int(hits[0]) if hits.size else None


def consensus_error(state: CompartmentState) -> float:
    s = state.s
    return float(np.max(np.abs(s - s.mean())))


def infection_burden(traj: Trajectory, delta, h: float, weighting: str = "population") -> float:
    """Recovered mass produced by infection: ``h * sum_k mean_i(delta_i x_i^k)`` over the recorded steps.

    The last recorded state is excluded since its recoveries land after the
    horizon. Summing over steps ``0..horizon-1`` makes the burden of a
    trajectory equal the sum over consecutive segments.
    """
    w = _weights(traj, weighting)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (traj.n,))
    per_step = (traj.x[:-1] * delta) @ w / traj.n
    return float(h * per_step.sum())


def mean_recovered(state: CompartmentState) -> float:
    return float(state.r.mean())


@dataclass(frozen=True)
class EquilibriumReport:
    extinction_step: int | None
    alpha: float
    consensus_error: float
    burden: float
    r_bar_final: float
    peak_x_bar: float
    peak_step: int

    def as_dict(self) -> dict:
        return {
            "extinction_step": self.extinction_step,
            "alpha": self.alpha,
            "consensus_error": self.consensus_error,
            "burden": self.burden,
            "r_bar_final": self.r_bar_final,
            "peak_x_bar": self.peak_x_bar,
            "peak_step": self.peak_step,
        }


def equilibrium_report(traj: Trajectory, params: SpreadParams,
                       threshold: float = DEFAULT_EXTINCTION) -> EquilibriumReport:
    final = traj.final
    x_bar = traj.x_bar()
    peak = int(np.argmax(x_bar))
    return EquilibriumReport(
        extinction_step=detect_extinction(traj, threshold),
        alpha=float(final.s.mean()),
        consensus_error=consensus_error(final),
        burden=infection_burden(traj, params.delta, params.h),
        r_bar_final=mean_recovered(final),
        peak_x_bar=float(x_bar[peak]),
        peak_step=peak,
    )


def run_past_extinction(scenario: Scenario, policy: ControlPolicy | None = None,
                        vaccine: VaccinePolicy | None = None, threshold: float = DEFAULT_EXTINCTION,
                        factor: float = 10.0, max_steps: int = 1_000_000,
                        strict: bool = True) -> tuple[Trajectory, int | None]:
    """Simulate until extinction, then keep going for ``factor`` times that many steps.

    Returns the trajectory and the extinction step (``None`` if ``max_steps``
    passed without extinction, in which case the trajectory stops there).
    """
    probe = simulate(scenario, policy, max_steps, vaccine, StopRule(threshold, 1), strict=strict)
    ext = detect_extinction(probe, threshold)
    if ext is None:
        return probe, None
    total = min(max_steps, ext + int(np.ceil(factor * ext)))
    return simulate(scenario, policy, total, vaccine, strict=strict, validate=False), ext
