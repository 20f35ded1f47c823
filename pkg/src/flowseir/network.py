"""Traveler flows between sub-populations.

Matrix convention used throughout the package: ``F[i, j]`` is the number of
individuals travelling from node ``j`` into node ``i`` during one step, so
column ``j`` holds everything leaving ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ScenarioError

EDGE_EPS = 1e-12
DEFAULT_BALANCE_TOL = 1e-6
GAMMA_SLACK = 1e-12


def as_populations(N) -> np.ndarray:
    pop = np.asarray(N, dtype=float)
    if pop.ndim != 1 or pop.size < 1:
        raise ScenarioError("population vector must be 1-d and non-empty")
    bad = np.flatnonzero(~(pop > 0) | ~np.isfinite(pop))
    if bad.size:
        raise ScenarioError(f"population of node {int(bad[0])} must be positive, got {pop[bad[0]]:.10g}")
    return pop


def as_flow_matrix(F, n: int | None = None) -> np.ndarray:
    """Coerce ``F`` to a float matrix and enforce the structural invariants."""
    mat = np.array(F, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ScenarioError(f"flow matrix must be square, got shape {mat.shape}")
    if n is not None and mat.shape[0] != n:
        raise ScenarioError(f"flow matrix is {mat.shape[0]}x{mat.shape[0]} but there are {n} nodes")
    if not np.all(np.isfinite(mat)):
        raise ScenarioError("flow matrix contains non-finite entries")
    if np.any(mat < 0):
        i, j = np.argwhere(mat < 0)[0]
        raise ScenarioError(f"negative flow F[{i}][{j}] = {mat[i, j]:.10g}")
    if np.any(np.diag(mat) != 0):
        i = int(np.flatnonzero(np.diag(mat))[0])
        raise ScenarioError(f"self-flow F[{i}][{i}] must be zero")
    mat.setflags(write=False)
    return mat


def outflow_fraction(F, N) -> np.ndarray:
    """Fraction of each node's population leaving per step."""
    F = np.asarray(F, dtype=float)
    N = np.asarray(N, dtype=float)
    if F.shape != (N.size, N.size):
        raise ScenarioError(f"flow matrix shape {F.shape} does not match {N.size} populations")
    # diagonal is zero by invariant, so the plain column sum is the outflow
    gamma = F.sum(axis=0) / N
    over = np.flatnonzero(gamma > 1.0 + GAMMA_SLACK)
    if over.size:
        j = int(over[0])
        raise ScenarioError(f"outflow of node {j} exceeds its population (gamma = {gamma[j]:.10g})")
    return np.minimum(gamma, 1.0)


def normalize_flows(F) -> np.ndarray:
    """Routing weights: column ``j`` is the destination distribution of travellers from ``j``.

    Columns of nodes with no outflow are left at zero.
    """
    F = np.asarray(F, dtype=float)
    out = F.sum(axis=0)
    W = np.zeros_like(F)
    np.divide(F, out, out=W, where=out > 0)
    return W


def flows_from_weights(gamma, W, N) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    W = np.asarray(W, dtype=float)
    N = np.asarray(N, dtype=float)
    n = N.size
    if gamma.shape != (n,) or W.shape != (n, n):
        raise ScenarioError(f"dimension mismatch: gamma {gamma.shape}, W {W.shape}, N {N.shape}")
    return W * (gamma * N)[None, :]


@dataclass(frozen=True)
class BalanceReport:
    passed: bool
    max_residual: float
    worst_node: int
    residuals: np.ndarray = field(repr=False)


def check_balance(F, tol: float = DEFAULT_BALANCE_TOL) -> BalanceReport:
    """Compare total inflow and total outflow at every node."""
    F = np.asarray(F, dtype=float)
    residuals = F.sum(axis=1) - F.sum(axis=0)
    mag = np.abs(residuals)
    worst = int(np.argmax(mag)) if mag.size else 0
    max_res = float(mag[worst]) if mag.size else 0.0
    return BalanceReport(max_res <= tol, max_res, worst, residuals)


class FlowSchedule:
    """Per-step flow matrices: a default plus sparse per-step overrides."""

    def __init__(self, default, overrides: Mapping[int, object] | None = None):
        self.default = as_flow_matrix(default)
        n = self.default.shape[0]
        self.overrides = {}
        for k in sorted(overrides or {}):
            if int(k) != k or k < 0:
                raise ScenarioError(f"override step must be a non-negative integer, got {k!r}")
            self.overrides[int(k)] = as_flow_matrix(overrides[k], n)

    @property
    def n(self) -> int:
        return self.default.shape[0]

    def at(self, k: int) -> np.ndarray:
        return self.overrides.get(k, self.default)

    def matrices(self):
        """Yield ``(step, matrix)`` for every distinct matrix; the default has step ``None``."""
        yield None, self.default
        yield from self.overrides.items()

    def scaled(self, c: float) -> "FlowSchedule":
        return FlowSchedule(self.default * c, {k: m * c for k, m in self.overrides.items()})

    def is_static(self) -> bool:
        return not self.overrides

    def __eq__(self, other):
        if not isinstance(other, FlowSchedule):
            return NotImplemented
        return (
            np.array_equal(self.default, other.default)
            and self.overrides.keys() == other.overrides.keys()
            and all(np.array_equal(m, other.overrides[k]) for k, m in self.overrides.items())
        )

    def __repr__(self):
        return f"FlowSchedule(n={self.n}, overrides={sorted(self.overrides)})"


@dataclass(frozen=True)
class ConnectivityReport:
    k_bound: int | None
    window_results: tuple[bool, ...]

    @property
    def connected(self) -> bool:
        return self.k_bound is not None


def _strongly_connected(adj: np.ndarray) -> bool:
    if adj.shape[0] <= 1:
        return True
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    return ncomp == 1


def check_k_strong_connectivity(schedule: FlowSchedule, horizon: int, max_k: int) -> ConnectivityReport:
    """Smallest window length K for which every K-step edge union is strongly connected.

    Edges are the positive routing weights of each step's flow matrix.
    """
    if max_k < 1 or horizon < max_k:
        raise ValueError(f"need horizon >= max_k >= 1, got horizon={horizon}, max_k={max_k}")
    n = schedule.n

    def edges(F):
        return normalize_flows(F) > EDGE_EPS

    if schedule.is_static():
        ok = _strongly_connected(edges(schedule.default))
        if ok:
            return ConnectivityReport(1, (True,) * horizon)
        return ConnectivityReport(None, (False,) * (horizon - max_k + 1))

    base = edges(schedule.default)
    base_ok = _strongly_connected(base)
    over_steps = np.zeros(horizon + 1, dtype=np.int64)
    for k in range(horizon):
        over_steps[k + 1] = over_steps[k] + (k in schedule.overrides)

    def step_edges(k):
        return (edges(schedule.overrides[k]) if k in schedule.overrides else base).astype(np.int64)

    cache = {}

    def window_results(K):
        # sliding edge counts over steps [k, k + K)
        counts = sum(step_edges(k) for k in range(K))
        out = []
        for k in range(horizon - K + 1):
            if k:
                counts = counts - step_edges(k - 1) + step_edges(k + K - 1)
            # a superset of a strongly connected edge set is strongly connected
            if base_ok and over_steps[k + K] - over_steps[k] < K:
                out.append(True)
                continue
            union = counts > 0
            key = union.tobytes()
            if key not in cache:
                cache[key] = _strongly_connected(union)
            out.append(cache[key])
        return tuple(out)

    results = ()
    for K in range(1, max_k + 1):
        results = window_results(K)
        if all(results):
            return ConnectivityReport(K, results)
    return ConnectivityReport(None, results)
