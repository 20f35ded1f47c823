"""Discrete-time networked SEIR dynamics driven by traveler flows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import BINARY, ControlPolicy, Controller, VaccinePolicy
from .errors import ModelViolation, ScenarioError, SimplexDriftError
from .network import (
    DEFAULT_BALANCE_TOL,
    FlowSchedule,
    as_populations,
    check_balance,
    check_k_strong_connectivity,
    normalize_flows,
    outflow_fraction,
)

SIMPLEX_TOL = 1e-9
DRIFT_TOL = 1e-6
BOUND_SLACK = 1e-12
NEG_NUMERATOR_SLACK = 1e-12

COMPARTMENTS = ("s", "e", "x", "r")


def _vec(values, n, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"{name} must have length {n}, got shape {arr.shape}", field=name)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} contains non-finite values", field=name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CompartmentState:
    """Per-node proportions of susceptible, exposed, infected and recovered."""

    s: np.ndarray
    e: np.ndarray
    x: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        n = np.size(self.s)
        for name in COMPARTMENTS:
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))

    @property
    def n(self) -> int:
        return self.s.size

    def as_array(self) -> np.ndarray:
        return np.stack([self.s, self.e, self.x, self.r])

    def simplex_error(self) -> tuple[float, float]:
        """Largest per-node deviation of the compartment sum from 1, and the smallest entry."""
        arr = self.as_array()
        return float(np.max(np.abs(arr.sum(axis=0) - 1.0))), float(arr.min())

    def on_simplex(self, tol: float = SIMPLEX_TOL) -> bool:
        dev, low = self.simplex_error()
        return dev <= tol and low >= -BOUND_SLACK and float(self.as_array().max()) <= 1 + BOUND_SLACK

    def __eq__(self, other):
        if not isinstance(other, CompartmentState):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in COMPARTMENTS)


@dataclass(frozen=True, eq=False)
class SpreadParams:
    """Per-node rates (per unit time) and the global step size ``h``."""

    beta: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    p_x: np.ndarray
    h: float

    @classmethod
    def homogeneous(cls, n, beta, sigma, delta, p_x, h) -> "SpreadParams":
        return cls(*(np.full(n, float(v)) for v in (beta, sigma, delta, p_x)), float(h))

    def __post_init__(self):
        n = np.size(self.beta)
        for name in ("beta", "sigma", "delta", "p_x"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, f"params.{name}"))
        object.__setattr__(self, "h", float(self.h))

    @property
    def n(self) -> int:
        return self.beta.size

    def __eq__(self, other):
        if not isinstance(other, SpreadParams):
            return NotImplemented
        return self.h == other.h and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in ("beta", "sigma", "delta", "p_x")
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    """A full network: populations, (unscaled) flows with a scale factor, rates and initial state.

    ``flows`` is the schedule actually used by the dynamics, i.e. ``base_flows`` times ``xi``.
    """

    N: np.ndarray
    base_flows: FlowSchedule
    params: SpreadParams
    initial: CompartmentState
    labels: tuple[str, ...] = ()
    xi: float = 1.0
    flows: FlowSchedule = field(init=False, repr=False)

    def __post_init__(self):
        N = as_populations(self.N)
        N.setflags(write=False)
        object.__setattr__(self, "N", N)
        n = N.size
        if not isinstance(self.base_flows, FlowSchedule):
            object.__setattr__(self, "base_flows", FlowSchedule(self.base_flows))
        labels = tuple(self.labels) or tuple(str(i) for i in range(n))
        object.__setattr__(self, "labels", labels)
        if not self.xi > 0:
            raise ScenarioError(f"flow scale must be positive, got {self.xi!r}", field="flow.scale")
        for what, size in (
            ("flow matrix", self.base_flows.n),
            ("params", self.params.n),
            ("initial state", self.initial.n),
            ("labels", len(labels)),
        ):
            if size != n:
                raise ScenarioError(f"{what} has {size} nodes but there are {n} populations")
        flows = self.base_flows if self.xi == 1.0 else self.base_flows.scaled(self.xi)
        object.__setattr__(self, "flows", flows)

    @property
    def n(self) -> int:
        return self.N.size

    def with_xi(self, xi: float) -> "Scenario":
        return Scenario(self.N, self.base_flows, self.params, self.initial, self.labels, xi)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            np.array_equal(self.N, other.N)
            and self.base_flows == other.base_flows
            and self.params == other.params
            and self.initial == other.initial
            and self.labels == other.labels
            and self.xi == other.xi
        )


# --------------------------------------------------------------------------
# travel probabilities

def _travel_probabilities(gamma, p_x, s, e, x, r, strict=True, step=None, warnings=None):
    num = gamma - p_x * x
    den = s + e + r
    p_T = np.zeros_like(num)
    np.divide(num, den, out=p_T, where=den > 0)

    bad_neg = num < -NEG_NUMERATOR_SLACK
    bad_empty = (den <= 0) & (num > NEG_NUMERATOR_SLACK)
    bad_high = p_T > 1.0
    if bad_neg.any() or bad_empty.any() or bad_high.any():
        for i in np.flatnonzero(bad_neg | bad_empty | bad_high):
            if bad_neg[i]:
                msg = f"infected travel p_x*x = {p_x[i] * x[i]:.10g} exceeds outflow fraction {gamma[i]:.10g}"
            elif bad_empty[i]:
                msg = f"outflow fraction {gamma[i]:.10g} with no non-infected individuals to travel"
            else:
                msg = f"travel probability {p_T[i]:.10g} exceeds 1"
            if strict:
                raise ModelViolation(msg, node=int(i), step=step)
            if warnings is not None:
                warnings.append((int(i), msg + "; clamped"))
        p_T = np.where(bad_neg | bad_empty, 0.0, np.minimum(p_T, 1.0))
    return np.maximum(p_T, 0.0)


def travel_prob(gamma_i: float, p_x_i: float, s_i: float, e_i: float, x_i: float, r_i: float,
                strict: bool = True) -> float:
    """Probability that a non-infected individual of one node travels this step."""
    out = _travel_probabilities(
        np.array([gamma_i], dtype=float), np.array([p_x_i], dtype=float),
        np.array([s_i]), np.array([e_i]), np.array([x_i]), np.array([r_i]), strict=strict,
    )
    return float(out[0])


# --------------------------------------------------------------------------
# static validation

@dataclass(frozen=True)
class Issue:
    check: str
    message: str
    node: int | None = None
    step: int | None = None
    field: str | None = None
    severity: str = "error"

    def __str__(self):
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.node is not None:
            where.append(f"node {self.node}")
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.severity.upper()} {self.check}{loc}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    def __str__(self):
        lines = [f"validation {'passed' if self.passed else 'FAILED'}"]
        lines += [f"  {i}" for i in self.issues]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def validate_params(scenario: Scenario, horizon: int = 1, balance_tol: float = DEFAULT_BALANCE_TOL,
                    max_k: int = 10) -> ValidationReport:
    """Static checks of rate bounds, flow balance, outflow range and connectivity.

    Bounds involving the travel probability use the outflow fraction as a
    stand-in; the exact state-dependent bounds are enforced in :func:`step`.
    """
    report = ValidationReport()
    add = report.issues.append
    p = scenario.params
    h = p.h
    labels = scenario.labels

    if not h > 0:
        add(Issue("step-size", f"h must be positive, got {h:.10g}", field="params.h"))
    for name in ("beta", "sigma", "delta"):
        rate = getattr(p, name)
        for i in np.flatnonzero(~(rate > 0)):
            add(Issue("rate-positive", f"{name} = {rate[i]:.10g} must be positive", node=int(i),
                      field=f"params.{name}"))
        hr = h * rate
        for i in np.flatnonzero((hr > 1.0) & (rate > 0)):
            add(Issue("rate-step-bound", f"h*{name} = {hr[i]:.10g} > 1 at {labels[i]}", node=int(i),
                      field=f"params.{name}"))
    for i in np.flatnonzero((p.p_x < 0) | (p.p_x > 1)):
        add(Issue("probability-range", f"p_x = {p.p_x[i]:.10g} outside [0, 1]", node=int(i), field="params.p_x"))

    for k, F in scenario.flows.matrices():
        where = "flow.matrix" if k is None else f"flow.overrides[{k}]"
        try:
            gamma = outflow_fraction(F, scenario.N)
        except ScenarioError as exc:
            add(Issue("outflow-range", str(exc), step=k, field=where))
            continue
        for name in ("beta", "sigma", "delta"):
            bound = h * (getattr(p, name) + gamma)
            for i in np.flatnonzero(bound > 1.0 + BOUND_SLACK):
                add(Issue("travel-step-bound",
                          f"h*({name} + gamma) = {bound[i]:.10g} > 1 at {labels[i]}",
                          node=int(i), step=k, field=f"params.{name}"))
        bal = check_balance(F, balance_tol)
        if not bal.passed:
            add(Issue("flow-balance",
                      f"inflow/outflow residual {bal.max_residual:.10g} exceeds {balance_tol:.10g} "
                      f"(worst node {labels[bal.worst_node]})",
                      node=bal.worst_node, step=k, field=where))

    window = max(1, min(horizon, max_k))
    conn = check_k_strong_connectivity(scenario.flows, max(horizon, window), window)
    if not conn.connected:
        add(Issue("connectivity", f"flow graph is not K-strongly connected for any K <= {window}; "
                  "susceptible consensus is not guaranteed", severity="warning"))

    st = scenario.initial
    dev, low = st.simplex_error()
    if dev > SIMPLEX_TOL or low < 0 or float(st.as_array().max()) > 1:
        add(Issue("initial-simplex", f"initial state off the simplex (sum deviation {dev:.10g}, min {low:.10g})",
                  field="initial"))

    report.notes.append("travel-probability bounds h*(beta*x + p_T), h*(sigma + p_T), h*(delta + p_x) "
                        "are re-checked every step at runtime")
    return report


# --------------------------------------------------------------------------
# dynamics

class _FlowTerms:
    """Quantities derived from one flow matrix; cached per matrix during a run."""

    __slots__ = ("gamma", "inflow_t", "_theta", "_restricted")

    def __init__(self, F, N):
        self.gamma = outflow_fraction(F, N)
        W = normalize_flows(F)
        # inflow[i, j] = (N_j / N_i) * w_ij, stored transposed for row-vector products
        self.inflow_t = np.ascontiguousarray((W * N[None, :] / N[:, None]).T)
        self._theta = None
        self._restricted = None

    def restricted(self, theta: float, params: "SpreadParams"):
        """``(gamma_eff, p_x_eff, b_x, b_x_ok)`` for restriction ``theta``; reused while theta is unchanged.

        ``b_x = h*(delta + p_x_eff)`` depends on theta alone, so its bound is checked once here.
        """
        if theta != self._theta:
            gamma_eff = theta * self.gamma
            # a node that sends nobody out cannot send infected travellers either
            p_x_eff = np.where(gamma_eff > 0, theta * params.p_x, 0.0)
            b_x = params.h * (params.delta + p_x_eff)
            self._restricted = (gamma_eff, p_x_eff, b_x, bool(b_x.max() <= 1.0 + BOUND_SLACK))
            self._theta = theta
        return self._restricted


_min = np.minimum.reduce
_max = np.maximum.reduce

_BOUND_LABELS = ("h*(beta*x + p_T)", "h*(sigma + p_T)", "h*(delta + p_x)")


def _bound_violation(h, beta_x, sigma, p_T, b_x):
    bounds = np.stack((h * (beta_x + p_T), h * (sigma + p_T), b_x))
    which, i = np.argwhere(bounds > 1.0 + BOUND_SLACK)[0]
    return int(i), f"{_BOUND_LABELS[which]} = {bounds[which, i]:.10g} > 1"


def _advance(Y, params, terms, theta, vmove, step, strict, warnings):
    """One synchronous update of the stacked state ``Y = [s, e, x, r]`` (shape ``(4, n)``)."""
    s, e, x, r = Y
    gamma_eff, p_x_eff, b_x, b_x_ok = terms.restricted(theta, params)
    num = gamma_eff - p_x_eff * x
    den = s + e + r
    if _min(num) >= 0.0 and _min(den) > 0.0:
        p_T = num / den
        if _max(p_T) > 1.0:
            p_T = _travel_probabilities(gamma_eff, p_x_eff, s, e, x, r, strict, step, warnings)
    else:
        p_T = _travel_probabilities(gamma_eff, p_x_eff, s, e, x, r, strict, step, warnings)

    h = params.h
    beta_x = params.beta * x
    sigma = params.sigma
    # both p_T bounds at once: h * (p_T + max(beta*x, sigma)) <= 1
    if h * _max(p_T + np.maximum(beta_x, sigma)) > 1.0 + BOUND_SLACK or not b_x_ok:
        i, msg = _bound_violation(h, beta_x, sigma, p_T, b_x)
        if strict:
            raise ModelViolation(msg, node=i, step=step)
        warnings.append((i, msg))

    travel = np.empty_like(Y)
    travel[0] = travel[1] = travel[3] = p_T
    travel[2] = p_x_eff
    travel *= Y
    infection = beta_x * s
    progression = sigma * e
    recovery = params.delta * x
    change = travel @ terms.inflow_t
    change -= travel
    change[0] -= infection
    change[1] += infection - progression
    change[2] += progression - recovery
    change[3] += recovery
    Y1 = Y + h * change

    v = None
    if vmove is not None:
        v = np.minimum(vmove, np.maximum(Y1[0], 0.0))
        Y1[0] -= v
        Y1[3] += v

    drift = np.abs(np.add.reduce(Y1) - 1.0)
    if _max(drift) > DRIFT_TOL:
        i = int(np.argmax(drift))
        raise SimplexDriftError(f"compartments sum to {1.0 + drift[i]:.10g}", node=i, step=step)
    if _min(Y1, axis=None) < -SIMPLEX_TOL:
        i = int(np.argmin(Y1.min(axis=0)))
        raise SimplexDriftError(f"negative compartment {Y1[:, i].min():.10g}", node=i, step=step)
    return Y1, gamma_eff, v


def step(state: CompartmentState, params: SpreadParams, F_k, N, theta: float = 1.0,
         vaccine_move=None, strict: bool = True, k: int | None = None) -> CompartmentState:
    """Advance one step of the networked SEIR map with restriction ``theta``.

    ``vaccine_move`` (per node, at most the current ``s``) is moved from
    susceptible to recovered after the epidemic update.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta!r}")
    N = np.asarray(N, dtype=float)
    if vaccine_move is not None:
        vaccine_move = np.asarray(vaccine_move, dtype=float)
        if np.any(vaccine_move < 0) or np.any(vaccine_move > state.s):
            raise ValueError("vaccine_move must lie in [0, s] at every node")
    terms = _FlowTerms(np.asarray(F_k, dtype=float), N)
    Y1, _, _ = _advance(state.as_array(), params, terms, theta, vaccine_move, k, strict, [])
    return CompartmentState(*Y1)


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    message: str


@dataclass(frozen=True)
class StopRule:
    """Stop once the mean infected proportion stays below ``threshold`` for ``consecutive`` states."""

    threshold: float = 1e-4
    consecutive: int = 1


@dataclass(eq=False)
class Trajectory:
    """Recorded run: ``s, e, x, r`` have shape ``(horizon + 1, n)``; ``thetas`` has length ``horizon``."""

    s: np.ndarray
    e: np.ndarray
    x: np.ndarray
    r: np.ndarray
    thetas: np.ndarray
    gammas_effective: np.ndarray
    vaccinated: np.ndarray
    populations: np.ndarray
    labels: tuple[str, ...]
    events: list[Event] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.thetas.size

    @property
    def n(self) -> int:
        return self.s.shape[1]

    def state(self, k: int) -> CompartmentState:
        return CompartmentState(self.s[k], self.e[k], self.x[k], self.r[k])

    @property
    def states(self) -> list[CompartmentState]:
        return [self.state(k) for k in range(self.horizon + 1)]

    @property
    def final(self) -> CompartmentState:
        return self.state(self.horizon)

    def x_bar(self) -> np.ndarray:
        return self.x.mean(axis=1)

    def segment(self, start: int, stop: int) -> "Trajectory":
        """Sub-trajectory over steps ``start..stop`` (states inclusive of both ends)."""
        return Trajectory(
            self.s[start:stop + 1], self.e[start:stop + 1], self.x[start:stop + 1], self.r[start:stop + 1],
            self.thetas[start:stop], self.gammas_effective[start:stop], self.vaccinated[start:stop],
            self.populations, self.labels,
            [ev for ev in self.events if start <= ev.step < stop],
        )

    def same_as(self, other: "Trajectory") -> bool:
        """Bit-identical comparison of every recorded array and the event log."""
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("s", "e", "x", "r", "thetas", "gammas_effective", "vaccinated"))
            and self.events == other.events
        )


def simulate(scenario: Scenario, policy: ControlPolicy | None = None, horizon: int = 1000,
             vaccine: VaccinePolicy | None = None, stop: StopRule | None = None,
             strict: bool = True, validate: bool = True) -> Trajectory:
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if validate:
        report = validate_params(scenario, horizon)
        if not report.passed:
            raise ScenarioError("scenario failed validation:\n" + str(report), report=report)

    n = scenario.n
    params = scenario.params
    controller = Controller(policy, vaccine)
    Ys = np.empty((horizon + 1, 4, n))
    thetas = np.empty(horizon)
    gammas = np.empty((horizon, n))
    vacc = np.zeros((horizon, n))
    events: list[Event] = []

    Y = scenario.initial.as_array()
    Ys[0] = Y

    cache: dict[int, _FlowTerms] = {}
    below = 1 if stop is not None and Y[2].mean() < stop.threshold else 0
    vaccinating = False
    prev_theta = 1.0
    taken = horizon
    for k in range(horizon):
        if stop is not None and below >= stop.consecutive:
            taken = k
            break
        F = scenario.flows.at(k)
        terms = cache.get(id(F))
        if terms is None:
            terms = cache[id(F)] = _FlowTerms(F, scenario.N)

        out = controller(k, Y[0], Y[2])
        theta = out.theta
        if controller.policy.kind == BINARY:
            if theta == 0.0 and prev_theta != 0.0:
                events.append(Event(k, "shutdown", "travel closed"))
            if out.reopened:
                events.append(Event(k, "reopen", f"travel reopened at mean infected {Y[2].mean():.10g}"))
        prev_theta = theta
        active = out.vaccine_move is not None and bool(out.vaccine_move.any())
        if active != vaccinating:
            events.append(Event(k, "vaccine_start" if active else "vaccine_stop",
                                "roll-out active" if active else "roll-out stopped"))
            vaccinating = active

        warnings: list[tuple[int, str]] = []
        Y, gamma_eff, applied = _advance(Y, params, terms, theta, out.vaccine_move if active else None,
                                         k, strict, warnings)
        for node, msg in warnings:
            events.append(Event(k, "warning", f"{scenario.labels[node]}: {msg}"))

        Ys[k + 1] = Y
        thetas[k] = theta
        gammas[k] = gamma_eff
        if applied is not None:
            vacc[k] = applied
        if stop is not None:
            below = below + 1 if Y[2].mean() < stop.threshold else 0

    if taken < horizon:
        Ys = Ys[:taken + 1]
        thetas, gammas, vacc = thetas[:taken], gammas[:taken], vacc[:taken]

    S, E, X, R = (np.ascontiguousarray(Ys[:, c]) for c in range(4))
    return Trajectory(S, E, X, R, thetas, gammas, vacc, scenario.N, scenario.labels, events)
