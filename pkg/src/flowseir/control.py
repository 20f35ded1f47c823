"""Flow-restriction controllers and the vaccine roll-out heuristic.

The restriction is a single scalar ``theta`` in [0, 1] per step that scales
every node's outflow fraction and infected-travel probability alike; a common
factor keeps balanced flows balanced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScenarioError

NONE = "none"
PROPORTIONAL = "proportional"
BINARY = "binary"

THRESHOLD = "threshold"
ZERO = "zero"
DEFAULT_ZERO_EPS = 1e-9


@dataclass(frozen=True)
class ReopenRule:
    kind: str = THRESHOLD
    value: float = 1e-3

    def __post_init__(self):
        if self.kind not in (THRESHOLD, ZERO):
            raise ScenarioError(f"unknown reopen rule {self.kind!r}", field="control.reopen.rule")
        if not 0 < self.value < 1:
            raise ScenarioError(f"reopen level must be in (0, 1), got {self.value!r}", field="control.reopen.value")

    @classmethod
    def threshold(cls, tau: float) -> "ReopenRule":
        return cls(THRESHOLD, tau)

    @classmethod
    def zero(cls, eps: float = DEFAULT_ZERO_EPS) -> "ReopenRule":
        return cls(ZERO, eps)


@dataclass(frozen=True)
class ControlPolicy:
    kind: str = NONE
    eta: float | None = None
    shutdown_step: int | None = None
    reopen: ReopenRule | None = None

    def __post_init__(self):
        if self.kind == PROPORTIONAL:
            if self.eta is None or not self.eta > 0:
                raise ScenarioError(f"proportional control needs eta > 0, got {self.eta!r}", field="control.eta")
        elif self.kind == BINARY:
            if self.shutdown_step is None or self.shutdown_step < 0 or int(self.shutdown_step) != self.shutdown_step:
                raise ScenarioError(
                    f"binary control needs a non-negative integer shutdown_step, got {self.shutdown_step!r}",
                    field="control.shutdown_step",
                )
            if self.reopen is None:
                raise ScenarioError("binary control needs a reopen rule", field="control.reopen")
        elif self.kind != NONE:
            raise ScenarioError(f"unknown control kind {self.kind!r}", field="control.kind")

    @classmethod
    def none(cls) -> "ControlPolicy":
        return cls(NONE)

    @classmethod
    def proportional(cls, eta: float) -> "ControlPolicy":
        """Proportional controller; ``eta == 0`` means no control at all."""
        if eta == 0:
            return cls(NONE)
        return cls(PROPORTIONAL, eta=float(eta))

    @classmethod
    def binary(cls, shutdown_step: int, reopen: ReopenRule) -> "ControlPolicy":
        return cls(BINARY, shutdown_step=int(shutdown_step), reopen=reopen)


@dataclass(frozen=True)
class VaccinePolicy:
    start_step: int = 500
    rate: float = 0.001
    s_bar_floor: float = 0.01

    def __post_init__(self):
        if self.start_step < 0:
            raise ScenarioError(f"start_step must be >= 0, got {self.start_step!r}", field="vaccine.start_step")
        if not 0 <= self.rate <= 1:
            raise ScenarioError(f"rate must be in [0, 1], got {self.rate!r}", field="vaccine.rate")
        if not 0 <= self.s_bar_floor <= 1:
            raise ScenarioError(
                f"s_bar_floor must be in [0, 1], got {self.s_bar_floor!r}", field="vaccine.s_bar_floor"
            )


@dataclass(frozen=True)
class ControlOutput:
    """``vaccine_move`` is ``None`` when no roll-out policy is configured."""

    theta: float
    vaccine_move: np.ndarray | None
    reopened: bool = False


def proportional_theta(x_bar: float, eta: float) -> float:
    """Restriction penalty ``1 - x_bar**(1/eta)``."""
    x_bar = min(max(x_bar, 0.0), 1.0)
    return 1.0 - x_bar ** (1.0 / eta)


def binary_theta(policy: ControlPolicy, k: int, x_bar: float, reopened: bool) -> tuple[float, bool]:
    """On-off restriction. Returns ``(theta, reopened)``; reopening is latched.

    The reopen rule is only consulted after at least one closed step.
    """
    if reopened or k < policy.shutdown_step:
        return 1.0, reopened
    if k > policy.shutdown_step and x_bar < policy.reopen.value:
        return 1.0, True
    return 0.0, False


def apply_restriction(gamma, p_x, theta: float):
    gamma = np.asarray(gamma, dtype=float)
    p_x = np.asarray(p_x, dtype=float)
    return theta * gamma, theta * p_x


def vaccine_move(s, policy: VaccinePolicy | None, k: int) -> np.ndarray:
    """Per-node susceptible fraction moved straight to recovered at step ``k``."""
    s = np.asarray(s, dtype=float)
    if policy is None or k < policy.start_step or not s.mean() > policy.s_bar_floor:
        return np.zeros_like(s)
    return np.minimum(policy.rate * s, s)


class Controller:
    """Per-run state machine that turns a policy into one ``ControlOutput`` per step."""

    def __init__(self, policy: ControlPolicy | None = None, vaccine: VaccinePolicy | None = None):
        self.policy = policy or ControlPolicy.none()
        self.vaccine = vaccine
        self.reopened = False

    def __call__(self, k: int, s, x) -> ControlOutput:
        x_bar = float(x.sum()) / x.size
        reopened_now = False
        if self.policy.kind == PROPORTIONAL:
            theta = proportional_theta(x_bar, self.policy.eta)
        elif self.policy.kind == BINARY:
            was = self.reopened
            theta, self.reopened = binary_theta(self.policy, k, x_bar, self.reopened)
            reopened_now = self.reopened and not was
        else:
            theta = 1.0
        move = None if self.vaccine is None else vaccine_move(s, self.vaccine, k)
        return ControlOutput(theta, move, reopened_now)
