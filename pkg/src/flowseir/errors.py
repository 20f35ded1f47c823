"""Exception types raised across the package."""


class FlowSeirError(Exception):
    """Base class for all package errors."""


class ScenarioError(FlowSeirError, ValueError):
    """A scenario (or one of its parts) violates a model precondition.

    ``field`` carries a dotted path into the scenario document when the
    error originates from file input.
    """

    def __init__(self, message, field=None, report=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
        self.report = report


class ModelViolation(FlowSeirError, RuntimeError):
    """A runtime well-definedness condition failed during simulation."""

    def __init__(self, message, node=None, step=None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if node is not None:
            where.append(f"node {node}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.node = node
        self.step = step


class SimplexDriftError(ModelViolation):
    """Per-node compartments no longer sum to one."""
