"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RRMDError(Exception):
    """Base class for every error raised by this package."""


class DomainViolation(RRMDError, ValueError):
    """A point lies outside the open domain of a kernel or objective."""


class NumericOverflow(RRMDError, FloatingPointError):
    """A dual coordinate is not finite."""


class RootFindFailure(RRMDError, ArithmeticError):
    """A scalar or block root-find did not converge within its budget."""


class EmptyRegion(RRMDError, ValueError):
    """A region estimate was built from zero points."""


class SingularBlock(RRMDError, ValueError):
    """An affine block matrix is numerically singular."""


class ShapeMismatch(RRMDError, ValueError):
    """Array shapes do not conform to the kernel's block partition."""


class PartitionMismatch(RRMDError, ValueError):
    """Two kernels combined in a conic sum have different block partitions."""


class CompatibilityViolation(RRMDError, ValueError):
    """The monotone-gradient compatibility spot-check of a conic sum failed."""


class NonpositiveMu(RRMDError, ValueError):
    """A strong-convexity modulus passed to the multi-block constant is not positive."""


class BadT(RRMDError, ValueError):
    """Sample size outside ``1 <= t <= n``."""


class MissingConstants(RRMDError, ValueError):
    """The step cap needs constants (L, G or expected-smoothness fit) that are unavailable."""


class DivergenceDetected(RRMDError, RuntimeError):
    """The objective exceeded the divergence threshold during a run.

    Attributes
    ----------
    traces : list
        Trace records gathered before the abort.
    epoch : int
        Epoch at which the guard fired.
    """

    def __init__(self, message: str, traces=None, epoch: int | None = None):
        super().__init__(message)
        self.traces = list(traces or [])
        self.epoch = epoch


class BudgetExhausted(RRMDError, RuntimeError):
    """The reference solver ran out of iterations before certifying stationarity."""

    def __init__(self, message: str, best_residual: float = float("nan"), solution=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.solution = solution


class ConfigError(RRMDError, ValueError):
    """A run configuration failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class DegenerateReference(RRMDError, ValueError):
    """The reference objective value is too small for a relative error."""
