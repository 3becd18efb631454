"""
Custom exceptions for the hydrosplit library.

These exceptions give specific error handling for the failure modes of
mesh construction, finite-element assembly, linear solves and the CLI.
Every library error carries the process exit code the CLI maps it to.
"""

from typing import Any, Dict, Optional


class HydrosplitException(Exception):
    """Base exception for all hydrosplit errors."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        base_msg = self.message
        if self.details:
            rendered = ", ".join(f"{k}={v}" for k, v in sorted(self.details.items()))
            base_msg += f" ({rendered})"
        return base_msg


class ValidationError(HydrosplitException):
    """Invalid arguments, domain description or configuration."""

    exit_code = 2

    def __init__(self, message: str = "Invalid parameters", **kwargs):
        super().__init__(message, **kwargs)


class NonSimplePolygon(ValidationError):
    """Surface polygon self-intersects or is not counterclockwise."""

    def __init__(self, message: str = "Surface polygon is not simple", **kwargs):
        super().__init__(message, **kwargs)


class DegenerateTarget(ValidationError):
    """Requested mesh size is not positive."""

    def __init__(self, target_h: float, **kwargs):
        super().__init__(f"Target mesh size must be positive, got {target_h!r}", **kwargs)
        self.target_h = target_h


class DomainUnsupported(ValidationError):
    """Domain shape cannot be meshed or carries no manufactured solution."""

    def __init__(self, message: str = "Domain not supported", **kwargs):
        super().__init__(message, **kwargs)


class UnsupportedKind(ValidationError):
    """Element kind not allowed for the requested space."""

    def __init__(self, kind: Any, allowed: Any, **kwargs):
        names = ", ".join(str(getattr(a, "value", a)) for a in allowed)
        super().__init__(
            f"Element kind '{getattr(kind, 'value', kind)}' not supported here; "
            f"expected one of: {names}",
            **kwargs,
        )
        self.kind = kind
        self.allowed = tuple(allowed)


class ConfigError(ValidationError):
    """Run configuration could not be parsed or failed schema validation.

    ``line`` and ``column`` are set when the failure is a JSON syntax error,
    so the CLI can point at the offending character.
    """

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        column: Optional[int] = None,
        **kwargs,
    ):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message, **kwargs)
        self.line = line
        self.column = column


class FieldMismatch(ValidationError):
    """A stored field was written for a different space."""

    def __init__(self, expected: str, found: str, **kwargs):
        super().__init__(
            f"Space signature mismatch: expected {expected[:12]}..., found {found[:12]}...",
            **kwargs,
        )
        self.expected = expected
        self.found = found


class MeshError(HydrosplitException):
    """Mesh structure is inconsistent."""

    def __init__(self, message: str = "Inconsistent mesh", **kwargs):
        super().__init__(message, **kwargs)


class NonconformingSplit(MeshError):
    """Prism-to-tet split produced a nonconforming mesh."""

    def __init__(self, message: str = "Prism split is not conforming", **kwargs):
        super().__init__(message, **kwargs)


class RayEscape(MeshError):
    """A vertical ray left its column (or a point lies outside the domain)."""

    def __init__(self, count: int, **kwargs):
        super().__init__(f"{count} point(s) could not be traced inside their column", **kwargs)
        self.count = count


class ColumnMismatch(MeshError):
    """Volume and surface spaces do not share the same column structure."""

    def __init__(self, message: str = "Spaces are not built on the same column mesh", **kwargs):
        super().__init__(message, **kwargs)


class SolverError(HydrosplitException):
    """A linear or eigenvalue solve failed."""

    def __init__(self, message: str = "Solver failure", **kwargs):
        super().__init__(message, **kwargs)


class SolverDiverged(SolverError):
    """Iterative solver did not reach its tolerance."""

    def __init__(
        self,
        solver: str,
        iterations: Optional[int] = None,
        residual: Optional[float] = None,
        **kwargs,
    ):
        message = f"{solver} did not converge"
        if iterations is not None:
            message += f" after {iterations} iteration(s)"
        if residual is not None:
            message += f", residual {residual:.3e}"
        super().__init__(message, **kwargs)
        self.solver = solver
        self.iterations = iterations
        self.residual = residual


class SingularSystem(SolverError):
    """Direct factorization hit a zero pivot."""

    def __init__(self, message: str = "Singular saddle-point system", **kwargs):
        super().__init__(message, **kwargs)


class EigSolverStalled(SolverError):
    """Eigenvalue iteration stopped before its tolerance was met."""

    def __init__(self, iterations: int, change: float, **kwargs):
        super().__init__(
            f"Inverse iteration stalled after {iterations} iteration(s), "
            f"last relative change {change:.3e}",
            **kwargs,
        )
        self.iterations = iterations
        self.change = change


class EvaluatorDomain(HydrosplitException):
    """Vertical-velocity evaluator failed at one or more quadrature points."""

    def __init__(self, message: str = "Vertical velocity evaluation failed", **kwargs):
        super().__init__(message, **kwargs)


class HaltedByHook(HydrosplitException):
    """A per-step hook asked the time loop to stop."""

    def __init__(self, step: int, hook: Optional[str] = None, **kwargs):
        message = f"Run halted by hook at step {step}"
        if hook:
            message += f" ({hook})"
        super().__init__(message, **kwargs)
        self.step = step
        self.hook = hook


def exit_code_for(error: BaseException) -> int:
    """Map an exception to a CLI exit code.

    Args:
        error: The exception raised by a command.

    Returns:
        The exception's ``exit_code`` for library errors, 1 otherwise.
    """
    if isinstance(error, HydrosplitException):
        return error.exit_code
    return 1
