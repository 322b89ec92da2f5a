# app/core/errors.py
from __future__ import annotations

from typing import Any


class ToolkitError(Exception):
    """Base class; `code` is stable and ends up in the CLI error JSON."""

    code = "toolkit_error"

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        for key, value in self.details.items():
            out[key] = _plain(value)
        return out


def _plain(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if hasattr(value, "item"):
        return _plain(value.item())
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return repr(value)


# =========================
# families
# =========================
class DomainError(ToolkitError):
    code = "domain_error"


class NonRealError(DomainError):
    code = "non_real"


class DegenerateChart(ToolkitError):
    code = "degenerate_chart"


class NoSolution(ToolkitError):
    code = "no_solution"


# =========================
# kneading
# =========================
class Escape(ToolkitError):
    code = "escape"


class Incomparable(ToolkitError):
    code = "incomparable"


# =========================
# orbits
# =========================
class NotFinite(ToolkitError):
    code = "not_finite"


class DegenerateDerivative(ToolkitError):
    code = "degenerate_derivative"


class AmbiguousRelation(ToolkitError):
    code = "ambiguous_relation"


class NoSignChange(ToolkitError):
    code = "no_sign_change"


class LowerPeriodCollision(ToolkitError):
    code = "lower_period_collision"


class NearParabolic(ToolkitError):
    code = "near_parabolic"


# =========================
# transfer
# =========================
class DivideByZero(ToolkitError):
    code = "divide_by_zero"


class Overflow(ToolkitError):
    code = "overflow"


class NonConvergence(ToolkitError):
    code = "non_convergence"


# =========================
# lifting
# =========================
class DegeneratePoint(ToolkitError):
    code = "degenerate_point"


class InjectivityViolation(ToolkitError):
    code = "injectivity_violation"


class BranchLoss(ToolkitError):
    code = "branch_loss"

    def __init__(self, message: str = "", k: int | None = None, diagnostics: Any = None, **details: Any):
        super().__init__(message, k=k, **details)
        self.k = k
        # partial LiftDiagnostics up to the failing iterate
        self.diagnostics = diagnostics


class NoUnitEigenvalue(ToolkitError):
    code = "no_unit_eigenvalue"


class Degenerate(ToolkitError):
    code = "degenerate"


# =========================
# bones
# =========================
class SeedNotOnCurve(ToolkitError):
    code = "seed_not_on_curve"


class StepFailure(ToolkitError):
    code = "step_failure"

    def __init__(self, message: str = "", last_point: Any = None, **details: Any):
        super().__init__(message, last_point=last_point, **details)
        self.last_point = last_point


class RankDeficient(ToolkitError):
    code = "rank_deficient"
