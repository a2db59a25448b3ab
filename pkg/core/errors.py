"""
pf-regen error types
Every failure carries a machine-readable kind and a details dict for reports
"""

from typing import Any, Dict, Optional


class PFError(ValueError):
    """Base error for the solver stack"""

    kind = "error"
    usage_error = False

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    @property
    def exit_code(self) -> int:
        return 1 if self.usage_error else 2

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "message": self.message, "details": self.details}


class MatrixFormatError(PFError):
    """Matrix text does not follow the coordinate format"""

    kind = "parse"
    usage_error = True

    def __init__(self, message: str, line: Optional[int] = None):
        details = {"line": line} if line is not None else {}
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message, details)
        self.line = line


class DomainError(PFError):
    """A parameter lies outside its admissible range"""

    kind = "domain"
    usage_error = True


class GridTooCoarseError(PFError):
    kind = "grid_too_coarse"
    usage_error = True


class ReducibleMatrixError(PFError):
    kind = "reducible"

    def __init__(self, witness):
        a, b = witness
        super().__init__(
            f"Matrix is reducible: no path from state {a} to state {b}",
            {"witness": [int(a), int(b)]},
        )
        self.witness = (int(a), int(b))


class A1FailureError(PFError):
    """The cycle transform never reaches 1 on its finite domain"""

    kind = "a1_failure"


class RootToleranceError(PFError):
    """The root bracket collapsed before |h - 1| came within tol"""

    kind = "root_tolerance"
    usage_error = True


class NonPositiveEigenvectorError(PFError):
    kind = "nonpositive_eigenvector"


class UnestimableError(PFError):
    """No surviving regeneration cycle, so A1 cannot be estimated"""

    kind = "a1_unestimable"


class TwistError(PFError):
    kind = "twist"


class A4ViolationError(PFError):
    """Density ratio at a sampled pair breaks the kernel constants c1, c2"""

    kind = "a4_violation"

    def __init__(self, x: Any, y: Any, coin: float, ratio: Optional[float] = None, c2: Optional[float] = None):
        if ratio is None:
            message = f"A4 violated at x={x!r}, y={y!r}: regeneration coin {coin:.6g} outside [0, 1]"
        else:
            message = f"A4 violated at x={x!r}, y={y!r}: density ratio {ratio:.6g} above c2={c2:.6g}"
        details = {"x": repr(x), "y": repr(y), "coin": coin}
        if ratio is not None:
            details.update(ratio=ratio, c2=c2)
        super().__init__(message, details)
        self.pair = (x, y)
        self.coin = coin
