"""
Error types for the stopping solver.

Every failure carries a machine-readable code; the CLI maps the exception
class to its exit code and the HTTP surface to a status code.
"""
from enum import Enum
from typing import Any, Dict, Optional


class ErrorCode(str, Enum):
    ROW_SUM_NONZERO = "ROW_SUM_NONZERO"
    NEGATIVE_OFFDIAGONAL = "NEGATIVE_OFFDIAGONAL"
    ABSORBING_STATE = "ABSORBING_STATE"
    NONPOSITIVE_COST = "NONPOSITIVE_COST"
    VALIDATION_ERROR = "VALIDATION_ERROR"
    SCHEMA_ERROR = "SCHEMA_ERROR"
    INVERSE_OUT_OF_RANGE = "INVERSE_OUT_OF_RANGE"
    OUT_OF_DOMAIN = "OUT_OF_DOMAIN"
    EMPTY_DOMAIN = "EMPTY_DOMAIN"
    UNSUPPORTED_DOMAIN = "UNSUPPORTED_DOMAIN"
    DOMAIN_MISMATCH = "DOMAIN_MISMATCH"
    NOT_COMPARABLE = "NOT_COMPARABLE"
    RULE_GRID_MISMATCH = "RULE_GRID_MISMATCH"
    INVALID_GRID = "INVALID_GRID"
    STATE_SPACE_TOO_LARGE = "STATE_SPACE_TOO_LARGE"
    G_NOT_CONCAVE = "G_NOT_CONCAVE"
    NONPOSITIVE_INTENSITY = "NONPOSITIVE_INTENSITY"
    NO_CONVERGENCE = "NO_CONVERGENCE"
    HORIZON_EXHAUSTED_FRACTION = "HORIZON_EXHAUSTED_FRACTION"
    CONTAINMENT_VIOLATION = "CONTAINMENT_VIOLATION"
    PATHWISE_VIOLATION = "PATHWISE_VIOLATION"
    MONOTONICITY_VIOLATION = "MONOTONICITY_VIOLATION"


class StoppingError(Exception):
    """Base class. `exit_code` is what the CLI returns when this escapes a command."""
    exit_code = 1

    def __init__(self, code: ErrorCode, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"{code.value}: {message}")
        self.code = code
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code.value, "message": self.message, "details": self.details}


class ValidationFailure(StoppingError):
    """Bad input: malformed config, invalid model, arguments outside a domain."""
    exit_code = 1


class ConvergenceFailure(StoppingError):
    exit_code = 2


class PropertyViolation(StoppingError):
    """A checked structural property (containment, monotonicity, ...) does not hold."""
    exit_code = 3
