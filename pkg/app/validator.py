"""
Parameter Validator - Quality Gate for Model Parameters

Checks a ModelParams before it is saved or used:
1. Every distribution is non-negative
2. Every distribution sums to one
3. Emission tables respect the strength ordering (more offense, more goals;
   more defense, fewer goals conceded)

Acts as a quality gate so a trained model never leaves the trainer broken.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from .domain import ModelParams, expected_goals_surface

logger = logging.getLogger(__name__)


class ValidationLevel(Enum):
    """Severity levels for validation issues."""
    ERROR = "error"  # Invariant broken
    WARNING = "warning"  # Valid, but suspicious (e.g. a state that is never entered)


@dataclass
class ValidationIssue:
    """A validation issue found in one parameter block."""
    component: str  # "pi", "omega_within", "psi", ...
    index: tuple
    level: ValidationLevel
    category: str  # "negative_entry", "normalization", "monotonicity", "shape"
    message: str


@dataclass
class ValidationResult:
    """Result of parameter validation."""
    is_valid: bool
    errors: List[ValidationIssue]
    warnings: List[ValidationIssue]

    @property
    def messages(self) -> List[str]:
        return [issue.message for issue in self.errors]


class ParamValidator:
    """
    Validates ModelParams against the model invariants.

    Tolerances:
    - sum_tol: how far a distribution may drift from summing to 1
    - monotonicity_tol: how far expected goals may step the wrong way
    """

    def __init__(self, sum_tol: float = 1e-12, monotonicity_tol: float = 1e-9, check_monotonicity: bool = True):
        self.sum_tol = sum_tol
        self.monotonicity_tol = monotonicity_tol
        self.check_monotonicity = check_monotonicity

    def _check_vector(self, name: str, vec: np.ndarray) -> List[ValidationIssue]:
        issues = []
        if np.any(~np.isfinite(vec)):
            issues.append(ValidationIssue(name, (), ValidationLevel.ERROR, "non_finite", f"{name} has non-finite entries"))
            return issues
        if np.any(vec < 0):
            issues.append(ValidationIssue(
                name, (), ValidationLevel.ERROR, "negative_entry",
                f"{name} has negative entry {vec.min():.6g}",
            ))
        total = vec.sum()
        if abs(total - 1.0) > self.sum_tol:
            issues.append(ValidationIssue(
                name, (), ValidationLevel.ERROR, "normalization", f"{name} sums to {total:.6g}",
            ))
        return issues

    def _check_rows(self, name: str, table: np.ndarray) -> List[ValidationIssue]:
        """Every row along the last axis must be a distribution."""
        issues = []
        for index in np.ndindex(*table.shape[:-1]):
            row = table[index]
            label = f"({','.join(str(i) for i in index)})" if len(index) > 1 else str(index[0])
            if np.any(~np.isfinite(row)):
                issues.append(ValidationIssue(
                    name, index, ValidationLevel.ERROR, "non_finite", f"{name} row {label} has non-finite entries",
                ))
                continue
            if np.any(row < 0):
                issues.append(ValidationIssue(
                    name, index, ValidationLevel.ERROR, "negative_entry",
                    f"{name} row {label} has negative entry {row.min():.6g}",
                ))
            total = row.sum()
            if abs(total - 1.0) > self.sum_tol:
                issues.append(ValidationIssue(
                    name, index, ValidationLevel.ERROR, "normalization", f"{name} row {label} sums to {total:.6g}",
                ))
        return issues

    def _check_monotone(self, name: str, cpt: np.ndarray) -> List[ValidationIssue]:
        """Expected goals non-decreasing in offense state, non-increasing in defense state."""
        issues = []
        surface = expected_goals_surface(cpt)
        S = surface.shape[0]
        for j in range(S):
            for i in range(S - 1):
                step = surface[i + 1, j] - surface[i, j]
                if step < -self.monotonicity_tol:
                    issues.append(ValidationIssue(
                        name, (i, j), ValidationLevel.ERROR, "monotonicity",
                        f"{name} expected goals fall from offense {i} to {i + 1} at defense {j} by {-step:.3g}",
                    ))
        for i in range(S):
            for j in range(S - 1):
                step = surface[i, j + 1] - surface[i, j]
                if step > self.monotonicity_tol:
                    issues.append(ValidationIssue(
                        name, (i, j), ValidationLevel.ERROR, "monotonicity",
                        f"{name} expected goals rise from defense {j} to {j + 1} at offense {i} by {step:.3g}",
                    ))
        return issues

    def validate(self, params: ModelParams) -> ValidationResult:
        issues: List[ValidationIssue] = []
        issues.extend(self._check_vector("pi", params.pi))
        issues.extend(self._check_vector("rho", params.rho))
        for name in ("omega_within", "omega_between", "delta_within", "delta_between", "psi", "gamma_cpt"):
            issues.extend(self._check_rows(name, getattr(params, name)))
        if self.check_monotonicity:
            issues.extend(self._check_monotone("psi", params.psi))
            issues.extend(self._check_monotone("gamma_cpt", params.gamma_cpt))

        # A state with no initial mass and no way in is dead weight
        for role, start, within in (("offense", params.pi, params.omega_within), ("defense", params.rho, params.delta_within)):
            inflow = start + within.sum(axis=0)
            for s in np.flatnonzero(inflow <= 0):
                issues.append(ValidationIssue(
                    role, (int(s),), ValidationLevel.WARNING, "unreachable_state",
                    f"{role} state {s} is unreachable",
                ))

        errors = [issue for issue in issues if issue.level == ValidationLevel.ERROR]
        warnings = [issue for issue in issues if issue.level == ValidationLevel.WARNING]
        if errors:
            logger.debug(f"Parameter validation: {len(errors)} errors, {len(warnings)} warnings")
        return ValidationResult(is_valid=not errors, errors=errors, warnings=warnings)


def validate_params(
    params: ModelParams,
    sum_tol: float = 1e-12,
    monotonicity_tol: float = 1e-9,
    check_monotonicity: bool = True,
) -> List[str]:
    """
    Describe every broken ModelParams invariant; empty when all hold.

    Args:
        params: Parameters to check
        sum_tol: Allowed drift of each distribution's sum from 1
        monotonicity_tol: Allowed wrong-way step in expected goals
        check_monotonicity: Skip the ordering check for untrained parameters

    Returns:
        One message per violation, naming component and index
    """
    validator = ParamValidator(sum_tol=sum_tol, monotonicity_tol=monotonicity_tol, check_monotonicity=check_monotonicity)
    return validator.validate(params).messages
