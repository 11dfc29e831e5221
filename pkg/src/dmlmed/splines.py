"""Clamped B-spline basis and the penalized varying-coefficient solver.

The final estimation stage regresses an outcome residual on a design whose
columns are basis functions of the moderator multiplied by a driver
residual; the fitted coefficient function theta(w) = sum_j c_j b_j(w) is the
conditional effect curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, SolverError, UsageError


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis on a closed interval.

    The knot vector repeats each end point ``degree + 1`` times, so the basis
    spans the full interval, sums to one everywhere on it, and the first/last
    basis functions hit exactly 1 at the end points.
    """

    degree: int
    n_basis: int
    knots: np.ndarray
    support: tuple[float, float]

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        if np.any(np.diff(knots) < 0):
            raise DomainError("knot vector must be nondecreasing")
        if len(knots) != self.n_basis + self.degree + 1:
            raise DomainError(
                f"knot vector length {len(knots)} != n_basis + degree + 1 = "
                f"{self.n_basis + self.degree + 1}"
            )
        knots = knots.copy()
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    def clip(self, x: np.ndarray) -> np.ndarray:
        """Moderator values outside the support are clipped to the boundary;
        spline extrapolation is not trusted."""
        lo, hi = self.support
        return np.clip(np.asarray(x, dtype=np.float64), lo, hi)

    def design(self, x) -> np.ndarray:
        """Basis design matrix, shape ``(len(x), n_basis)``."""
        x = np.atleast_1d(self.clip(x))
        spl = BSpline(self.knots, np.eye(self.n_basis), self.degree, extrapolate=True)
        return np.asarray(spl(x))

    def evaluate(self, coef: np.ndarray, x) -> np.ndarray:
        coef = np.asarray(coef, dtype=np.float64)
        if coef.shape[-1] != self.n_basis:
            raise UsageError(
                f"coefficient vector has length {coef.shape[-1]}, expected {self.n_basis}"
            )
        return self.design(x) @ coef.T if coef.ndim > 1 else self.design(x) @ coef


def build_spline_basis(
    support: tuple[float, float], degree: int = 3, n_basis: int = 10
) -> SplineBasis:
    """Basis with interior knots at equally spaced quantile positions of the support.

    ``n_basis`` = number of interior knots + degree + 1, so the defaults give
    6 interior knots.
    """
    lo, hi = float(support[0]), float(support[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise DomainError(f"support must have positive width, got [{lo}, {hi}]")
    if degree < 1:
        raise UsageError(f"degree must be >= 1, got {degree}")
    if n_basis <= degree:
        raise UsageError(f"n_basis ({n_basis}) must exceed degree ({degree})")
    n_interior = n_basis - degree - 1
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return SplineBasis(degree=degree, n_basis=n_basis, knots=knots, support=(lo, hi))


def second_difference_penalty(n_basis: int) -> np.ndarray:
    """Second-difference matrix on coefficients, shape ``(n_basis - 2, n_basis)``."""
    if n_basis < 3:
        raise UsageError("second-difference penalty needs at least 3 coefficients")
    P = np.zeros((n_basis - 2, n_basis))
    for i in range(n_basis - 2):
        P[i, i : i + 3] = (1.0, -2.0, 1.0)
    return P


def fit_varying_coefficient(
    w: np.ndarray,
    driver_residual: np.ndarray,
    outcome_residual: np.ndarray,
    basis: SplineBasis,
    ridge: float = 1e-6,
) -> np.ndarray:
    """Penalized least squares of the outcome residual on basis(w) * driver.

    No intercept: residualization has already removed levels. The penalty is
    ``ridge`` times a squared second difference on the coefficients, a pure
    numerical stabilizer at its default.

    Returns the coefficient vector ``c`` with theta_hat(w) = sum_j c_j b_j(w).
    """
    w = np.asarray(w, dtype=np.float64)
    d = np.asarray(driver_residual, dtype=np.float64)
    y = np.asarray(outcome_residual, dtype=np.float64)
    if not (w.shape == d.shape == y.shape) or w.ndim != 1:
        raise UsageError("w, driver_residual, outcome_residual must be 1-D of equal length")
    if ridge < 0:
        raise UsageError(f"ridge must be nonnegative, got {ridge}")

    D = basis.design(w) * d[:, None]
    if ridge == 0.0:
        coef, _, rank, _ = np.linalg.lstsq(D, y, rcond=None)
        if rank < basis.n_basis:
            raise SolverError(
                f"design is rank-deficient (rank {rank} < {basis.n_basis}); "
                "pass a positive ridge penalty"
            )
        return coef
    P = second_difference_penalty(basis.n_basis)
    A = np.vstack([D, np.sqrt(ridge) * P])
    b = np.concatenate([y, np.zeros(P.shape[0])])
    coef, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    return coef


def solve_penalized_fast(
    design: np.ndarray, y: np.ndarray, ridge: float, penalty: np.ndarray
) -> np.ndarray:
    """Normal-equation solve used in bootstrap refits (speed over last-ulp accuracy).

    Falls back to the min-norm least-squares path when the system is singular,
    matching :func:`fit_varying_coefficient` semantics for null designs.
    """
    G = design.T @ design + ridge * (penalty.T @ penalty)
    rhs = design.T @ y
    try:
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        A = np.vstack([design, np.sqrt(ridge) * penalty])
        b = np.concatenate([y, np.zeros(penalty.shape[0])])
        coef, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
        return coef
