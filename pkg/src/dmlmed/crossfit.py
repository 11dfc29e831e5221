"""Cross-fitted nuisance predictions and residuals with fold bookkeeping.

Each observation's residual comes from a model trained on the complement of
its fold, so residuals are honest out-of-sample quantities. Hyperparameter
tuning happens inside each training complement (nested CV), never across
fold boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import ColumnRole, ObservationTable
from .errors import FitError, UsageError
from .learners import LearnerSpec, fit_best_regressor, fit_regressor, predict
from .seeding import derive_seed


@dataclass(frozen=True)
class FoldPlan:
    """Balanced random partition of row indices into k folds."""

    n: int
    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64).copy()
        assignment.flags.writeable = False
        object.__setattr__(self, "assignment", assignment)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Deterministic balanced partition; fold sizes differ by at most one."""
    if k < 2:
        raise UsageError(f"need at least 2 folds, got {k}")
    if k > n:
        raise UsageError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(n=n, k=k, assignment=assignment, seed=seed)


def conditioning_matrix(
    table: ObservationTable, conditioning_roles: Sequence[ColumnRole]
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Feature matrix for a nuisance regression, columns in role order.

    The covariate role expands to all covariate columns in table order. The
    moderator must be present: nuisance functions condition on it by model
    construction.
    """
    roles = [ColumnRole(r) for r in conditioning_roles]
    if not roles:
        raise UsageError("conditioning set must not be empty (at minimum the moderator)")
    if ColumnRole.MODERATOR not in roles:
        raise UsageError("conditioning set must include the moderator")
    if len(set(roles)) != len(roles):
        raise UsageError(f"duplicate conditioning roles: {roles}")
    columns: list[str] = []
    for role in roles:
        if role == ColumnRole.COVARIATE:
            columns.extend(table.covariate_names)
        else:
            columns.append(table.role_name(role))
    if not columns:
        raise UsageError("conditioning set resolved to zero columns")
    idx = [table.names.index(c) for c in columns]
    return table.values[:, idx], tuple(columns)


@dataclass(frozen=True)
class CrossfitResult:
    """Out-of-fold residuals for one target, plus fold provenance."""

    target_role: ColumnRole
    conditioning_roles: tuple[ColumnRole, ...]
    residuals: np.ndarray
    predictions: np.ndarray
    fold_of: np.ndarray
    fold_cv_mse: tuple[float | None, ...]


@dataclass(frozen=True)
class ResidualPanel:
    """Paired outcome/driver residuals feeding one varying-coefficient stage."""

    outcome_residual: np.ndarray
    driver_residual: np.ndarray
    fold_of: np.ndarray
    conditioning_roles: tuple[ColumnRole, ...]


def crossfit_residuals(
    table: ObservationTable,
    target_role: ColumnRole,
    conditioning_roles: Sequence[ColumnRole],
    learner: LearnerSpec | Sequence[LearnerSpec],
    plan: FoldPlan,
) -> CrossfitResult:
    """Residual = observed - out-of-fold prediction, for every row.

    Passing several learner specs selects, per fold, the family with the
    lowest tuning-CV MSE on that fold's training complement.
    """
    if plan.n != table.n_rows:
        raise UsageError(f"fold plan covers {plan.n} rows, table has {table.n_rows}")
    target_role = ColumnRole(target_role)
    X, _ = conditioning_matrix(table, conditioning_roles)
    y = table.role_column(target_role)

    specs = (learner,) if isinstance(learner, LearnerSpec) else tuple(learner)
    if not specs:
        raise UsageError("at least one learner spec is required")

    predictions = np.empty(plan.n, dtype=np.float64)
    fold_mse: list[float | None] = []
    for fold in range(plan.k):
        train = plan.train_indices(fold)
        test = plan.test_indices(fold)
        fold_specs = tuple(
            replace(s, seed=derive_seed(s.seed, target_role.value, "fold", fold)) for s in specs
        )
        try:
            if len(fold_specs) == 1:
                fitted = fit_regressor(X[train], y[train], fold_specs[0])
            else:
                fitted = fit_best_regressor(X[train], y[train], fold_specs)
        except FitError as exc:
            raise FitError(f"fold {fold}: {exc}") from exc
        predictions[test] = predict(fitted, X[test])
        fold_mse.append(fitted.cv_mse)

    return CrossfitResult(
        target_role=target_role,
        conditioning_roles=tuple(ColumnRole(r) for r in conditioning_roles),
        residuals=y - predictions,
        predictions=predictions,
        fold_of=np.asarray(plan.assignment),
        fold_cv_mse=tuple(fold_mse),
    )


def build_residual_panel(
    table: ObservationTable,
    outcome_role: ColumnRole,
    driver_role: ColumnRole,
    conditioning_roles: Sequence[ColumnRole],
    learner: LearnerSpec | Sequence[LearnerSpec],
    plan: FoldPlan,
) -> ResidualPanel:
    """Residualize outcome and driver on the same folds and conditioning set."""
    out = crossfit_residuals(table, outcome_role, conditioning_roles, learner, plan)
    drv = crossfit_residuals(table, driver_role, conditioning_roles, learner, plan)
    return ResidualPanel(
        outcome_residual=out.residuals,
        driver_residual=drv.residuals,
        fold_of=np.asarray(plan.assignment),
        conditioning_roles=out.conditioning_roles,
    )
