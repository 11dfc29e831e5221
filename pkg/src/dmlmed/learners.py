"""Nuisance regression learners with cross-validated grid search.

Four families: bagged trees (random forest), boosted trees, L1 linear
(lasso path), and plain least squares. Tuning is a deterministic grid
search; ties break by enumeration order so repeated runs select identical
models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import Lasso, LinearRegression
from sklearn.model_selection import KFold

from .errors import FitError, UsageError

FAMILIES = ("bagged_trees", "boosted_trees", "linear_l1", "linear_ols")

#: Search grids used when a spec leaves ``hyper_grid`` empty. Kept small so
#: Monte Carlo sweeps stay tractable.
DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "bagged_trees": {
        "n_estimators": [200, 500],
        "max_depth": [None, 8],
        "min_samples_leaf": [1, 5],
    },
    "boosted_trees": {
        "learning_rate": [0.05, 0.1],
        "n_estimators": [100, 300],
        "max_depth": [2, 3],
    },
    "linear_l1": {"alpha": [float(a) for a in np.logspace(-4, 1, 20)]},
    "linear_ols": {},
}

#: Single-point configurations for runs that skip tuning (Monte Carlo sweeps,
#: ablations); chosen to track the additive signals in play at modest n.
PINNED_POINTS: dict[str, dict[str, list]] = {
    "bagged_trees": {"n_estimators": [200], "max_depth": [8], "min_samples_leaf": [5]},
    "boosted_trees": {"n_estimators": [100], "max_depth": [2], "learning_rate": [0.1]},
    "linear_l1": {"alpha": [0.01]},
    "linear_ols": {},
}


def pinned_spec(family: str, seed: int = 0) -> "LearnerSpec":
    """LearnerSpec with one pinned grid point (no hyperparameter search)."""
    if family not in PINNED_POINTS:
        raise UsageError(f"unknown learner family {family!r}; expected one of {FAMILIES}")
    return LearnerSpec(family=family, hyper_grid=PINNED_POINTS[family], seed=seed)


def _estimator_for(family: str, params: Mapping[str, object], seed: int):
    if family == "bagged_trees":
        return RandomForestRegressor(random_state=seed, n_jobs=1, **params)
    if family == "boosted_trees":
        return GradientBoostingRegressor(random_state=seed, **params)
    if family == "linear_l1":
        return Lasso(random_state=seed, max_iter=10_000, **params)
    if family == "linear_ols":
        return LinearRegression(**params)
    raise UsageError(f"unknown learner family {family!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class LearnerSpec:
    """A learner family plus its tuning grid.

    An empty ``hyper_grid`` means "search the family's default grid". Keys
    must be valid constructor parameters for the family's estimator.
    """

    family: str
    hyper_grid: Mapping[str, Sequence] = field(default_factory=dict)
    tuning_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown learner family {self.family!r}; expected one of {FAMILIES}")
        if self.tuning_folds < 2:
            raise UsageError(f"tuning_folds must be >= 2, got {self.tuning_folds}")
        valid = set(_estimator_for(self.family, {}, 0).get_params())
        bad = set(self.hyper_grid) - valid
        if bad:
            raise UsageError(f"hyper_grid keys invalid for {self.family}: {sorted(bad)}")
        object.__setattr__(self, "hyper_grid", {k: list(v) for k, v in self.hyper_grid.items()})

    def candidates(self) -> list[dict]:
        grid = self.hyper_grid or DEFAULT_GRIDS[self.family]
        if not grid:
            return [{}]
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in product(*(grid[k] for k in keys))]


class _ConstantModel:
    """Degenerate predictor returned when the target has zero variance."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass(frozen=True)
class FittedRegressor:
    """An opaque fitted model plus the tuning outcome that produced it.

    ``cv_mse`` is the pooled tuning-CV mean squared error of the selected
    grid point; it is ``None`` when the grid had a single candidate and no
    selection was needed (pass ``force_cv=True`` to always compute it).
    """

    family: str
    model: object
    n_features: int
    hyperparams: Mapping[str, object]
    cv_mse: float | None

    def predict(self, features) -> np.ndarray:
        return predict(self, features)


def fit_regressor(
    features: np.ndarray,
    targets: np.ndarray,
    spec: LearnerSpec,
    force_cv: bool = False,
) -> FittedRegressor:
    """Grid search by tuning-CV MSE, then refit the winner on all rows.

    Deterministic given ``spec.seed``: the CV split, every estimator's
    internal randomness, and tie-breaking (first grid point wins) are all
    fixed. An all-constant target short-circuits to a constant predictor.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise UsageError(f"features must be 2-D with >= 1 column, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise UsageError("targets must be 1-D and aligned with features")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise UsageError("features and targets must be finite")
    n = X.shape[0]
    if n < spec.tuning_folds:
        raise FitError(f"n = {n} is below tuning_folds = {spec.tuning_folds}")

    if np.ptp(y) == 0.0:
        return FittedRegressor(
            family=spec.family,
            model=_ConstantModel(y[0]),
            n_features=X.shape[1],
            hyperparams={},
            cv_mse=0.0,
        )

    candidates = spec.candidates()
    best_params = candidates[0]
    best_mse: float | None = None
    if len(candidates) > 1 or force_cv:
        kf = KFold(n_splits=spec.tuning_folds, shuffle=True, random_state=spec.seed)
        splits = list(kf.split(X))
        for params in candidates:
            sq_err = 0.0
            for train_idx, test_idx in splits:
                est = _estimator_for(spec.family, params, spec.seed)
                est.fit(X[train_idx], y[train_idx])
                pred = est.predict(X[test_idx])
                sq_err += float(np.sum((y[test_idx] - pred) ** 2))
            mse = sq_err / n
            if best_mse is None or mse < best_mse:
                best_mse = mse
                best_params = params

    model = _estimator_for(spec.family, best_params, spec.seed)
    model.fit(X, y)
    return FittedRegressor(
        family=spec.family,
        model=model,
        n_features=X.shape[1],
        hyperparams=dict(best_params),
        cv_mse=best_mse,
    )


def fit_best_regressor(
    features: np.ndarray, targets: np.ndarray, specs: Sequence[LearnerSpec]
) -> FittedRegressor:
    """Fit several specs and keep the one with the lowest tuning-CV MSE.

    This is the per-fit selection rule used to combine tree families; ties
    break in favor of the earlier spec.
    """
    if not specs:
        raise UsageError("specs must be a nonempty sequence of LearnerSpec")
    if len(specs) == 1:
        return fit_regressor(features, targets, specs[0])
    best: FittedRegressor | None = None
    for spec in specs:
        fitted = fit_regressor(features, targets, spec, force_cv=True)
        if best is None or fitted.cv_mse < best.cv_mse:
            best = fitted
    return best


def predict(model: FittedRegressor, features) -> np.ndarray:
    """Pure evaluation of a fitted model; arity must match training."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise UsageError(
            f"features have {X.shape[1] if X.ndim == 2 else 'wrong'} columns, "
            f"model was trained with {model.n_features}"
        )
    return np.asarray(model.model.predict(X), dtype=np.float64)
