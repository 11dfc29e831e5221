"""Conditional effect curves from cross-fitted residual regressions.

The pipeline, end to end:

1. Residualize the stage's outcome and driver on the conditioning set via
   out-of-fold learner predictions (``crossfit``).
2. Regress the outcome residual on basis(moderator) x driver residual to get
   a spline coefficient function (``splines``).
3. Bands come from a nonparametric bootstrap over residual rows with the
   nuisance predictions held fixed; the two stages of the indirect effect
   share resample indices so their product is coherent.

The first stage relates treatment to mediator (effect curve "alpha"), the
second mediator to outcome ("theta"); the conditional indirect effect curve
("cnie") is their pointwise product. The direct-effect curve ("cnde")
residualizes outcome and treatment on a conditioning set that includes the
mediator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .crossfit import CrossfitResult, FoldPlan, crossfit_residuals, make_folds
from .data import (
    AnalysisSpec,
    ColumnRole,
    ObservationTable,
    check_table_for_spec,
    moderator_support,
)
from .errors import SolverError, UsageError
from .seeding import derive_seed
from .splines import (
    SplineBasis,
    build_spline_basis,
    fit_varying_coefficient,
    second_difference_penalty,
    solve_penalized_fast,
)

CURVE_KINDS = ("alpha", "theta", "cnie", "cnde")


@dataclass(frozen=True)
class EffectCurve:
    """A conditional effect function on a moderator grid with CI bands.

    Curves fitted by this module carry their spline coefficients (and the
    bootstrap coefficient draws), so they can be re-evaluated exactly at any
    moderator value; the grid is a reporting convenience, not the estimate.
    """

    kind: str
    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    basis: SplineBasis | None = None
    coef: np.ndarray | None = None
    boot_coef: np.ndarray | None = None
    components: tuple["EffectCurve", "EffectCurve"] | None = None

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise UsageError(f"kind must be one of {CURVE_KINDS}, got {self.kind!r}")
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise UsageError("grid must be 1-D and strictly increasing")
        for name in ("estimate", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != grid.shape:
                raise UsageError(f"{name} must match the grid length")
            object.__setattr__(self, name, arr)
        if not 0.0 < self.level < 1.0:
            raise UsageError(f"level must be in (0, 1), got {self.level}")
        if np.any(self.lower > self.estimate) or np.any(self.estimate > self.upper):
            raise UsageError("bands must satisfy lower <= estimate <= upper pointwise")
        object.__setattr__(self, "grid", grid)

    def __call__(self, w) -> np.ndarray:
        """Evaluate the fitted curve at arbitrary moderator values (clipped
        to the observed support)."""
        w = np.atleast_1d(np.asarray(w, dtype=np.float64))
        if self.components is not None:
            a, t = self.components
            return a(w) * t(w)
        if self.basis is None or self.coef is None:
            return np.interp(w, self.grid, self.estimate)
        return self.basis.evaluate(self.coef, w)

    def replicate_values(self, w) -> np.ndarray:
        """Bootstrap replicate curves at ``w``, shape ``(reps, len(w))``."""
        w = np.atleast_1d(np.asarray(w, dtype=np.float64))
        if self.components is not None:
            a, t = self.components
            return a.replicate_values(w) * t.replicate_values(w)
        if self.basis is None or self.boot_coef is None:
            raise UsageError("curve carries no bootstrap replicates")
        return self.boot_coef @ self.basis.design(w).T


@dataclass(frozen=True)
class AverageEffect:
    value: float
    std_error: float
    weighting: str

    def __post_init__(self):
        if self.std_error < 0:
            raise UsageError("std_error must be nonnegative")


@dataclass(frozen=True)
class StageData:
    """Everything one varying-coefficient stage produced, at row level."""

    kind: str
    w: np.ndarray
    outcome_residual: np.ndarray
    driver_residual: np.ndarray
    fold_of: np.ndarray
    basis: SplineBasis
    coef: np.ndarray
    boot_coef: np.ndarray


@dataclass(frozen=True)
class MediationFit:
    """Bundle of fitted curves for one dataset/spec (CLI-facing)."""

    alpha: EffectCurve
    theta: EffectCurve
    cnie: EffectCurve
    cnde: EffectCurve | None
    support: tuple[float, float]

    def curves(self) -> dict[str, EffectCurve]:
        out = {"alpha": self.alpha, "theta": self.theta, "cnie": self.cnie}
        if self.cnde is not None:
            out["cnde"] = self.cnde
        return out


def bootstrap_bands(
    curve_fitter: Callable[[np.ndarray], np.ndarray],
    n_rows: int,
    reps: int,
    level: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Percentile bands from resampled refits of the final stage.

    ``curve_fitter`` maps a resampled row-index vector to curve values on a
    fixed grid and must be deterministic; nuisance predictions stay frozen
    inside it. Identical seeds give identical bands.
    """
    if reps < 100:
        raise UsageError(f"bootstrap reps must be >= 100, got {reps}")
    if not 0.0 < level < 1.0:
        raise UsageError(f"level must be in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_rows, size=(reps, n_rows))
    values = np.stack([np.asarray(curve_fitter(idx[b])) for b in range(reps)])
    tail = (1.0 - level) / 2.0
    lower = np.quantile(values, tail, axis=0)
    upper = np.quantile(values, 1.0 - tail, axis=0)
    return lower, upper


class _MediationEngine:
    """Shared machinery behind the estimate_* entry points.

    Caches crossfitted residuals so that, e.g., computing the indirect-effect
    curve does not refit nuisances already needed by its two stages. All
    randomness is derived from ``spec.seed``.
    """

    def __init__(self, table: ObservationTable, spec: AnalysisSpec):
        check_table_for_spec(table, spec)
        if spec.bootstrap_reps < 100:
            raise UsageError(f"bootstrap reps must be >= 100, got {spec.bootstrap_reps}")
        self.table = table
        self.spec = spec
        self.support = moderator_support(table, spec.support_trim)
        self.basis = build_spline_basis(self.support, spec.spline_degree, spec.n_basis)
        self.grid = np.linspace(self.support[0], self.support[1], spec.grid_size)
        self.w = table.role_column(ColumnRole.MODERATOR)
        self.plan: FoldPlan = make_folds(
            table.n_rows, spec.k_folds, derive_seed(spec.seed, "folds")
        )
        rng = np.random.default_rng(derive_seed(spec.seed, "bootstrap"))
        self.boot_idx = rng.integers(0, table.n_rows, size=(spec.bootstrap_reps, table.n_rows))
        self._learners = tuple(
            replace(s, seed=derive_seed(spec.seed, "learner", s.seed, s.family))
            for s in spec.learner_specs()
        )
        self._resid_cache: dict[tuple, CrossfitResult] = {}
        self._stage_cache: dict[str, StageData] = {}

    def _stage_roles(self, kind: str):
        base = (ColumnRole.COVARIATE, ColumnRole.MODERATOR)
        if kind == "alpha":
            return ColumnRole.MEDIATOR, ColumnRole.TREATMENT, base
        if kind == "theta":
            cond = base + ((ColumnRole.TREATMENT,) if self.spec.second_stage_conditions_on_treatment else ())
            return ColumnRole.OUTCOME, ColumnRole.MEDIATOR, cond
        if kind == "cnde":
            return ColumnRole.OUTCOME, ColumnRole.TREATMENT, base + (ColumnRole.MEDIATOR,)
        raise UsageError(f"no stage named {kind!r}")

    def _residuals(self, target: ColumnRole, cond: tuple[ColumnRole, ...]) -> CrossfitResult:
        key = (target, cond)
        if key not in self._resid_cache:
            learner = self._learners if len(self._learners) > 1 else self._learners[0]
            self._resid_cache[key] = crossfit_residuals(
                self.table, target, cond, learner, self.plan
            )
        return self._resid_cache[key]

    def stage(self, kind: str) -> StageData:
        if kind in self._stage_cache:
            return self._stage_cache[kind]
        outcome_role, driver_role, cond = self._stage_roles(kind)
        out = self._residuals(outcome_role, cond)
        drv = self._residuals(driver_role, cond)

        driver_scale = float(np.max(np.abs(self.table.role_column(driver_role))))
        if float(np.max(np.abs(drv.residuals))) <= 1e-12 * max(1.0, driver_scale):
            raise SolverError(
                f"driver residual for stage {kind!r} is numerically null "
                f"(is the {driver_role.value} column constant?)"
            )

        coef = fit_varying_coefficient(
            self.w, drv.residuals, out.residuals, self.basis, self.spec.ridge
        )
        design = self.basis.design(self.w) * drv.residuals[:, None]
        penalty = second_difference_penalty(self.basis.n_basis)
        boot = np.empty((self.spec.bootstrap_reps, self.basis.n_basis))
        ridge = self.spec.ridge if self.spec.ridge > 0 else 1e-12
        for b, idx in enumerate(self.boot_idx):
            boot[b] = solve_penalized_fast(design[idx], out.residuals[idx], ridge, penalty)

        data = StageData(
            kind=kind,
            w=self.w,
            outcome_residual=out.residuals,
            driver_residual=drv.residuals,
            fold_of=np.asarray(self.plan.assignment),
            basis=self.basis,
            coef=coef,
            boot_coef=boot,
        )
        self._stage_cache[kind] = data
        return data

    def _bands(self, estimate: np.ndarray, replicates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tail = (1.0 - self.spec.ci_level) / 2.0
        lower = np.quantile(replicates, tail, axis=0)
        upper = np.quantile(replicates, 1.0 - tail, axis=0)
        # percentile bands almost always contain the point estimate; enforce
        # the curve invariant in the rare skewed-resample corner
        return np.minimum(lower, estimate), np.maximum(upper, estimate)

    def curve(self, kind: str) -> EffectCurve:
        if kind == "cnie":
            return self.cnie()
        stage = self.stage(kind)
        design = self.basis.design(self.grid)
        estimate = design @ stage.coef
        replicates = stage.boot_coef @ design.T
        lower, upper = self._bands(estimate, replicates)
        return EffectCurve(
            kind=kind,
            grid=self.grid,
            estimate=estimate,
            lower=lower,
            upper=upper,
            level=self.spec.ci_level,
            basis=self.basis,
            coef=stage.coef,
            boot_coef=stage.boot_coef,
        )

    def cnie(self) -> EffectCurve:
        alpha = self.curve("alpha")
        theta = self.curve("theta")
        estimate = alpha.estimate * theta.estimate
        replicates = alpha.replicate_values(self.grid) * theta.replicate_values(self.grid)
        lower, upper = self._bands(estimate, replicates)
        return EffectCurve(
            kind="cnie",
            grid=self.grid,
            estimate=estimate,
            lower=lower,
            upper=upper,
            level=self.spec.ci_level,
            components=(alpha, theta),
        )


def estimate_theta_curve(table: ObservationTable, spec: AnalysisSpec) -> EffectCurve:
    """Mediator-to-outcome conditional effect curve (second stage)."""
    return _MediationEngine(table, spec).curve("theta")


def estimate_alpha_curve(table: ObservationTable, spec: AnalysisSpec) -> EffectCurve:
    """Treatment-to-mediator conditional effect curve (first stage)."""
    return _MediationEngine(table, spec).curve("alpha")


def estimate_cnie(table: ObservationTable, spec: AnalysisSpec) -> EffectCurve:
    """Conditional indirect effect: pointwise product of alpha and theta."""
    return _MediationEngine(table, spec).cnie()


def estimate_cnde(table: ObservationTable, spec: AnalysisSpec) -> EffectCurve:
    """Conditional direct effect; conditions on the mediator."""
    return _MediationEngine(table, spec).curve("cnde")


def fit_mediation(
    table: ObservationTable, spec: AnalysisSpec, include_cnde: bool = True
) -> MediationFit:
    """Fit every curve the analysis commands report, sharing nuisance work."""
    engine = _MediationEngine(table, spec)
    cnie = engine.cnie()
    alpha, theta = cnie.components
    cnde = engine.curve("cnde") if include_cnde else None
    return MediationFit(alpha=alpha, theta=theta, cnie=cnie, cnde=cnde, support=engine.support)


def average_effect(
    curve: EffectCurve,
    table: ObservationTable | None = None,
    weighting: str = "empirical_moderator_density",
) -> AverageEffect:
    """Average the curve over the observed moderator distribution (or the grid).

    The standard error is the spread of the same functional across the
    curve's bootstrap replicates; it is 0 for curves without replicates
    (e.g. hand-built constants).
    """
    if weighting == "empirical_moderator_density":
        if table is None:
            raise UsageError("empirical weighting needs the observation table")
        points = table.role_column(ColumnRole.MODERATOR)
    elif weighting == "uniform_grid":
        points = curve.grid
    else:
        raise UsageError(f"unknown weighting {weighting!r}")
    value = float(np.mean(curve(points)))
    try:
        reps = curve.replicate_values(points).mean(axis=1)
        se = float(np.std(reps, ddof=1))
    except UsageError:
        se = 0.0
    return AverageEffect(value=value, std_error=se, weighting=weighting)
