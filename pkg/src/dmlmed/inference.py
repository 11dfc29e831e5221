"""Confirmatory inference around the fitted effect curves.

Houses the quartile-bin contrasts and monotonicity test for curve shape,
the parametric moderated-mediation benchmark fitted by least squares, the
learner/fold ablation, the omitted-confounder robustness value, and
permutation feature importance for nuisance models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import AnalysisSpec, ColumnRole, ObservationTable
from .effects import EffectCurve, _MediationEngine
from .errors import InferenceError, SolverError, UsageError
from .learners import LearnerSpec
from .seeding import derive_seed
from .splines import second_difference_penalty


@dataclass(frozen=True)
class BinEstimate:
    value: float
    std_error: float


@dataclass(frozen=True)
class ContrastEstimate:
    value: float
    std_error: float
    p_value: float


@dataclass(frozen=True)
class MonotonicityResult:
    """Nested-RSS statistic against a linear-in-moderator effect."""

    statistic: float
    p_value: float
    rss_linear: float
    rss_spline: float


@dataclass(frozen=True)
class ShapeTestReport:
    """Quartile-bin indirect effects, their contrasts, and the shape test.

    Bins split the moderator at its quartiles: low = bottom quarter,
    mid = middle half, high = top quarter.
    """

    cnie_low: BinEstimate
    cnie_mid: BinEstimate
    cnie_high: BinEstimate
    contrast_low_minus_mid: ContrastEstimate
    contrast_high_minus_mid: ContrastEstimate
    monotonicity_statistic: float
    monotonicity_p: float
    bin_edges: tuple[float, float]
    bin_counts: tuple[int, int, int]


def _bin_masks(w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[float, float]]:
    q1, q3 = np.quantile(w, [0.25, 0.75])
    low = w <= q1
    high = w > q3
    mid = ~(low | high)
    return low, mid, high, (float(q1), float(q3))


def _bootstrap_p(estimate: float, replicates: np.ndarray) -> tuple[float, float]:
    """Two-sided bootstrap-t p-value with the common bootstrap SE.

    Replicates are centered at the point estimate to approximate the null
    distribution of the studentized statistic.
    """
    se = float(np.std(replicates, ddof=1))
    if se == 0.0:
        return se, 1.0 if estimate == 0.0 else 0.0
    t_obs = abs(estimate) / se
    t_null = np.abs(replicates - estimate) / se
    p = (1.0 + float(np.sum(t_null >= t_obs))) / (len(replicates) + 1.0)
    return se, p


def _contrasts_from_curve(
    cnie: EffectCurve, w: np.ndarray
) -> tuple[dict[str, BinEstimate], dict[str, ContrastEstimate], tuple, tuple]:
    low, mid, high, edges = _bin_masks(w)
    counts = (int(low.sum()), int(mid.sum()), int(high.sum()))
    if min(counts) < 10:
        raise InferenceError(
            f"quartile bins too small for inference: counts {counts} (need >= 10 each)"
        )
    bins: dict[str, BinEstimate] = {}
    reps: dict[str, np.ndarray] = {}
    for name, mask in (("low", low), ("mid", mid), ("high", high)):
        est = float(np.mean(cnie(w[mask])))
        rep = cnie.replicate_values(w[mask]).mean(axis=1)
        bins[name] = BinEstimate(value=est, std_error=float(np.std(rep, ddof=1)))
        reps[name] = rep
    contrasts: dict[str, ContrastEstimate] = {}
    for name, (a, b) in (("low_minus_mid", ("low", "mid")), ("high_minus_mid", ("high", "mid"))):
        est = bins[a].value - bins[b].value
        rep = reps[a] - reps[b]
        se, p = _bootstrap_p(est, rep)
        contrasts[name] = ContrastEstimate(value=est, std_error=se, p_value=p)
    return bins, contrasts, edges, counts


def _monotonicity_from_stage(stage, spec: AnalysisSpec) -> MonotonicityResult:
    w = stage.w
    d = stage.driver_residual
    y = stage.outcome_residual
    n = len(y)
    basis = stage.basis

    design_spline = basis.design(w) * d[:, None]
    design_linear = np.column_stack([d, w * d])
    penalty = second_difference_penalty(basis.n_basis)
    ridge = spec.ridge if spec.ridge > 0 else 1e-12

    # factor both normal-equation systems once; only the right-hand side
    # changes across bootstrap replicates
    gram_s = design_spline.T @ design_spline + ridge * (penalty.T @ penalty)
    gram_l = design_linear.T @ design_linear
    try:
        chol_s = cho_factor(gram_s)
        chol_l = cho_factor(gram_l)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"degenerate design in monotonicity test: {exc}") from exc

    def stat_for(target: np.ndarray) -> tuple[float, float, float, np.ndarray]:
        c_s = cho_solve(chol_s, design_spline.T @ target)
        c_l = cho_solve(chol_l, design_linear.T @ target)
        fit_l = design_linear @ c_l
        rss_s = float(np.sum((target - design_spline @ c_s) ** 2))
        rss_l = float(np.sum((target - fit_l) ** 2))
        stat = max(0.0, (rss_l - rss_s) / rss_s * (n - basis.n_basis))
        return stat, rss_l, rss_s, fit_l

    statistic, rss_lin, rss_spl, fitted_linear = stat_for(y)

    resid = y - fitted_linear
    resid = resid - resid.mean()
    rng = np.random.default_rng(derive_seed(spec.seed, "monotonicity-null"))
    exceed = 0
    for _ in range(spec.bootstrap_reps):
        y_star = fitted_linear + resid[rng.integers(0, n, n)]
        stat_b, _, _, _ = stat_for(y_star)
        if stat_b >= statistic:
            exceed += 1
    p = (1.0 + exceed) / (spec.bootstrap_reps + 1.0)
    return MonotonicityResult(
        statistic=statistic, p_value=p, rss_linear=rss_lin, rss_spline=rss_spl
    )


def quantile_contrasts(table: ObservationTable, spec: AnalysisSpec) -> ShapeTestReport:
    """Quartile-bin conditional indirect effects and their contrasts.

    Bin membership is fixed by the observed moderator quartiles; bin means
    are the indirect-effect curve averaged over member observations, with
    uncertainty from the final-stage bootstrap replicates.
    """
    return shape_test_report(table, spec)


def monotonicity_test(table: ObservationTable, spec: AnalysisSpec) -> MonotonicityResult:
    """Test a linear effect-in-moderator against the full spline.

    The statistic is the relative RSS gap scaled by residual degrees of
    freedom; its null distribution comes from a residual bootstrap under the
    fitted linear model, so the test is calibrated without distributional
    assumptions.
    """
    engine = _MediationEngine(table, spec)
    return _monotonicity_from_stage(engine.stage("theta"), spec)


def shape_test_report(table: ObservationTable, spec: AnalysisSpec) -> ShapeTestReport:
    """Contrasts and monotonicity test from one shared fit of the machinery."""
    engine = _MediationEngine(table, spec)
    cnie = engine.cnie()
    mono = _monotonicity_from_stage(engine.stage("theta"), spec)
    w = table.role_column(ColumnRole.MODERATOR)
    bins, contrasts, edges, counts = _contrasts_from_curve(cnie, w)
    return ShapeTestReport(
        cnie_low=bins["low"],
        cnie_mid=bins["mid"],
        cnie_high=bins["high"],
        contrast_low_minus_mid=contrasts["low_minus_mid"],
        contrast_high_minus_mid=contrasts["high_minus_mid"],
        monotonicity_statistic=mono.statistic,
        monotonicity_p=mono.p_value,
        bin_edges=edges,
        bin_counts=counts,
    )


def argmin_location(curve: EffectCurve, curvature_p: float | None = None) -> float | None:
    """Location of the curve's minimum, or ``None`` when no dip is found.

    The grid argmin is refined by a parabola through the three surrounding
    points. Returns ``None`` (no U-shape) when the argmin sits on the support
    boundary, or when a supplied curvature/nonlinearity p-value is >= .05.
    """
    grid = curve.grid
    values = curve.estimate
    if len(grid) < 10:
        raise UsageError(f"curve needs >= 10 grid points, got {len(grid)}")
    i = int(np.argmin(values))
    if i == 0 or i == len(grid) - 1:
        return None
    if curvature_p is not None and curvature_p >= 0.05:
        return None
    x0, x1, x2 = grid[i - 1 : i + 2]
    y0, y1, y2 = values[i - 1 : i + 2]
    a, b, _ = np.polyfit([x0, x1, x2], [y0, y1, y2], 2)
    if a <= 0:
        return float(x1)
    vertex = -b / (2.0 * a)
    return float(np.clip(vertex, x0, x2))


@dataclass(frozen=True)
class OLSThetaFit:
    """Outcome-equation linear interaction fit: theta(w) = b1 + b3 * w."""

    b1: float
    b3: float
    var_b1: float
    var_b3: float
    cov_b1_b3: float
    dof: int
    sigma2: float

    def curve(self, w: np.ndarray) -> np.ndarray:
        return self.b1 + self.b3 * np.asarray(w, dtype=np.float64)

    def std_error(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        var = self.var_b1 + w**2 * self.var_b3 + 2.0 * w * self.cov_b1_b3
        return np.sqrt(np.maximum(var, 0.0))

    def bands(self, w: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
        from scipy.stats import t as t_dist

        crit = float(t_dist.ppf(0.5 + level / 2.0, self.dof))
        est = self.curve(w)
        half = crit * self.std_error(w)
        return est - half, est + half


@dataclass(frozen=True)
class OLSBenchmarkReport:
    """Classic two-equation moderated mediation fitted by least squares.

    The indirect-effect function is affine in the moderator by construction:
    ``indirect(w) = a1 * (b1 + b3 * w)``.
    """

    mediator_coefs: dict[str, float]
    outcome_coefs: dict[str, float]
    a1: float
    b1: float
    b3: float
    treatment_direct: float
    average_indirect: float
    average_indirect_se: float
    indirect_intercept: float
    indirect_slope: float
    n_rows: int
    theta: OLSThetaFit

    def indirect_at(self, w) -> np.ndarray:
        return self.indirect_intercept + self.indirect_slope * np.asarray(w, dtype=np.float64)


def _check_full_rank(design: np.ndarray, names: Sequence[str]) -> None:
    rank = np.linalg.matrix_rank(design)
    if rank == design.shape[1]:
        return
    offending = []
    for j in range(design.shape[1]):
        others = np.delete(design, j, axis=1)
        proj, *_ = np.linalg.lstsq(others, design[:, j], rcond=None)
        resid = design[:, j] - others @ proj
        scale = max(1.0, float(np.linalg.norm(design[:, j])))
        if np.linalg.norm(resid) <= 1e-8 * scale:
            offending.append(names[j])
    raise SolverError(f"collinear design; offending column(s): {offending or list(names)}")


def _ols_designs(table: ObservationTable):
    t = table.role_column(ColumnRole.TREATMENT)
    m = table.role_column(ColumnRole.MEDIATOR)
    w = table.role_column(ColumnRole.MODERATOR)
    y = table.role_column(ColumnRole.OUTCOME)
    X = table.covariate_matrix()
    cov_names = list(table.covariate_names)
    t_name = table.role_name(ColumnRole.TREATMENT)
    m_name = table.role_name(ColumnRole.MEDIATOR)
    w_name = table.role_name(ColumnRole.MODERATOR)

    med_design = np.column_stack([np.ones_like(t), t, w, X])
    med_names = ["const", t_name, w_name, *cov_names]
    out_design = np.column_stack([np.ones_like(t), m, w, m * w, t, X])
    out_names = ["const", m_name, w_name, f"{m_name}:{w_name}", t_name, *cov_names]
    return (med_design, med_names, m), (out_design, out_names, y), w


def fit_ols_theta(table: ObservationTable) -> OLSThetaFit:
    """Linear-interaction effect function with its homoskedastic covariance."""
    _, (design, names, y), _ = _ols_designs(table)
    _check_full_rank(design, names)
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    n, p = design.shape
    resid = y - design @ coef
    dof = n - p
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    i_m, i_mw = 1, 3
    return OLSThetaFit(
        b1=float(coef[i_m]),
        b3=float(coef[i_mw]),
        var_b1=float(cov[i_m, i_m]),
        var_b3=float(cov[i_mw, i_mw]),
        cov_b1_b3=float(cov[i_m, i_mw]),
        dof=dof,
        sigma2=sigma2,
    )


def ols_benchmark(
    table: ObservationTable, bootstrap_reps: int = 500, seed: int = 42
) -> OLSBenchmarkReport:
    """Two least-squares equations and the affine indirect-effect function.

    The average indirect effect is evaluated at the mean moderator value;
    its standard error comes from a row-resampling bootstrap of both
    equations jointly.
    """
    (med_design, med_names, m), (out_design, out_names, y), w = _ols_designs(table)
    _check_full_rank(med_design, med_names)
    _check_full_rank(out_design, out_names)

    med_coef, _, _, _ = np.linalg.lstsq(med_design, m, rcond=None)
    out_coef, _, _, _ = np.linalg.lstsq(out_design, y, rcond=None)
    a1 = float(med_coef[1])
    b1 = float(out_coef[1])
    b3 = float(out_coef[3])
    c_direct = float(out_coef[4])
    w_mean = float(np.mean(w))
    average = a1 * (b1 + b3 * w_mean)

    n = len(m)
    rng = np.random.default_rng(derive_seed(seed, "ols-benchmark"))
    draws = np.empty(bootstrap_reps)
    for b in range(bootstrap_reps):
        idx = rng.integers(0, n, n)
        mc, *_ = np.linalg.lstsq(med_design[idx], m[idx], rcond=None)
        oc, *_ = np.linalg.lstsq(out_design[idx], y[idx], rcond=None)
        draws[b] = mc[1] * (oc[1] + oc[3] * np.mean(w[idx]))
    se = float(np.std(draws, ddof=1))

    return OLSBenchmarkReport(
        mediator_coefs=dict(zip(med_names, map(float, med_coef))),
        outcome_coefs=dict(zip(out_names, map(float, out_coef))),
        a1=a1,
        b1=b1,
        b3=b3,
        treatment_direct=c_direct,
        average_indirect=average,
        average_indirect_se=se,
        indirect_intercept=a1 * b1,
        indirect_slope=a1 * b3,
        n_rows=n,
        theta=fit_ols_theta(table),
    )


def robustness_value(t_statistic: float, dof: int, q: float = 1.0) -> float:
    """Minimal confounder strength (partial variance share with both driver
    and outcome) that would reduce the estimate by the fraction ``q``.

    With f = q|t|/sqrt(dof), the value is (sqrt(f^4 + 4 f^2) - f^2) / 2,
    which is 0 at t = 0 and approaches 1 as |t| grows.
    """
    if dof < 1:
        raise UsageError(f"dof must be >= 1, got {dof}")
    if q < 0:
        raise UsageError(f"q must be nonnegative, got {q}")
    f2 = (q * abs(t_statistic)) ** 2 / dof
    return 0.5 * (math.sqrt(f2 * f2 + 4.0 * f2) - f2)


def permutation_importance(
    model,
    features: np.ndarray,
    targets: np.ndarray,
    reps: int = 10,
    seed: int = 0,
    feature_names: Sequence[str] | None = None,
) -> list[tuple[object, float]]:
    """Mean MSE increase when each feature column is shuffled, sorted descending.

    Caveat for duplicated/correlated features: tree models split credit
    between copies, so permuting one copy understates the pair's joint
    importance.
    """
    if reps < 5:
        raise UsageError(f"reps must be >= 5, got {reps}")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise UsageError("features must be 2-D and match the model arity")
    names = list(feature_names) if feature_names is not None else list(range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise UsageError("feature_names length must match the feature count")

    base_mse = float(np.mean((y - model.predict(X)) ** 2))
    rng = np.random.default_rng(seed)
    results = []
    for j in range(X.shape[1]):
        increases = np.empty(reps)
        for r in range(reps):
            perm = rng.permutation(len(y))
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            increases[r] = float(np.mean((y - model.predict(Xp)) ** 2)) - base_mse
        results.append((names[j], float(np.mean(increases))))
    results.sort(key=lambda item: -item[1])
    return results


@dataclass(frozen=True)
class AblationCell:
    learner_family: str
    k_folds: int
    argmin: float | None
    curvature_p: float | None
    error: str | None = None

    @property
    def label(self) -> str:
        if self.error is not None:
            return f"error: {self.error}"
        return "none" if self.argmin is None else f"{self.argmin:.4f}"


@dataclass(frozen=True)
class AblationReport:
    cells: tuple[AblationCell, ...]


def ablation_grid(
    table: ObservationTable,
    learners: Sequence[LearnerSpec | str],
    folds: Sequence[int],
    spec: AnalysisSpec,
) -> AblationReport:
    """Re-estimate the indirect-effect curve per (learner, folds) configuration.

    Each cell records the refined argmin of the curve (or "none" under the
    boundary/curvature rule) plus the nonlinearity p-value used for that
    rule. Per-cell failures land in the cell; the sweep keeps going.
    """
    if not learners or not folds:
        raise UsageError("learners and folds must be nonempty")
    specs: list[LearnerSpec] = []
    for item in learners:
        specs.append(item if isinstance(item, LearnerSpec) else LearnerSpec(family=str(item)))

    cells: list[AblationCell] = []
    for learner in specs:
        for k in folds:
            variant = replace(spec, learner=learner, k_folds=int(k))
            try:
                engine = _MediationEngine(table, variant)
                cnie = engine.cnie()
                mono = _monotonicity_from_stage(engine.stage("theta"), variant)
                loc = argmin_location(cnie, curvature_p=mono.p_value)
                cells.append(
                    AblationCell(
                        learner_family=learner.family,
                        k_folds=int(k),
                        argmin=loc,
                        curvature_p=mono.p_value,
                    )
                )
            except Exception as exc:  # record and continue: one bad cell must not kill the sweep
                cells.append(
                    AblationCell(
                        learner_family=learner.family,
                        k_folds=int(k),
                        argmin=None,
                        curvature_p=None,
                        error=str(exc),
                    )
                )
    return AblationReport(cells=tuple(cells))
