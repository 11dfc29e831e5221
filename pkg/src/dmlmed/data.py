"""Role-tagged observation tables.

A table is a rectangular block of finite floats whose columns carry roles:
one outcome, one mediator, one treatment, one continuous moderator, and any
number of covariates (pre-encoded numeric dummies included). Ingestion is
strict: missing or non-numeric cells are rejected, never imputed.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ParseError, SchemaError, UsageError
from .learners import LearnerSpec


class ColumnRole(str, Enum):
    OUTCOME = "outcome"
    MEDIATOR = "mediator"
    TREATMENT = "treatment"
    MODERATOR = "moderator"
    COVARIATE = "covariate"


#: Roles that must map to exactly one column.
UNIQUE_ROLES = (
    ColumnRole.OUTCOME,
    ColumnRole.MEDIATOR,
    ColumnRole.TREATMENT,
    ColumnRole.MODERATOR,
)

RoleMap = Mapping[str, ColumnRole]
TableSource = Union[str, Path, bytes, IO[bytes], IO[str]]


class DroppedColumnWarning(UserWarning):
    """Emitted when ingestion drops columns absent from the role map."""


def _validate_roles(roles: RoleMap) -> None:
    for role in UNIQUE_ROLES:
        hits = [name for name, r in roles.items() if r == role]
        if len(hits) != 1:
            raise SchemaError(
                f"role map must assign exactly one column to {role.value!r}, got {hits!r}"
            )


@dataclass(frozen=True)
class StandardizationInfo:
    """Shift/scale applied per column, so estimates can be mapped back."""

    policy: str
    shift: Mapping[str, float]
    scale: Mapping[str, float]
    constant_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObservationTable:
    """Immutable dataset with role tags.

    ``values`` has shape ``(n_rows, len(names))`` and is made read-only on
    construction; all operations on tables are pure functions.
    """

    names: tuple[str, ...]
    roles: Mapping[str, ColumnRole]
    values: np.ndarray
    dropped_columns: tuple[str, ...] = ()
    standardization: StandardizationInfo | None = None

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(names):
            raise SchemaError(
                f"values must be 2-D with {len(names)} columns, got shape {values.shape}"
            )
        if values.shape[0] < 1:
            raise DomainError("table must contain at least one row")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ParseError(
                f"non-finite value at row {bad[0] + 1}, column {names[bad[1]]!r}",
                row=int(bad[0]) + 1,
                column=names[bad[1]],
            )
        if set(self.roles) != set(names):
            missing = set(names) - set(self.roles)
            extra = set(self.roles) - set(names)
            raise SchemaError(
                f"role map must cover exactly the table columns (missing={sorted(missing)}, "
                f"unknown={sorted(extra)})"
            )
        _validate_roles(self.roles)
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "roles", dict(self.roles))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None
        return self.values[:, j]

    def role_name(self, role: ColumnRole) -> str:
        """Column name carrying a unique role."""
        if role == ColumnRole.COVARIATE:
            raise UsageError("covariate is not a unique role; use covariate_names")
        for name, r in self.roles.items():
            if r == role:
                return name
        raise SchemaError(f"no column with role {role.value!r}")

    def role_column(self, role: ColumnRole) -> np.ndarray:
        return self.column(self.role_name(role))

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if self.roles[n] == ColumnRole.COVARIATE)

    def covariate_matrix(self) -> np.ndarray:
        cols = self.covariate_names
        if not cols:
            return np.empty((self.n_rows, 0))
        idx = [self.names.index(c) for c in cols]
        return self.values[:, idx]

    def replace_column(self, name: str, new_values: np.ndarray) -> "ObservationTable":
        """New table with one column swapped out (used by diagnostics/tests)."""
        j = self.names.index(name)
        values = self.values.copy()
        values[:, j] = np.asarray(new_values, dtype=np.float64)
        return replace(self, values=values)


def load_table(source: TableSource, roles: RoleMap) -> ObservationTable:
    """Ingest an RFC-4180-style CSV (header required, UTF-8, '.' decimals).

    Columns not named in ``roles`` are dropped with a
    :class:`DroppedColumnWarning` and recorded on the table. Missing columns,
    duplicate headers, and non-numeric cells are hard errors.
    """
    _validate_roles(roles)
    text = _as_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV: no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"duplicate header names: {dupes}")
    missing = [name for name in roles if name not in header]
    if missing:
        raise SchemaError(f"required column(s) missing from CSV header: {missing}")

    keep = [name for name in header if name in roles]
    keep_idx = [header.index(name) for name in keep]
    dropped = tuple(name for name in header if name not in roles)
    if dropped:
        warnings.warn(
            f"dropping {len(dropped)} column(s) not in the role map: {list(dropped)}",
            DroppedColumnWarning,
            stacklevel=2,
        )

    rows: list[list[float]] = []
    for i, record in enumerate(reader, start=1):
        if not record:
            continue
        if len(record) != len(header):
            raise ParseError(
                f"row {i} has {len(record)} fields, expected {len(header)}", row=i
            )
        parsed = []
        for j in keep_idx:
            cell = record[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(
                    f"cannot parse {cell!r} at row {i}, column {header[j]!r}",
                    row=i,
                    column=header[j],
                ) from None
            if not math.isfinite(value):
                raise ParseError(
                    f"non-finite value {cell!r} at row {i}, column {header[j]!r}",
                    row=i,
                    column=header[j],
                )
            parsed.append(value)
        rows.append(parsed)
    if not rows:
        raise DomainError("CSV contains a header but no data rows")

    values = np.asarray(rows, dtype=np.float64)
    table_roles = {name: roles[name] for name in keep}
    return ObservationTable(
        names=tuple(keep), roles=table_roles, values=values, dropped_columns=dropped
    )


def serialize_table(table: ObservationTable) -> str:
    """CSV text with full-precision floats; ``load_table`` round-trips it bit-exactly."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.names)
    for row in table.values:
        writer.writerow([repr(float(v)) for v in row])
    return out.getvalue()


class StandardizePolicy(str, Enum):
    NONE = "none"
    COVARIATES_ONLY = "covariates_only"
    ALL_CONTINUOUS = "all_continuous"


def standardize(
    table: ObservationTable, policy: StandardizePolicy | str = StandardizePolicy.COVARIATES_ONLY
) -> ObservationTable:
    """Center/scale selected columns to mean 0, sample sd 1 (n-1 denominator).

    Constant columns are left unchanged and flagged rather than failing. The
    shift/scale parameters ride along on ``table.standardization`` so curves
    can be reported on the original moderator scale.
    """
    policy = StandardizePolicy(policy)
    if policy == StandardizePolicy.NONE:
        return table
    if policy == StandardizePolicy.COVARIATES_ONLY:
        targets = list(table.covariate_names)
    else:
        targets = list(table.names)

    values = table.values.copy()
    shift: dict[str, float] = {}
    scale: dict[str, float] = {}
    constants: list[str] = []
    for name in targets:
        j = table.names.index(name)
        col = values[:, j]
        mu = float(np.mean(col))
        sd = float(np.std(col, ddof=1)) if len(col) > 1 else 0.0
        if sd == 0.0:
            constants.append(name)
            continue
        values[:, j] = (col - mu) / sd
        shift[name] = mu
        scale[name] = sd
    info = StandardizationInfo(
        policy=policy.value, shift=shift, scale=scale, constant_columns=tuple(constants)
    )
    return replace(table, values=values, standardization=info)


def moderator_support(table: ObservationTable, trim: float = 0.0) -> tuple[float, float]:
    """Closed interval [q(trim), q(1-trim)] of the moderator column.

    ``trim=0`` returns exactly [min, max]. A degenerate (zero-width) interval
    is returned as-is; downstream grid construction rejects it.
    """
    if not 0.0 <= trim < 0.5:
        raise DomainError(f"trim must be in [0, 0.5), got {trim}")
    w = table.role_column(ColumnRole.MODERATOR)
    if w.size == 0:
        raise DomainError("empty moderator column")
    if trim == 0.0:
        return float(np.min(w)), float(np.max(w))
    lo, hi = np.quantile(w, [trim, 1.0 - trim], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class AnalysisSpec:
    """Everything one estimation run needs besides the data.

    ``learner`` may be a single :class:`LearnerSpec` or a tuple of them; a
    tuple means per-fold selection of the family with the lowest tuning CV
    MSE, which is how ensemble-style nuisance fitting is realized here.
    """

    learner: LearnerSpec | tuple[LearnerSpec, ...]
    roles: RoleMap | None = None
    k_folds: int = 5
    seed: int = 42
    grid_size: int = 100
    bootstrap_reps: int = 500
    ci_level: float = 0.95
    second_stage_conditions_on_treatment: bool = True
    spline_degree: int = 3
    n_basis: int = 10
    ridge: float = 1e-6
    support_trim: float = 0.0

    def __post_init__(self):
        if self.k_folds < 2:
            raise UsageError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.grid_size < 10:
            raise UsageError(f"grid_size must be >= 10, got {self.grid_size}")
        if not 0.0 < self.ci_level < 1.0:
            raise UsageError(f"ci_level must be in (0, 1), got {self.ci_level}")
        if self.roles is not None:
            _validate_roles(self.roles)

    def learner_specs(self) -> tuple[LearnerSpec, ...]:
        if isinstance(self.learner, LearnerSpec):
            return (self.learner,)
        return tuple(self.learner)


def check_table_for_spec(table: ObservationTable, spec: AnalysisSpec) -> None:
    """Guard: folds must stay large enough to train tree ensembles."""
    if table.n_rows < 5 * spec.k_folds:
        raise UsageError(
            f"table has {table.n_rows} rows; need at least 5 x k_folds = {5 * spec.k_folds}"
        )
    if spec.roles is not None and dict(spec.roles) != dict(table.roles):
        raise SchemaError("AnalysisSpec.roles disagrees with the table's role map")
