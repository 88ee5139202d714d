"""Two-domain panel data model shared by all estimators.

A panel holds outcomes for the same J+1 units in two domains: the target
domain (outcomes ``Y`` over S periods, covariates ``X``) where the causal
effect is sought, and a reference domain (outcomes ``F`` over T periods,
covariates ``Z``) used to anchor the counterfactual.  The treated unit
always sits at row index 0; the remaining J rows are donors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class PanelValidationError(ValueError):
    """Raised when a panel fails structural validation."""


def _as_matrix(a, n_rows: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(n_rows, -1) if arr.size else arr.reshape(n_rows, 0)
    if arr.ndim != 2:
        raise PanelValidationError(f"{name} must be a 2-D array, got ndim={arr.ndim}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanelDataset:
    """Immutable two-domain panel.

    ``unit_ids[0]`` is the treated target unit; ``unit_ids[1:]`` are the
    J donors.  Matrices all share the row dimension J+1.
    """

    unit_ids: tuple
    Y: np.ndarray  # (J+1, S) target-domain outcomes
    F: np.ndarray  # (J+1, T) reference-domain outcomes
    X: np.ndarray  # (J+1, d_t) target-domain covariates
    Z: np.ndarray  # (J+1, d_r) reference-domain covariates

    def __post_init__(self):
        n = len(self.unit_ids)
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "Y", _as_matrix(self.Y, n, "Y"))
        object.__setattr__(self, "F", _as_matrix(self.F, n, "F"))
        object.__setattr__(self, "X", _as_matrix(self.X, n, "X"))
        object.__setattr__(self, "Z", _as_matrix(self.Z, n, "Z"))

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_donors(self) -> int:
        return self.n_units - 1

    @property
    def n_target_periods(self) -> int:
        return self.Y.shape[1]

    @property
    def n_reference_periods(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True)
class UnitAggregates:
    """Per-unit time means of the outcomes in each domain."""

    Y_bar: np.ndarray  # (J+1,)
    F_bar: np.ndarray  # (J+1,)

    def __post_init__(self):
        y = np.asarray(self.Y_bar, dtype=float)
        f = np.asarray(self.F_bar, dtype=float)
        y.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "Y_bar", y)
        object.__setattr__(self, "F_bar", f)

    @property
    def n_donors(self) -> int:
        return self.Y_bar.shape[0] - 1


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    checks: tuple = field(default_factory=tuple)  # (name, ok, message)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c[1]]


def validate(dataset: PanelDataset) -> ValidationReport:
    """Structural validation: dimensions, finiteness, at least one donor.

    Returns a diagnostic report; never raises.  Callers decide whether a
    failed report aborts the run.
    """
    checks = []
    n = dataset.n_units

    checks.append(("has_donors", dataset.n_donors >= 1,
                   f"need J >= 1 donors, got J={dataset.n_donors}"))

    for name in ("Y", "F", "X", "Z"):
        mat = getattr(dataset, name)
        ok = mat.shape[0] == n
        checks.append((f"{name}_rows", ok,
                       f"{name} has {mat.shape[0]} rows, expected {n}"))

    checks.append(("target_periods", dataset.Y.shape[1] >= 1,
                   f"S={dataset.Y.shape[1]} target periods, need >= 1"))
    checks.append(("reference_periods", dataset.F.shape[1] >= 1,
                   f"T={dataset.F.shape[1]} reference periods, need >= 1"))

    for name in ("Y", "F", "X", "Z"):
        mat = getattr(dataset, name)
        bad = np.argwhere(~np.isfinite(mat))
        if bad.size:
            i, j = bad[0]
            unit = dataset.unit_ids[i] if i < n else i
            msg = f"non-finite entry in {name} at unit={unit!r}, column={j + 1}"
        else:
            msg = ""
        checks.append((f"{name}_finite", bad.size == 0, msg))

    passed = all(ok for _, ok, _ in checks)
    return ValidationReport(passed=passed, checks=tuple(checks))


def require_valid(dataset: PanelDataset) -> None:
    """Raise PanelValidationError if the dataset fails validation."""
    report = validate(dataset)
    if not report.passed:
        msgs = "; ".join(m for _, ok, m in report.checks if not ok)
        raise PanelValidationError(f"invalid panel: {msgs}")


def aggregate(dataset: PanelDataset) -> UnitAggregates:
    """Per-unit time means over the S target and T reference periods."""
    return UnitAggregates(Y_bar=dataset.Y.mean(axis=1), F_bar=dataset.F.mean(axis=1))


def _minmax_columns(mat: np.ndarray, label: str) -> np.ndarray:
    out = np.empty_like(mat)
    for j in range(mat.shape[1]):
        col = mat[:, j]
        lo, hi = col.min(), col.max()
        if hi == lo:
            warnings.warn(
                f"constant {label} covariate column {j} mapped to all zeros",
                stacklevel=3,
            )
            out[:, j] = 0.0
        else:
            out[:, j] = (col - lo) / (hi - lo)
    return out


def normalize_covariates(dataset: PanelDataset, enabled: bool = True) -> PanelDataset:
    """Min-max rescale each covariate column of X and Z to [0, 1].

    Scaling is across all J+1 units.  Outcomes are untouched.  A constant
    column becomes all zeros and a warning is emitted.  ``enabled=False``
    returns the dataset unchanged.
    """
    if not enabled:
        return dataset
    return PanelDataset(
        unit_ids=dataset.unit_ids,
        Y=dataset.Y,
        F=dataset.F,
        X=_minmax_columns(np.array(dataset.X), "target-domain"),
        Z=_minmax_columns(np.array(dataset.Z), "reference-domain"),
    )


def with_pseudo_target(dataset: PanelDataset, unit_id) -> PanelDataset:
    """Reorder the panel so ``unit_id`` sits at the target row.

    All remaining units (including the original target) become donors.
    Used by the placebo test.
    """
    ids = list(dataset.unit_ids)
    if unit_id not in ids:
        raise KeyError(f"unknown unit {unit_id!r}")
    k = ids.index(unit_id)
    order = [k] + [i for i in range(len(ids)) if i != k]
    return PanelDataset(
        unit_ids=tuple(ids[i] for i in order),
        Y=dataset.Y[order],
        F=dataset.F[order],
        X=dataset.X[order],
        Z=dataset.Z[order],
    )
