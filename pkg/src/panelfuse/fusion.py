"""Budgeted synthetic-control data fusion.

Learns donor weights from the reference domain by trading off three
matching blocks (reference outcome series, reference covariates, target
covariates) under a data-driven budget, then transfers the weights to the
target domain to estimate the treatment effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .panel import PanelDataset, normalize_covariates, require_valid
from .solver import (
    QcqpProblem,
    SolverConfig,
    SolverError,
    SolverInfeasible,
    WeightVector,
    nse,
    solve_simplex_ls,
    solve_budgeted_qcqp,
)


@dataclass(frozen=True)
class BudgetVector:
    """Nonnegative budget shares over the three NSE blocks, summing to one."""

    b_F: float
    b_Z: float
    b_X: float

    def __post_init__(self):
        if min(self.b_F, self.b_Z, self.b_X) < 0:
            raise ValueError("budget components must be nonnegative")
        if abs(self.b_F + self.b_Z + self.b_X - 1.0) > 1e-12:
            raise ValueError("budget components must sum to one")

    def as_tuple(self):
        return (self.b_F, self.b_Z, self.b_X)


@dataclass(frozen=True)
class FusionConfig:
    eta_Z: float = 0.1
    eta_X: float = 0.1
    budget_grid_step: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)
    normalize_covariates: bool = True

    def __post_init__(self):
        if self.eta_Z < 0 or self.eta_X < 0:
            raise ValueError("eta slacks must be nonnegative")
        if not (0 < self.budget_grid_step <= 1):
            raise ValueError("budget_grid_step must lie in (0, 1]")
        n = round(1.0 / self.budget_grid_step)
        if abs(n * self.budget_grid_step - 1.0) > 1e-9:
            raise ValueError("budget_grid_step must divide 1")

    @property
    def grid_divisions(self) -> int:
        return round(1.0 / self.budget_grid_step)


def budget_grid(step: float) -> list[BudgetVector]:
    """Deterministic simplex grid, lexicographic in (b_F, b_Z)."""
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError("step must divide 1")
    grid = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            b_f = i / n
            b_z = j / n
            grid.append(BudgetVector(b_F=b_f, b_Z=b_z,
                                     b_X=max(0.0, 1.0 - b_f - b_z)))
    return grid


@dataclass(frozen=True)
class FusionResult:
    w_star: WeightVector
    b_star: BudgetVector | None
    psi_hat_sc: float
    gap_series_target: np.ndarray  # length S
    gap_series_reference: np.ndarray  # length T
    nse_F: float
    nse_Z: float | None
    nse_X: float | None
    baseline_nse_Z: float | None
    baseline_nse_X: float | None
    per_budget_table: tuple  # (BudgetVector, nse_F or nan, feasible)
    unit_ids: tuple

    @property
    def weights_by_unit(self) -> dict:
        return {uid: float(wi) for uid, wi in zip(self.unit_ids[1:], self.w_star.w)}


class FusionError(RuntimeError):
    pass


def _matching_blocks(ds: PanelDataset):
    """(label, target_vector, donor_matrix) for each nonempty block."""
    blocks = [("F", ds.F[0], ds.F[1:])]
    if ds.Z.shape[1] > 0:
        blocks.append(("Z", ds.Z[0], ds.Z[1:]))
    if ds.X.shape[1] > 0:
        blocks.append(("X", ds.X[0], ds.X[1:]))
    return blocks


def run_fusion(dataset: PanelDataset, cfg: FusionConfig | None = None) -> FusionResult:
    """Full budget-grid search: baselines, per-budget constrained solves,
    budget selection by reference-outcome NSE, and the transferred
    synthetic-control estimate.

    Covariate blocks with zero columns are dropped from the objective and
    their constraints omitted.
    """
    cfg = cfg or FusionConfig()
    require_valid(dataset)
    ds = normalize_covariates(dataset, cfg.normalize_covariates)
    J = ds.n_donors
    blocks = dict((lab, (t, d)) for lab, t, d in _matching_blocks(ds))

    baselines = {}
    rhs = {}
    for lab, eta in (("Z", cfg.eta_Z), ("X", cfg.eta_X)):
        if lab in blocks:
            t, d = blocks[lab]
            w_base = solve_simplex_ls(t, d, cfg.solver)
            baselines[lab] = w_base
            rhs[lab] = (1.0 + eta) * (1.0 + w_base.objective) - 1.0

    constraints = [(blocks[lab][0], blocks[lab][1], rhs[lab]) for lab in rhs]
    budget_for = {"F": "b_F", "Z": "b_Z", "X": "b_X"}

    table = []
    best = None  # (nse_F, index, budget, WeightVector)
    first_error = None
    for idx, b in enumerate(budget_grid(cfg.budget_grid_step)):
        obj = [(getattr(b, budget_for[lab]), t, d)
               for lab, (t, d) in blocks.items()]
        problem = QcqpProblem(objective_blocks=obj, constraints=constraints, J=J)
        try:
            wv, _ = solve_budgeted_qcqp(problem, cfg.solver)
        except SolverInfeasible:
            table.append((b, math.nan, False))
            continue
        except SolverError as exc:
            raise FusionError(f"solver failed at budget {b.as_tuple()}: {exc}") from exc
        nse_f = nse(blocks["F"][0], blocks["F"][1], wv)
        table.append((b, nse_f, True))
        if best is None or nse_f < best[0]:
            best = (nse_f, idx, b, wv)

    if best is None:
        raise SolverInfeasible(
            "every budget on the grid was infeasible; consider larger "
            "eta_Z / eta_X slack values"
        )

    _, _, b_star, w_star = best
    return _finalize(dataset, ds, cfg, w_star, b_star, tuple(table), baselines, rhs)


def _finalize(dataset, ds, cfg, w_star, b_star, table, baselines, rhs):
    w = w_star.w
    gap_target = dataset.Y[0] - w @ dataset.Y[1:]
    gap_ref = dataset.F[0] - w @ dataset.F[1:]
    blocks = dict((lab, (t, d)) for lab, t, d in _matching_blocks(ds))

    nses = {lab: nse(t, d, w) for lab, (t, d) in blocks.items()}
    for lab in rhs:
        if nses[lab] > rhs[lab] + 10 * cfg.solver.constraint_tol:
            raise FusionError(
                f"selected weights violate the {lab} matching constraint: "
                f"NSE {nses[lab]:.6e} > allowed {rhs[lab]:.6e}"
            )

    return FusionResult(
        w_star=w_star,
        b_star=b_star,
        psi_hat_sc=float(gap_target.mean()),
        gap_series_target=gap_target,
        gap_series_reference=gap_ref,
        nse_F=nses["F"],
        nse_Z=nses.get("Z"),
        nse_X=nses.get("X"),
        baseline_nse_Z=baselines["Z"].objective if "Z" in baselines else None,
        baseline_nse_X=baselines["X"].objective if "X" in baselines else None,
        per_budget_table=table,
        unit_ids=ds.unit_ids,
    )


def run_naive(dataset: PanelDataset, cfg: FusionConfig | None = None) -> FusionResult:
    """Single stacked least-squares fit over [F-series; Z; X].

    The comparison baseline: with many reference periods the stacked fit
    is dominated by the reference outcomes and may track the target-domain
    covariates poorly.
    """
    cfg = cfg or FusionConfig()
    require_valid(dataset)
    ds = normalize_covariates(dataset, cfg.normalize_covariates)
    blocks = _matching_blocks(ds)
    target = np.concatenate([t for _, t, _ in blocks])
    donors = np.hstack([d for _, _, d in blocks])
    w_star = solve_simplex_ls(target, donors, cfg.solver)
    return _finalize(dataset, ds, cfg, w_star, None, (), {}, {})


def run_sensitivity(dataset: PanelDataset, cfg: FusionConfig,
                    eta_grid) -> list[dict]:
    """One fusion summary row per (eta_Z, eta_X) grid point.

    Infeasible or failing points are flagged in their row rather than
    aborting the sweep.
    """
    eta_grid = list(eta_grid)
    if not eta_grid:
        raise ValueError("eta grid must be non-empty")
    rows = []
    for eta_z, eta_x in eta_grid:
        point_cfg = replace(cfg, eta_Z=eta_z, eta_X=eta_x)
        row = {"eta_Z": eta_z, "eta_X": eta_x}
        try:
            res = run_fusion(dataset, point_cfg)
        except (SolverError, FusionError) as exc:
            row.update(feasible=False, psi_hat_sc=math.nan, nse_F=math.nan,
                       nse_Z=math.nan, nse_X=math.nan, error=str(exc))
        else:
            row.update(feasible=True, psi_hat_sc=res.psi_hat_sc,
                       nse_F=res.nse_F, nse_Z=res.nse_Z, nse_X=res.nse_X,
                       error="")
        rows.append(row)
    return rows
