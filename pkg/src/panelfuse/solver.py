"""Simplex-constrained least squares and budgeted QCQP solves.

All problems here are small and dense (J donors, J <= ~100), with
objectives and constraints built from normalized squared errors

    NSE(target, w) = (1/len(target)) * ||target - donors^T w||^2,

minimized over the probability simplex.  The constrained problem is
handled by an augmented-Lagrangian outer loop around an accelerated
projected-gradient (FISTA) inner solve with exact sorting-based Euclidean
projection onto the simplex.  Everything is deterministic: initialization
is the uniform weight vector and no randomness is used internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_CLAMP = 1e-10
_SUM_TOL = 1e-8


class SolverError(RuntimeError):
    pass


class SolverNonConvergence(SolverError):
    """Iteration cap hit before the stopping rule fired."""

    def __init__(self, message, best_w=None, residuals=None):
        super().__init__(message)
        self.best_w = best_w
        self.residuals = residuals or {}


class SolverInfeasible(SolverError):
    """Constraint violation stopped shrinking across penalty increases."""

    def __init__(self, message, best_w=None, best_violation=None):
        super().__init__(message)
        self.best_w = best_w
        self.best_violation = best_violation


@dataclass(frozen=True)
class WeightVector:
    """Donor weights on the probability simplex.

    Tiny negative entries from floating-point projection are clamped to
    zero on construction.  Solver outputs carry the achieved objective and
    the projected-gradient (KKT) residual when available.
    """

    w: np.ndarray
    objective: float | None = None
    kkt_residual: float | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("w must be a nonempty 1-D vector")
        if w.min() < -_CLAMP:
            raise ValueError(f"negative weight {w.min()} below clamp tolerance")
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()}, expected 1")
        w = np.clip(w, 0.0, None)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class SolverConfig:
    max_outer_iters: int = 200
    max_inner_iters: int = 5000
    objective_tol: float = 1e-10  # relative
    constraint_tol: float = 1e-8  # absolute NSE slack
    penalty_growth: float = 10.0
    initial_penalty: float = 1.0

    def __post_init__(self):
        for name in ("max_outer_iters", "max_inner_iters", "objective_tol",
                     "constraint_tol", "penalty_growth", "initial_penalty"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Exact Euclidean projection onto the unit simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    k = idx[cond][-1]
    theta = css[k - 1] / k
    return np.clip(v - theta, 0.0, None)


class _QuadBlock:
    """NSE(target, w) as the quadratic w'Gw - 2h'w + c (1/n absorbed)."""

    __slots__ = ("G", "h", "c", "lmax")

    def __init__(self, target, donors):
        target = np.asarray(target, dtype=float).ravel()
        donors = np.asarray(donors, dtype=float)
        if donors.ndim == 1:
            donors = donors.reshape(-1, 1)
        if target.size == 0:
            raise ValueError("empty target vector")
        if donors.shape[1] != target.size:
            raise ValueError(
                f"donor columns {donors.shape[1]} != target length {target.size}"
            )
        n = float(target.size)
        self.G = donors @ donors.T / n
        self.h = donors @ target / n
        self.c = float(target @ target) / n
        self.lmax = float(np.linalg.eigvalsh(self.G)[-1]) if self.G.size else 0.0

    def value(self, w):
        return float(w @ (self.G @ w) - 2.0 * (self.h @ w) + self.c)

    def value_grad(self, w):
        gw = self.G @ w
        return float(w @ gw - 2.0 * (self.h @ w) + self.c), 2.0 * (gw - self.h)


def nse(target, donors, w) -> float:
    """Normalized squared error of the weighted donor combination."""
    if isinstance(w, WeightVector):
        w = w.w
    w = np.asarray(w, dtype=float)
    return _QuadBlock(target, donors).value(w)


@dataclass(frozen=True)
class QcqpProblem:
    """Weighted sum of NSE blocks subject to NSE <= rhs constraints.

    ``objective_blocks`` holds (weight, target, donors) triples;
    ``constraints`` holds (target, donors, rhs) triples with constant
    right-hand sides (denominators already cleared).  A constraint with
    rhs = inf is inactive and dropped.
    """

    objective_blocks: tuple
    constraints: tuple
    J: int

    def __post_init__(self):
        object.__setattr__(self, "objective_blocks", tuple(self.objective_blocks))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for bw, _, _ in self.objective_blocks:
            if bw < 0:
                raise ValueError("objective block weight must be >= 0")
        for _, _, rhs in self.constraints:
            if rhs < 0:
                raise ValueError("constraint rhs must be >= 0")


def _fista(value_grad, w0, lip, cfg, tol):
    """Monotone FISTA over the simplex with backtracking from ``lip``.

    Returns (w, objective, kkt_residual, converged).
    """
    w = w0
    y = w0
    t = 1.0
    f_w, _ = value_grad(w)
    lip = max(lip, 1e-12)
    stall = 0
    for _ in range(cfg.max_inner_iters):
        f_y, g_y = value_grad(y)
        while True:
            w_new = project_simplex(y - g_y / lip)
            d = w_new - y
            f_new, _ = value_grad(w_new)
            if f_new <= f_y + g_y @ d + 0.5 * lip * (d @ d) + 1e-15:
                break
            lip *= 2.0
        if f_new > f_w:  # monotone restart
            w_new = project_simplex(w - value_grad(w)[1] / lip)
            f_new, _ = value_grad(w_new)
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + (t - 1.0) / t_new * (w_new - w)
        rel_change = abs(f_w - f_new) / max(1.0, abs(f_new))
        w, f_w, t = w_new, f_new, t_new
        stall = stall + 1 if rel_change <= tol else 0
        if stall >= 3:
            break
    else:
        _, g = value_grad(w)
        kkt = float(np.max(np.abs(w - project_simplex(w - g))))
        return w, f_w, kkt, False
    _, g = value_grad(w)
    kkt = float(np.max(np.abs(w - project_simplex(w - g))))
    return w, f_w, kkt, True


def solve_simplex_ls(target, donors, cfg: SolverConfig | None = None) -> WeightVector:
    """Minimize NSE(target, w) over the simplex.

    ``target`` may be a stacked vector of several matching blocks (the
    naive estimator); donors rows must stack correspondingly.
    """
    cfg = cfg or SolverConfig()
    block = _QuadBlock(target, donors)
    J = block.G.shape[0]
    if J < 1:
        raise ValueError("need at least one donor")
    w0 = np.full(J, 1.0 / J)
    if block.lmax == 0.0:  # constant objective
        return WeightVector(w=w0, objective=block.value(w0), kkt_residual=0.0)
    w, f, kkt, ok = _fista(block.value_grad, w0, 2.0 * block.lmax, cfg,
                           cfg.objective_tol)
    if not ok:
        raise SolverNonConvergence(
            f"simplex least squares did not converge in {cfg.max_inner_iters} "
            f"iterations (kkt residual {kkt:.3e})",
            best_w=WeightVector(w=project_simplex(w), objective=f, kkt_residual=kkt),
            residuals={"kkt": kkt},
        )
    return WeightVector(w=project_simplex(w), objective=f, kkt_residual=kkt)


@dataclass
class QcqpDiagnostics:
    objective: float = math.nan
    constraint_slacks: tuple = ()
    final_penalty: float = math.nan
    outer_iters: int = 0
    feasible: bool = False
    kkt_residual: float = math.nan
    notes: list = field(default_factory=list)


def solve_budgeted_qcqp(problem: QcqpProblem, cfg: SolverConfig | None = None):
    """Augmented-Lagrangian solve of the budgeted NSE problem.

    Returns (WeightVector, QcqpDiagnostics).  Raises SolverInfeasible when
    the minimum constraint violation stops shrinking across consecutive
    penalty increases, and SolverNonConvergence on iteration caps.
    """
    cfg = cfg or SolverConfig()
    J = problem.J
    if J < 1:
        raise ValueError("need at least one donor")

    obj_blocks = [(bw, _QuadBlock(t, d)) for bw, t, d in problem.objective_blocks]
    con_blocks = [(_QuadBlock(t, d), float(rhs))
                  for t, d, rhs in problem.constraints
                  if math.isfinite(rhs)]

    # Collapse the objective into one quadratic form.
    P = np.zeros((J, J))
    q = np.zeros(J)
    c0 = 0.0
    for bw, blk in obj_blocks:
        if blk.G.shape[0] != J:
            raise ValueError("objective block dimension mismatch")
        P += bw * blk.G
        q += bw * blk.h
        c0 += bw * blk.c
    obj_lmax = float(np.linalg.eigvalsh(P)[-1]) if J else 0.0

    def objective(w):
        return float(w @ (P @ w) - 2.0 * (q @ w) + c0)

    w = np.full(J, 1.0 / J)
    if not con_blocks:
        w, f, kkt, ok = _fista(
            lambda v: (float(v @ (P @ v) - 2.0 * (q @ v) + c0), 2.0 * (P @ v - q)),
            w, 2.0 * max(obj_lmax, 1e-12), cfg, cfg.objective_tol)
        if not ok:
            raise SolverNonConvergence(
                "unconstrained budgeted solve hit the inner iteration cap",
                best_w=WeightVector(w=project_simplex(w)),
                residuals={"kkt": kkt},
            )
        wv = WeightVector(w=project_simplex(w), objective=f, kkt_residual=kkt)
        return wv, QcqpDiagnostics(objective=f, constraint_slacks=(),
                                   final_penalty=0.0, outer_iters=0,
                                   feasible=True, kkt_residual=kkt)

    lam = np.zeros(len(con_blocks))
    rho = cfg.initial_penalty
    best_violation = math.inf
    stalled_increases = 0
    prev_max_v = math.inf
    kkt = math.nan
    f_obj = objective(w)

    # Stacked constraint quadratics: g_c(v) = v'CG_c v - 2 CH_c'v + Cc_c.
    CG = np.stack([blk.G for blk, _ in con_blocks])
    CH = np.stack([blk.h for blk, _ in con_blocks])
    Cc = np.array([blk.c - rhs for blk, rhs in con_blocks])

    for outer in range(1, cfg.max_outer_iters + 1):
        lam_snap = lam.copy()
        rho_snap = rho

        def al_value_grad(v, _lam=lam_snap, _rho=rho_snap):
            pv = P @ v
            val = float(v @ pv - 2.0 * (q @ v) + c0)
            grad = 2.0 * (pv - q)
            gv = CG @ v  # (m, J)
            gvals = (gv * v).sum(axis=1) - 2.0 * (CH @ v) + Cc
            mult = _lam + _rho * gvals
            active = np.clip(mult, 0.0, None)
            val += float((active @ active) - (_lam @ _lam)) / (2.0 * _rho)
            grad += 2.0 * (active @ (gv - CH))
            return val, grad

        lip0 = 2.0 * (obj_lmax + sum(
            (lam_snap[ci] + rho_snap) * blk.lmax
            for ci, (blk, _) in enumerate(con_blocks))) + rho_snap
        # Early outer passes only need a rough inner solve; tighten as the
        # multipliers settle.
        inner_tol = max(cfg.objective_tol, 1e-5 * 0.1 ** outer)
        w, _, kkt, ok = _fista(al_value_grad, w, lip0, cfg, inner_tol)
        if not ok:
            raise SolverNonConvergence(
                f"inner solve hit the iteration cap at outer iteration {outer}",
                best_w=WeightVector(w=project_simplex(w)),
                residuals={"kkt": kkt},
            )

        g_vals = np.array([blk.value(w) - rhs for blk, rhs in con_blocks])
        max_v = float(np.max(np.clip(g_vals, 0.0, None)))
        f_obj = objective(w)

        if max_v <= cfg.constraint_tol:
            wv = WeightVector(w=project_simplex(w), objective=f_obj,
                              kkt_residual=kkt)
            slacks = tuple(float(rhs - blk.value(w)) for blk, rhs in con_blocks)
            return wv, QcqpDiagnostics(
                objective=f_obj, constraint_slacks=slacks, final_penalty=rho,
                outer_iters=outer, feasible=True, kkt_residual=kkt)

        lam = np.clip(lam + rho * g_vals, 0.0, None)
        if max_v > 0.25 * prev_max_v:
            rho *= cfg.penalty_growth
            if max_v > best_violation * (1.0 - 1e-3):
                stalled_increases += 1
            else:
                stalled_increases = 0
            if stalled_increases >= 5:
                raise SolverInfeasible(
                    "constraints appear infeasible (violation "
                    f"{max_v:.3e} stopped shrinking); consider larger eta "
                    "slack values",
                    best_w=WeightVector(w=project_simplex(w)),
                    best_violation=min(best_violation, max_v),
                )
        best_violation = min(best_violation, max_v)
        prev_max_v = max_v

    raise SolverNonConvergence(
        f"augmented Lagrangian hit the outer iteration cap "
        f"({cfg.max_outer_iters}) with violation {prev_max_v:.3e}",
        best_w=WeightVector(w=project_simplex(w)),
        residuals={"constraint_violation": prev_max_v, "kkt": kkt},
    )
