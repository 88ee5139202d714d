"""Simplex projection, least squares, and the budgeted QCQP solver.

Brute-force oracles: exhaustive enumeration of the weight simplex on a
fine grid, with constraint-infeasible points filtered out.  The solver
must match the best grid objective to the stated tolerance.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from panelfuse import (
    QcqpProblem,
    SolverConfig,
    SolverInfeasible,
    WeightVector,
    nse,
    project_simplex,
    solve_budgeted_qcqp,
    solve_simplex_ls,
)


def simplex_grid(J: int, step: float) -> np.ndarray:
    """All weight vectors on the simplex lattice with the given step."""
    n = round(1.0 / step)
    if J == 1:
        return np.ones((1, 1))
    if J == 2:
        i = np.arange(n + 1)
        return np.column_stack([i, n - i]) / n
    prefixes = simplex_grid_counts(J - 1, n)
    return prefixes / n


def simplex_grid_counts(k: int, n: int) -> np.ndarray:
    """Integer compositions of n into k+1 nonnegative parts."""
    if k == 1:
        i = np.arange(n + 1)
        return np.column_stack([i, n - i])
    rows = []
    for i in range(n + 1):
        rest = simplex_grid_counts(k - 1, n - i)
        rows.append(np.column_stack([np.full(len(rest), i), rest]))
    return np.concatenate(rows)


def grid_objective(W, target, donors):
    resid = W @ donors - target
    return (resid * resid).mean(axis=1)


class TestProjectSimplex:
    @given(hnp.arrays(np.float64, st.integers(1, 12),
                      elements=st.floats(-10, 10)))
    def test_projection_lands_on_simplex(self, v):
        p = project_simplex(v)
        assert p.min() >= 0.0
        assert abs(p.sum() - 1.0) < 1e-9

    @given(hnp.arrays(np.float64, st.integers(1, 12),
                      elements=st.floats(-10, 10)))
    def test_idempotent(self, v):
        p = project_simplex(v)
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)

    def test_fixed_point_for_simplex_members(self):
        w = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(project_simplex(w), w, atol=1e-12)

    def test_known_projection(self):
        np.testing.assert_allclose(project_simplex(np.array([1.0, 0.0])),
                                   [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(project_simplex(np.array([5.0, 5.0])),
                                   [0.5, 0.5], atol=1e-12)


class TestNse:
    def test_exact_match_zero(self):
        donors = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert nse(donors[1], donors, [0.0, 1.0]) == pytest.approx(0.0)

    def test_midpoint_match(self):
        donors = np.array([[0.0, 0.0], [2.0, 2.0]])
        assert nse([1.0, 1.0], donors, [0.5, 0.5]) == pytest.approx(0.0)

    def test_direct_value(self):
        donors = np.array([[0.0, 0.0], [2.0, 2.0]])
        assert nse([1.0, 1.0], donors, [1.0, 0.0]) == pytest.approx(1.0)

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            nse(np.array([]), np.zeros((2, 0)), [0.5, 0.5])

    @given(k=st.floats(0.1, 50.0))
    def test_scaling_quadratic(self, k):
        donors = np.array([[0.0, 1.0], [2.0, 3.0]])
        target = np.array([1.0, 1.5])
        w = [0.25, 0.75]
        assert nse(k * target, k * donors, w) == pytest.approx(
            k * k * nse(target, donors, w))


class TestSimplexLs:
    def test_boundary_optimum(self):
        w = solve_simplex_ls(np.array([2.0]), np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(w.w, [0.0, 1.0], atol=1e-6)

    def test_exact_representability(self, rng):
        donors = rng.normal(size=(2, 5))
        target = 0.5 * donors[0] + 0.5 * donors[1]
        w = solve_simplex_ls(target, donors)
        assert w.objective == pytest.approx(0.0, abs=1e-10)

    def test_matches_grid_oracle(self, rng):
        W = simplex_grid(3, 0.01)
        donors = rng.normal(size=(3, 5))
        target = rng.normal(size=5)
        best = grid_objective(W, target, donors).min()
        w = solve_simplex_ls(target, donors)
        assert w.objective <= best + 1e-3

    def test_deterministic(self, rng):
        donors = rng.normal(size=(4, 6))
        target = rng.normal(size=6)
        w1 = solve_simplex_ls(target, donors)
        w2 = solve_simplex_ls(target, donors)
        np.testing.assert_array_equal(w1.w, w2.w)
        assert w1.objective == w2.objective

    def test_objective_reproducible_at_solution(self, rng):
        donors = rng.normal(size=(4, 6))
        target = rng.normal(size=6)
        w = solve_simplex_ls(target, donors)
        assert nse(target, donors, w) == pytest.approx(w.objective, rel=1e-10,
                                                       abs=1e-12)

    def test_singleton_donor(self):
        w = solve_simplex_ls(np.array([1.0, 2.0]), np.array([[5.0, 6.0]]))
        np.testing.assert_allclose(w.w, [1.0])


class TestWeightVector:
    def test_clamps_tiny_negatives(self):
        wv = WeightVector(w=np.array([1.0 + 5e-11, -5e-11]))
        assert wv.w.min() == 0.0

    def test_rejects_large_negatives(self):
        with pytest.raises(ValueError):
            WeightVector(w=np.array([1.1, -0.1]))

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            WeightVector(w=np.array([0.6, 0.6]))


class TestBudgetedQcqp:
    def _problem(self, rng, J=3, dim=4, rhs=np.inf):
        donors = rng.normal(size=(J, dim))
        target = rng.normal(size=dim)
        con_donors = rng.normal(size=(J, dim))
        con_target = rng.normal(size=dim)
        return QcqpProblem(
            objective_blocks=[(1.0, target, donors)],
            constraints=[(con_target, con_donors, rhs)],
            J=J,
        ), target, donors, con_target, con_donors

    def test_inactive_constraint_equals_ls(self, rng):
        problem, target, donors, _, _ = self._problem(rng, rhs=np.inf)
        wv, diag = solve_budgeted_qcqp(problem)
        ls = solve_simplex_ls(target, donors)
        assert diag.feasible
        assert wv.objective == pytest.approx(ls.objective, abs=1e-6)

    def test_self_constraint_is_slack(self, rng):
        donors = rng.normal(size=(3, 4))
        target = rng.normal(size=4)
        ls = solve_simplex_ls(target, donors)
        problem = QcqpProblem(
            objective_blocks=[(1.0, target, donors)],
            constraints=[(target, donors, ls.objective + 0.1)],
            J=3,
        )
        wv, diag = solve_budgeted_qcqp(problem)
        assert diag.feasible
        assert wv.objective == pytest.approx(ls.objective, abs=1e-6)

    def test_active_constraint_matches_feasible_grid(self, rng):
        W = simplex_grid(3, 0.005)
        for _ in range(5):
            problem, target, donors, ct, cd = self._problem(rng)
            con_vals = grid_objective(W, ct, cd)
            # Pick an rhs that genuinely bites: the 20th percentile of the
            # constraint values over the grid.
            rhs = float(np.percentile(con_vals, 20))
            problem = QcqpProblem(
                objective_blocks=problem.objective_blocks,
                constraints=[(ct, cd, rhs)], J=3)
            obj_vals = grid_objective(W, target, donors)
            feasible = con_vals <= rhs + 1e-9
            best = obj_vals[feasible].min()
            wv, diag = solve_budgeted_qcqp(problem)
            assert diag.feasible
            assert nse(ct, cd, wv) <= rhs + 1e-6
            assert wv.objective <= best + 1e-3

    def test_deterministic(self, rng):
        problem, target, donors, ct, cd = self._problem(rng, rhs=np.inf)
        rhs = solve_simplex_ls(ct, cd).objective + 0.5
        problem = QcqpProblem(objective_blocks=problem.objective_blocks,
                              constraints=[(ct, cd, rhs)], J=3)
        w1, _ = solve_budgeted_qcqp(problem)
        w2, _ = solve_budgeted_qcqp(problem)
        np.testing.assert_array_equal(w1.w, w2.w)

    def test_convexity_midpoint(self, rng):
        problem, target, donors, ct, cd = self._problem(rng, rhs=np.inf)
        rhs = solve_simplex_ls(ct, cd).objective + 1.0
        problem = QcqpProblem(objective_blocks=problem.objective_blocks,
                              constraints=[(ct, cd, rhs)], J=3)
        wv, _ = solve_budgeted_qcqp(problem)
        for _ in range(10):
            a = project_simplex(rng.normal(size=3))
            b = project_simplex(rng.normal(size=3))
            mid = 0.5 * (a + b)
            if nse(ct, cd, mid) <= rhs:
                assert wv.objective <= nse(target, donors, mid) + 1e-6

    def test_infeasible_raises(self):
        # Constraints force all weight on donor 1 and on donor 2 at once.
        donors = np.array([[0.0], [10.0]])
        problem = QcqpProblem(
            objective_blocks=[(1.0, np.array([5.0]), donors)],
            constraints=[(np.array([0.0]), donors, 1e-6),
                         (np.array([10.0]), donors, 1e-6)],
            J=2,
        )
        with pytest.raises(SolverInfeasible, match="larger eta"):
            solve_budgeted_qcqp(problem)

    def test_negative_rhs_rejected(self):
        with pytest.raises(ValueError):
            QcqpProblem(objective_blocks=[(1.0, np.zeros(2), np.zeros((2, 2)))],
                        constraints=[(np.zeros(2), np.zeros((2, 2)), -1.0)],
                        J=2)
