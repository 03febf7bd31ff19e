import unittest
from unittest import mock

import numpy as np
import scipy.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from mateq import (DimensionMismatch, IllConditioned, LyapunovSolver, MaxIterations, NearDefective,
                   NoStabilizingSolution, NotHurwitz, NotStabilizingGuess, newton_kleinman, riccati_residual,
                   solve_care, solve_lyapunov, spectral_abscissa, spectral_info)
from model import builtin_model, eval_semilinear

SQRT2_M1 = np.sqrt(2.0) - 1.0


def random_instance(seed: int, d: int):
    """ Well-conditioned (a, b, q, r) of order d: a Hurwitz with margin 0.5, q and r bounded below by I. """
    rng = np.random.default_rng([seed, 1])
    m = int(rng.integers(1, d + 1))
    a = random_hurwitz(seed, d, margin=0.5)
    b = rng.standard_normal((d, m))
    c = rng.standard_normal((d, d)) / np.sqrt(d)
    q = c @ c.T + np.eye(d)
    n = rng.standard_normal((m, m)) / np.sqrt(m)
    r = n @ n.T + np.eye(m)
    return a, b, q, r


def nk_tolerance(a, q, p) -> float:
    """ Residual level reachable in floating point for an iterate of size p. """
    return 1e-10 * max(1.0, np.linalg.norm(q, "fro"), np.linalg.norm(a, "fro") * np.linalg.norm(p, "fro"))


def random_hurwitz(seed: int, d: int, margin: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    return a - (spectral_abscissa(a) + margin) * np.eye(d)


class TestLyapunov(unittest.TestCase):

    def test_scalar(self):
        x = solve_lyapunov([[-1.0]], [[2.0]])
        self.assertAlmostEqual(x[0, 0], 1.0, places=12)

    def test_decoupled(self):
        x = solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
        np.testing.assert_allclose(x, np.diag([0.5, 0.25]), atol=1e-12)

    def test_random_residual(self):
        a = random_hurwitz(7, 5)
        rng = np.random.default_rng(8)
        c = rng.standard_normal((5, 5))
        q = c @ c.T
        x = solve_lyapunov(a, q)
        res = np.linalg.norm(a.T @ x + x @ a + q, "fro")
        self.assertLess(res, 1e-10 * max(1.0, np.linalg.norm(q, "fro")))
        np.testing.assert_array_equal(x, x.T)

    def test_not_hurwitz(self):
        with self.assertRaises(NotHurwitz):
            solve_lyapunov([[0.5]], [[1.0]])
        with self.assertRaises(NotHurwitz):
            solve_lyapunov(np.diag([-1.0, 0.0]), np.eye(2))

    def test_solver_reuse(self):
        a = random_hurwitz(3, 6)
        solver = LyapunovSolver(a)
        rng = np.random.default_rng(4)
        for _ in range(3):
            c = rng.standard_normal((6, 6))
            q = c + c.T
            np.testing.assert_allclose(solver.solve(q), solve_lyapunov(a, q), atol=1e-10)

    def test_one_factorization_for_many_solves(self):
        a = random_hurwitz(11, 30, margin=1.0)
        rng = np.random.default_rng(12)
        qs = [c @ c.T for c in rng.standard_normal((4, 30, 30))]
        with mock.patch("mateq.spla.schur", wraps=spla.schur) as schur:
            solver = LyapunovSolver(a)
            xs = [solver.solve(q) for q in qs]
        self.assertEqual(schur.call_count, 1)
        for q, x in zip(qs, xs):
            expected = spla.solve_continuous_lyapunov(a.T, -q)
            np.testing.assert_allclose(x, expected, rtol=1e-8, atol=1e-10 * np.abs(expected).max())

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(3))
        with self.assertRaises(DimensionMismatch):
            solve_lyapunov(np.ones((2, 3)), np.eye(2))

    @given(seed=st.integers(0, 10 ** 6), d=st.integers(1, 12))
    @settings(max_examples=25, deadline=None)
    def test_residual_property(self, seed, d):
        a = random_hurwitz(seed, d)
        rng = np.random.default_rng(seed + 1)
        c = rng.standard_normal((d, d))
        q = c @ c.T
        x = solve_lyapunov(a, q)
        res = np.linalg.norm(a.T @ x + x @ a + q, "fro")
        self.assertLessEqual(res, 1e-10 * max(1.0, np.linalg.norm(q, "fro")))


class TestCare(unittest.TestCase):

    def test_scalar_closed_form(self):
        sol = solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
        self.assertAlmostEqual(sol.p[0, 0], SQRT2_M1, places=12)
        self.assertAlmostEqual(sol.closed_loop_abscissa, -np.sqrt(2.0), places=12)
        self.assertEqual(sol.iterations, 0)

    def test_scalar_integrator(self):
        sol = solve_care([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        self.assertAlmostEqual(sol.p[0, 0], 1.0, places=12)

    def test_van_der_pol_identity(self):
        problem = builtin_model("van_der_pol")
        a, b = eval_semilinear(problem.model, [0.3, -0.7])
        sol = solve_care(a, b, problem.cost.q, problem.cost.r)
        np.testing.assert_allclose(sol.p, np.eye(2), atol=1e-9)

    def test_unstabilizable(self):
        with self.assertRaises(NoStabilizingSolution):
            solve_care([[1.0]], [[0.0]], [[1.0]], [[1.0]])

    def test_error_hierarchy(self):
        self.assertTrue(issubclass(IllConditioned, Exception))
        self.assertTrue(issubclass(DimensionMismatch, ValueError))

    @given(seed=st.integers(0, 10 ** 6), d=st.integers(2, 20))
    @settings(max_examples=20, deadline=None)
    def test_random_instances(self, seed, d):
        a, b, q, r = random_instance(seed, d)
        sol = solve_care(a, b, q, r)
        self.assertLessEqual(sol.residual_norm, 1e-9 * max(1.0, np.linalg.norm(q, "fro")))
        self.assertAlmostEqual(sol.residual_norm, riccati_residual(sol.p, a, b, q, r), delta=1e-12)
        self.assertLess(sol.closed_loop_abscissa, 0.0)
        np.testing.assert_array_equal(sol.p, sol.p.T)
        self.assertGreaterEqual(np.linalg.eigvalsh(sol.p).min(), -1e-10 * np.linalg.norm(sol.p, 2))


class TestRiccatiResidual(unittest.TestCase):

    def test_zero_p(self):
        q = np.diag([1.0, 2.0])
        self.assertAlmostEqual(riccati_residual(np.zeros((2, 2)), -np.eye(2), np.eye(2), q, np.eye(2)),
                               np.linalg.norm(q, "fro"))

    def test_scalar_arithmetic(self):
        self.assertAlmostEqual(riccati_residual([[0.5]], [[-1.0]], [[1.0]], [[1.0]], [[1.0]]), 0.25)

    def test_van_der_pol(self):
        problem = builtin_model("van_der_pol")
        for x in ([1.0, 1.0], [-1.7, 0.2], [0.0, 3.0]):
            a, b = eval_semilinear(problem.model, x)
            self.assertLess(riccati_residual(np.eye(2), a, b, problem.cost.q, problem.cost.r), 1e-14)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            riccati_residual(np.eye(3), -np.eye(2), np.eye(2), np.eye(2), np.eye(2))
        with self.assertRaises(DimensionMismatch):
            riccati_residual(np.eye(2), -np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(1))


class TestNewtonKleinman(unittest.TestCase):

    def test_scalar_converges(self):
        residuals = []
        sol = newton_kleinman([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]], tol=1e-14,
                              callback=lambda k, p, res: residuals.append(res))
        self.assertAlmostEqual(sol.p[0, 0], SQRT2_M1, places=12)
        self.assertEqual(sol.iterations, len(residuals))
        # Quadratic convergence: the ratio res_{k+1} / res_k^2 stays bounded.
        for prev, cur in zip(residuals, residuals[1:]):
            if prev > 1e-8:
                self.assertLess(cur / prev ** 2, 10.0)

    def test_fixed_point(self):
        exact = solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]]).p
        sol = newton_kleinman([[-1.0]], [[1.0]], [[1.0]], [[1.0]], exact)
        self.assertEqual(sol.iterations, 0)
        self.assertLess(sol.residual_norm, 1e-5)

    def test_van_der_pol_identity(self):
        problem = builtin_model("van_der_pol")
        a, b = eval_semilinear(problem.model, [1.0, 1.0])
        sol = newton_kleinman(a, b, problem.cost.q, problem.cost.r, np.eye(2))
        self.assertEqual(sol.iterations, 0)
        np.testing.assert_array_equal(sol.p, np.eye(2))
        self.assertLess(sol.residual_norm, 1e-12)

    def test_not_stabilizing_guess(self):
        with self.assertRaises(NotStabilizingGuess) as ctx:
            newton_kleinman([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]])
        self.assertAlmostEqual(ctx.exception.abscissa, 1.0)

    def test_max_iterations(self):
        with self.assertRaises(MaxIterations) as ctx:
            newton_kleinman([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]], tol=1e-14, max_iter=1)
        self.assertAlmostEqual(ctx.exception.p[0, 0], 0.5)
        self.assertAlmostEqual(ctx.exception.residual, 0.25)

    @given(seed=st.integers(0, 10 ** 6), d=st.integers(2, 20))
    @settings(max_examples=20, deadline=None)
    def test_agrees_with_direct(self, seed, d):
        a, b, q, r = random_instance(seed, d)
        direct = solve_care(a, b, q, r)
        # The stabilizing solution for a heavier state weight stabilizes this pair too.
        guess = solve_care(a, b, 2.0 * q, r).p
        sol = newton_kleinman(a, b, q, r, guess, tol=nk_tolerance(a, q, direct.p))
        self.assertLessEqual(np.linalg.norm(sol.p - direct.p, "fro"), 1e-7 * max(1.0, np.linalg.norm(direct.p)))

    @given(seed=st.integers(0, 10 ** 6), d=st.integers(2, 10))
    @settings(max_examples=20, deadline=None)
    def test_monotone_after_first_iterate(self, seed, d):
        a, b, q, r = random_instance(seed, d)
        guess = solve_care(a, b, 5.0 * q, r).p + np.eye(d)
        iterates = []
        try:
            newton_kleinman(a, b, q, r, guess, tol=nk_tolerance(a, q, guess),
                            callback=lambda k, p, res: iterates.append(p))
        except NotStabilizingGuess:
            return
        for prev, cur in zip(iterates, iterates[1:]):
            gap = np.linalg.eigvalsh(prev - cur).min()
            self.assertGreaterEqual(gap, -1e-8 * np.linalg.norm(prev, 2))


class TestSpectralInfo(unittest.TestCase):

    def test_diagonal(self):
        info = spectral_info(np.diag([-1.0, -3.0]))
        self.assertEqual(info.alpha, 1.0)
        self.assertAlmostEqual(info.cond_eigvec, 1.0, places=12)

    def test_upper_triangular(self):
        info = spectral_info([[-1.0, 10.0], [0.0, -2.0]])
        v = np.array([[1.0, -10.0 / np.sqrt(101.0)], [0.0, 1.0 / np.sqrt(101.0)]])
        self.assertAlmostEqual(info.alpha, 1.0, places=12)
        self.assertAlmostEqual(info.cond_eigvec, np.linalg.cond(v), places=8)

    def test_not_hurwitz(self):
        with self.assertRaises(NotHurwitz):
            spectral_info(np.diag([-1.0, 0.5]))

    def test_near_defective(self):
        with self.assertRaises(NearDefective):
            spectral_info([[-1.0, 1.0], [0.0, -1.0]])
