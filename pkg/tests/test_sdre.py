import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from constants import Strategy
from model import (DecompositionTerm, QuadraticCost, SemilinearModel, StructuredDecomposition, builtin_model,
                   eval_semilinear)
from sdre import (UnsupportedModel, compute_gain, gain_cascade_nk, gain_direct, gain_hybrid, gain_offline_online,
                  init_strategy, offline_phase)

SQRT2 = np.sqrt(2.0)


def scalar_model() -> tuple[SemilinearModel, QuadraticCost]:
    """ x' = (-1 + x^2) x + u with A0 = -1 and one term x^2. """
    one = np.array([[1.0]])
    model = SemilinearModel(
        name="scalar", dim_state=1, dim_control=1,
        a_of_x=lambda x: np.array([[-1.0 + x[0] ** 2]]), b_of_x=lambda x: one,
        a_partial=lambda x, i: np.array([[2.0 * x[0]]]), b_partial=lambda x, i: np.zeros((1, 1)),
        decomposition=StructuredDecomposition(np.array([[-1.0]]), (
            DecompositionTerm(lambda x: x[0] ** 2, one),)),
        b_constant=one,
    )
    return model, QuadraticCost.for_model(model, one, one)


class TestDirect(unittest.TestCase):

    def test_van_der_pol_control(self):
        problem = builtin_model("van_der_pol")
        gain = gain_direct(problem.model, problem.cost, [-0.5, 0.5])
        np.testing.assert_allclose(gain.p, np.eye(2), atol=1e-9)
        self.assertAlmostEqual(gain.u[0], 0.25, places=9)

    def test_lqr_constant(self):
        problem = builtin_model("lqr")
        first = gain_direct(problem.model, problem.cost, [1.0, 0.0]).p
        for x in ([0.3, -2.0], [5.0, 5.0]):
            np.testing.assert_allclose(gain_direct(problem.model, problem.cost, x).p, first, atol=1e-12)

    def test_van_der_pol_identity_on_box(self):
        problem = builtin_model("van_der_pol")
        bound = problem.model.state_bound
        rng = np.random.default_rng(5)
        for x in rng.uniform(-bound, bound, size=(100, 2)):
            np.testing.assert_allclose(gain_direct(problem.model, problem.cost, x).p, np.eye(2), atol=1e-8)


class TestOfflineOnline(unittest.TestCase):

    def setUp(self) -> None:
        self.model, self.cost = scalar_model()

    def test_offline_closed_form(self):
        offline = offline_phase(self.model, self.cost)
        self.assertAlmostEqual(offline.p0[0, 0], SQRT2 - 1.0, places=12)
        self.assertAlmostEqual(offline.c0[0, 0], -SQRT2, places=12)
        self.assertAlmostEqual(offline.info.alpha, SQRT2, places=12)

    def test_correction_closed_form(self):
        state = init_strategy(Strategy.OFFLINE_ONLINE, self.model, self.cost)
        x = 0.5
        gain = gain_offline_online(state, self.model, self.cost, [x])
        p0 = SQRT2 - 1.0
        self.assertAlmostEqual(gain.p[0, 0], p0 * (1.0 + x * x / SQRT2), places=12)
        self.assertAlmostEqual(gain.u[0], -gain.p[0, 0] * x, places=12)
        self.assertEqual(gain.lyapunov_solves, 1)

    def test_precomputed_terms_agree(self):
        online = init_strategy(Strategy.OFFLINE_ONLINE, self.model, self.cost)
        pre = init_strategy(Strategy.OFFLINE_ONLINE, self.model, self.cost, precompute_terms=True)
        for x in (0.1, -0.7, 1.3):
            p1 = gain_offline_online(online, self.model, self.cost, [x]).p
            gain = gain_offline_online(pre, self.model, self.cost, [x])
            np.testing.assert_allclose(gain.p, p1, atol=1e-12)
            self.assertEqual(gain.lyapunov_solves, 0)

    def test_certificate_failure_counted(self):
        state = init_strategy(Strategy.OFFLINE_ONLINE, self.model, self.cost)
        self.assertTrue(gain_offline_online(state, self.model, self.cost, [0.1]).certificate.holds)
        with self.assertLogs("sdre", level="WARNING"):
            gain = gain_offline_online(state, self.model, self.cost, [2.0])
        self.assertFalse(gain.certificate.holds)
        gain_offline_online(state, self.model, self.cost, [3.0])
        self.assertEqual(state.certificate_failures, 2)

    @given(x=st.floats(-1.5, 1.5))
    @settings(max_examples=50, deadline=None)
    def test_certificate_sound(self, x):
        state = init_strategy(Strategy.OFFLINE_ONLINE, self.model, self.cost)
        gain = gain_offline_online(state, self.model, self.cost, [x])
        if gain.certificate.holds:
            a, b = eval_semilinear(self.model, [x])
            closed = a - self.cost.s(b) @ gain.p
            self.assertLess(np.linalg.eigvals(closed).real.max(), 0.0)

    def test_certificate_sound_on_zeldovich(self):
        problem = builtin_model("zeldovich", {"case": 1, "d": 20})
        model, cost = problem.model, problem.cost
        state = init_strategy(Strategy.OFFLINE_ONLINE, model, cost)
        rng = np.random.default_rng(7)
        held = 0
        for scale in np.geomspace(1e-6, 1.0, 50):
            x = scale * rng.uniform(-1.0, 1.0, 20)
            gain = gain_offline_online(state, model, cost, x)
            if gain.certificate.holds:
                held += 1
                a, b = eval_semilinear(model, x)
                closed = a - cost.s(b) @ gain.p
                self.assertLess(np.linalg.eigvals(closed).real.max(), 0.0)
        self.assertGreater(held, 0)

    def test_state_dependent_b_rejected(self):
        problem = builtin_model("van_der_pol")
        with self.assertRaises(UnsupportedModel):
            offline_phase(problem.model, problem.cost)


class TestCascade(unittest.TestCase):

    def test_first_step_direct_then_no_work(self):
        problem = builtin_model("lqr")
        state = init_strategy(Strategy.CASCADE_NK, problem.model, problem.cost)
        first = gain_cascade_nk(state, problem.model, problem.cost, [1.0, 0.0])
        self.assertEqual(first.iterations, 0)
        second = gain_cascade_nk(state, problem.model, problem.cost, [0.5, 0.2])
        self.assertEqual(second.iterations, 0)
        self.assertEqual(second.lyapunov_solves, 0)
        np.testing.assert_array_equal(second.p, first.p)

    def test_tracks_direct(self):
        model, cost = scalar_model()
        state = init_strategy(Strategy.CASCADE_NK, model, cost, nk_tol=1e-12)
        for x in np.linspace(0.0, 0.8, 9):
            gain = gain_cascade_nk(state, model, cost, [x])
            np.testing.assert_allclose(gain.p, gain_direct(model, cost, [x]).p, atol=1e-10)

    def test_fallback_on_destabilizing_seed(self):
        problem = builtin_model("lqr", {"a": [[1.0]], "b": [[1.0]], "q": [[1.0]], "r": [[1.0]], "x0": [1.0]})
        state = init_strategy(Strategy.CASCADE_NK, problem.model, problem.cost)
        state.p_current = np.zeros((1, 1))
        with self.assertLogs("sdre", level="WARNING"):
            gain = gain_cascade_nk(state, problem.model, problem.cost, [1.0])
        self.assertTrue(gain.fallback)
        self.assertEqual(state.fallback_count, 1)
        self.assertAlmostEqual(gain.p[0, 0], 1.0 + SQRT2, places=10)


class TestHybrid(unittest.TestCase):

    def test_exact_prediction_needs_no_iterations(self):
        problem = builtin_model("lqr")
        state = init_strategy(Strategy.HYBRID, problem.model, problem.cost)
        gain = gain_hybrid(state, problem.model, problem.cost, [1.0, -1.0])
        self.assertEqual(gain.iterations, 0)
        self.assertTrue(gain.certificate.holds)

    def test_refines_prediction(self):
        model, cost = scalar_model()
        state = init_strategy(Strategy.HYBRID, model, cost, nk_tol=1e-12)
        gain = gain_hybrid(state, model, cost, [0.6])
        np.testing.assert_allclose(gain.p, gain_direct(model, cost, [0.6]).p, atol=1e-10)
        self.assertGreaterEqual(gain.iterations, 1)
        self.assertEqual(gain.lyapunov_solves, gain.iterations + 1)


class TestComputeGain(unittest.TestCase):

    def test_records_stats(self):
        model, cost = scalar_model()
        for kind in Strategy:
            state = init_strategy(kind, model, cost)
            for x in (0.2, 0.1, 0.0):
                compute_gain(state, model, cost, [x])
            self.assertEqual(len(state.per_step_stats), 3)
            self.assertTrue(all(s.wall_time >= 0.0 for s in state.per_step_stats))
            self.assertIsNotNone(state.p_current)
