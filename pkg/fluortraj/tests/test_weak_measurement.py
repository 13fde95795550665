"""
Tests for the single-step heterodyne measurement
"""

import math
import unittest

import numpy as np

from fluortraj.engines.bloch import to_density
from fluortraj.engines.errors import InvalidOutcomeError
from fluortraj.engines.weak_measurement import (
    alpha_from_quadratures,
    alpha_grid,
    energy_gain_predicate,
    kraus_operators,
    kraus_trace_density,
    kraus_update,
    logp_quadratures,
    measurement_update,
    no_click_update,
    phase_flip,
    prob_alpha,
    quadratures_from_alpha,
    sample_alpha_exact,
    sample_quadratures,
    update_with_loss_dephasing,
)
from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams
from fluortraj.services.rng_service import generator_for_seed


class TestOutcomeDensity(unittest.TestCase):
    """Tests for the outcome densities"""

    def setUp(self):
        self.state = BlochState(u=1.3, x=0.6, y=-0.5)
        self.alpha, self.weight = alpha_grid()

    def test_linear_density_normalized(self):
        total = prob_alpha(self.state, 0.05, self.alpha).sum() * self.weight
        self.assertAlmostEqual(total, 1.0, places=6)

    def test_exact_density_normalized_and_positive(self):
        density = kraus_trace_density(self.state, 0.5, self.alpha, eta=0.7)
        self.assertGreaterEqual(density.min(), 0.0)
        self.assertAlmostEqual(density.sum() * self.weight, 1.0, places=6)

    def test_linear_density_rejects_large_epsilon(self):
        with self.assertRaises(ValueError):
            prob_alpha(self.state, 0.3, 0.1)

    def test_quadrature_mapping(self):
        I, Q = quadratures_from_alpha(alpha_from_quadratures(1.5, -0.25, 0.01), 0.01)
        self.assertAlmostEqual(float(I), 1.5)
        self.assertAlmostEqual(float(Q), -0.25)

    def test_logp_matches_gaussian_readout(self):
        """Readout law is Gaussian with mean zeta*(x, y); the log density peaks there"""
        p = MeasurementParams(dt=0.01)
        peak = logp_quadratures(self.state, p, p.zeta * self.state.x, p.zeta * self.state.y)
        off = logp_quadratures(self.state, p, p.zeta * self.state.x + 1.0, p.zeta * self.state.y)
        self.assertAlmostEqual(float(peak - off), 0.5 * p.dt)


class TestKrausUpdate(unittest.TestCase):
    """Tests for the exact measurement update"""

    def test_matches_kraus_operators(self):
        """Bloch update equals M rho M^dag / tr for a lossless meter"""
        s = BlochState(u=1.4, x=0.5, y=0.3)
        alpha, eps = complex(0.4, -0.7), 0.05
        M, lost = kraus_operators(alpha, eps)
        self.assertEqual(np.abs(lost).max(), 0.0)
        rho = to_density(s).matrix
        out = M @ rho @ M.conj().T
        out /= np.trace(out)
        updated = kraus_update(s, alpha, eps)
        self.assertAlmostEqual(updated.u, 2.0 * out[0, 0].real)
        self.assertAlmostEqual(updated.x, 2.0 * out[0, 1].real)
        self.assertAlmostEqual(updated.y, -2.0 * out[0, 1].imag)

    def test_ground_state_is_fixed(self):
        for alpha in (0.0, 1.0 + 2.0j, -3.0j):
            s = kraus_update(BlochState.ground(), alpha, 0.05)
            np.testing.assert_allclose(s.as_array(), [0.0, 0.0, 0.0])

    def test_update_stays_physical(self):
        s = BlochState(u=1.0, x=1.0, y=0.0)
        for alpha in (0.3, -0.2 + 0.9j, 2.0):
            self.assertTrue(kraus_update(s, alpha, 0.05).is_physical())

    def test_invalid_outcome(self):
        """Only states outside the ball can give a non-positive norm"""
        with self.assertRaises(InvalidOutcomeError):
            measurement_update(np.array([1.0, 5.0, 0.0]), -1.0, 0.09)

    def test_dephasing_shrinks_coherences(self):
        p = MeasurementParams(gamma_phi=0.5, dt=0.01)
        out = phase_flip(np.array([1.0, 1.0, 0.0]), p)
        self.assertAlmostEqual(out[0], 1.0)
        self.assertAlmostEqual(out[1], math.exp(-0.005))
        s = update_with_loss_dephasing(BlochState(u=1.0, x=1.0), p, 0.0)
        self.assertLess(s.radius_sq(), 1.0)

    def test_energy_gain(self):
        """A large outcome anti-aligned with x raises u"""
        self.assertTrue(energy_gain_predicate(BlochState(u=1.0, x=1.0), -1.0, 0.05))
        self.assertFalse(energy_gain_predicate(BlochState(u=1.0, x=1.0), 1.0, 0.05))
        self.assertFalse(energy_gain_predicate(BlochState.ground(), -5.0, 0.05))

    def test_no_click(self):
        a, b = no_click_update(1 / math.sqrt(2), 1 / math.sqrt(2), 0.19)
        self.assertAlmostEqual(abs(a) ** 2 + abs(b) ** 2, 1.0)
        self.assertLess(abs(a), abs(b))
        with self.assertRaises(ValueError):
            no_click_update(1.0, 1.0, 0.1)


class TestQuadratureSampling(unittest.TestCase):
    """Tests for Gaussian readout sampling"""

    def test_moments(self):
        p = MeasurementParams(eta=0.5, dt=0.01)
        s = BlochState(u=1.0, x=0.8, y=-0.4)
        I, Q = sample_quadratures(s, p, generator_for_seed(4), size=40000)
        se = 1.0 / math.sqrt(p.dt * I.size)
        self.assertLess(abs(I.mean() - p.zeta * s.x), 4.0 * se)
        self.assertLess(abs(Q.mean() - p.zeta * s.y), 4.0 * se)
        self.assertAlmostEqual(I.var() * p.dt, 1.0, delta=0.05)

    def test_single_draw(self):
        I, Q = sample_quadratures(BlochState.ground(), MeasurementParams(), generator_for_seed(1))
        self.assertIsInstance(I, float)
        self.assertIsInstance(Q, float)


class TestExactSampling(unittest.TestCase):
    """Tests for rejection sampling from the exact density"""

    def test_deterministic(self):
        s = BlochState(u=1.0, x=1.0)
        a = sample_alpha_exact(s, 0.05, generator_for_seed(11), size=50)
        b = sample_alpha_exact(s, 0.05, generator_for_seed(11), size=50)
        np.testing.assert_array_equal(a, b)

    def test_first_moment(self):
        """E[Re alpha] = sqrt(eps) x / 2"""
        s = BlochState(u=1.0, x=0.8, y=0.0)
        eps = 0.09
        samples = sample_alpha_exact(s, eps, generator_for_seed(5), size=200000)
        se = np.std(samples.real) / math.sqrt(samples.size)
        self.assertLess(abs(samples.real.mean() - math.sqrt(eps) * s.x / 2.0), 4.0 * se)


if __name__ == '__main__':
    unittest.main()
