"""
Tests for the closed-form and empirical correlation functions
"""

import math
import unittest

import numpy as np

from fluortraj.engines.correlators import (
    agreement_report,
    analytic_cov,
    corr_state_noise,
    corr_u_xiI_higher_order,
    cov_io,
    cov_uu,
    cov_ux,
    cov_uy,
    cov_xx,
    cov_xy,
    cov_yy,
    covariance_grid,
    empirical_cov,
    empirical_covariance_grid,
    green_state,
    is_magic_point,
    magic_points,
)
from fluortraj.engines.trajectory_engine import TrajectoryEngine
from fluortraj.models.bloch import BlochState
from fluortraj.models.correlator import CorrelatorSpec, parse_pair
from fluortraj.models.measurement import MeasurementParams, Sampling, Scheme


class TestClosedForms(unittest.TestCase):
    """Tests for the leading-order correlators"""

    def setUp(self):
        self.p = MeasurementParams(eta=0.2, dt=0.01)
        self.s0 = BlochState(u=1.2, x=0.6, y=-0.3)
        self.t = np.linspace(0.0, 2.0, 9)

    def test_vanish_at_initial_time(self):
        for a, b in (("u", "u"), ("x", "x"), ("y", "y"), ("x", "y"), ("u", "x"), ("y", "u")):
            np.testing.assert_allclose(cov_io(a, b, 0.0, self.t, self.s0, self.p), 0.0, atol=1e-15)

    def test_symmetry(self):
        t1, t2 = self.t[:, None], self.t[None, :]
        for a, b in (("u", "x"), ("x", "y"), ("u", "y"), ("I", "u"), ("Q", "I")):
            np.testing.assert_allclose(cov_io(a, b, t1, t2, self.s0, self.p),
                                       cov_io(b, a, t2, t1, self.s0, self.p), atol=1e-14)

    def test_population_variance_positive(self):
        self.assertTrue(np.all(cov_uu(self.t[1:], self.t[1:], self.s0, self.p) > 0.0))

    def test_coherence_without_dephasing(self):
        """With gamma_phi = 0 and y0 = 0 the x autocovariance collapses to one term"""
        p = MeasurementParams(eta=0.2, dt=0.01)
        s0 = BlochState(u=0.5, x=0.4, y=0.0)
        t1, t2 = self.t[:, None], self.t[None, :]
        g1 = p.gamma1
        expected = (p.zeta ** 2 / g1 * (s0.u - s0.x ** 2) ** 2 * np.exp(-g1 * (t1 + t2) / 2.0)
                    * (1.0 - np.exp(-g1 * np.minimum(t1, t2))))
        np.testing.assert_allclose(cov_xx(t1, t2, s0, p), expected, rtol=1e-12, atol=1e-15)

    def test_cross_covariances_under_coherence_swap(self):
        t1, t2 = self.t[:, None], self.t[None, :]
        swapped = BlochState(u=self.s0.u, x=self.s0.y, y=self.s0.x)
        np.testing.assert_allclose(cov_ux(t1, t2, self.s0, self.p), cov_uy(t1, t2, swapped, self.p), atol=1e-15)
        np.testing.assert_allclose(cov_xy(t1, t2, self.s0, self.p), cov_xy(t1, t2, swapped, self.p), atol=1e-15)
        on_axis = BlochState(u=1.2, x=0.6, y=0.0)
        np.testing.assert_allclose(cov_xy(t1, t2, on_axis, self.p), 0.0, atol=1e-15)
        np.testing.assert_allclose(cov_uy(t1, t2, on_axis, self.p), 0.0, atol=1e-15)

    def test_higher_order_population_noise(self):
        """The correction is the leading term scaled by zeta^2 x0^2 (1 - e^{-2 gamma2 t2}) / (2 gamma2)"""
        t1, t2 = 1.5, 0.5
        leading = corr_state_noise("u", "xi_I", t1, t2, self.s0, self.p)
        scale = self.p.zeta ** 2 * self.s0.x ** 2 * -math.expm1(-2.0 * self.p.gamma2 * t2) / (2.0 * self.p.gamma2)
        self.assertAlmostEqual(corr_u_xiI_higher_order(t1, t2, self.s0, self.p), leading * scale, places=14)
        self.assertEqual(corr_u_xiI_higher_order(t2, t1, self.s0, self.p), 0.0)
        self.assertEqual(corr_u_xiI_higher_order(t1, t1, self.s0, self.p), 0.0)

    def test_degenerate_rates_limit(self):
        """gamma1 = gamma2 uses the series limit and stays continuous"""
        degenerate = MeasurementParams(gamma_phi=0.5, eta=0.2, dt=0.01)
        nearby = MeasurementParams(gamma_phi=0.5 + 1e-6, eta=0.2, dt=0.01)
        self.assertAlmostEqual(cov_xx(1.0, 1.5, self.s0, degenerate), cov_xx(1.0, 1.5, self.s0, nearby), places=6)

    def test_magic_points(self):
        np.testing.assert_allclose(cov_uu(self.t, self.t, BlochState.ground(), self.p), 0.0)
        np.testing.assert_allclose(cov_uu(self.t, self.t, BlochState.excited(), self.p), 0.0)
        np.testing.assert_allclose(cov_xx(self.t, self.t, BlochState(u=1.0, x=1.0), self.p), 0.0, atol=1e-15)
        np.testing.assert_allclose(cov_yy(self.t, self.t, BlochState(u=1.0, y=1.0), self.p), 0.0, atol=1e-15)
        self.assertTrue(is_magic_point(("x", "x"), BlochState(u=1.0, x=1.0), self.p))
        self.assertFalse(is_magic_point(("x", "x"), BlochState(u=1.0, x=1.0), self.p.model_copy(update={"gamma_phi": 0.1})))
        self.assertEqual(len(magic_points(("u", "u"))), 2)

    def test_state_noise_causal(self):
        """Noise never correlates with earlier or simultaneous states"""
        for var in ("u", "x", "y"):
            for noise in ("xi_I", "xi_Q"):
                self.assertEqual(corr_state_noise(var, noise, 0.5, 0.5, self.s0, self.p), 0.0)
                self.assertEqual(corr_state_noise(var, noise, 0.2, 0.7, self.s0, self.p), 0.0)
        self.assertNotEqual(corr_state_noise("u", "xi_I", 0.7, 0.2, self.s0, self.p), 0.0)

    def test_white_noise(self):
        self.assertAlmostEqual(cov_io("xi_I", "xi_I", 0.3, 0.3, self.s0, self.p), 1.0 / self.p.dt)
        self.assertEqual(cov_io("xi_I", "xi_Q", 0.3, 0.3, self.s0, self.p), 0.0)
        self.assertEqual(cov_io("xi_I", "xi_I", 0.3, 0.4, self.s0, self.p), 0.0)

    def test_green_function(self):
        self.assertEqual(green_state("u", 1.0, 1.0, self.p), 0.0)
        self.assertAlmostEqual(green_state("x", 2.0, 1.0, self.p), math.exp(-self.p.gamma2))
        with self.assertRaises(ValueError):
            green_state("xi_I", 1.0, 0.0, self.p)

    def test_grid_matches_pointwise(self):
        grid = covariance_grid(("u", "x"), self.t, self.t[:4], self.s0, self.p)
        self.assertEqual(grid.values.shape, (9, 4))
        spec = CorrelatorSpec(pair=("u", "x"), t1=self.t[3], t2=self.t[2], initial=self.s0, params=self.p)
        self.assertAlmostEqual(analytic_cov(spec), grid.values[3, 2])
        with self.assertRaises(ValueError):
            cov_io("u", "z", 0.1, 0.1, self.s0, self.p)
        with self.assertRaises(ValueError):
            cov_uu(-0.1, 0.1, self.s0, self.p)

    def test_parse_pair(self):
        self.assertEqual(parse_pair("u, xi_I"), ("u", "xi_I"))
        with self.assertRaises(ValueError):
            parse_pair("u")


class TestEmpiricalCorrelators(unittest.TestCase):
    """Monte Carlo estimates against the closed forms"""

    @classmethod
    def setUpClass(cls):
        cls.p = MeasurementParams(eta=0.2, dt=0.01)
        cls.s0 = BlochState(u=1.0, x=1.0, y=0.0)
        engine = TrajectoryEngine(cls.p, scheme=Scheme.EXACT, sampling=Sampling.GAUSSIAN)
        cls.ensemble = engine.simulate_ensemble(cls.s0, 100, 3000, base_seed=0)
        cls.grid = np.linspace(0.0, 0.98, 8)

    def test_uu_agreement(self):
        analytic = covariance_grid(("u", "u"), self.grid, self.grid, self.s0, self.p)
        empirical = empirical_covariance_grid(self.ensemble, ("u", "u"), self.grid, self.grid, n_blocks=50)
        report = agreement_report(analytic, empirical, k=4.0)
        self.assertGreaterEqual(report["fraction_within"], 0.9)
        self.assertEqual(report["n_cells"], 64)
        self.assertEqual(report["n_trajectories"], 3000)

    def test_noise_uncorrelated_with_past(self):
        spec = CorrelatorSpec(pair=("u", "xi_I"), t1=0.2, t2=0.5, initial=self.s0, params=self.p)
        value, se = empirical_cov(self.ensemble, spec, n_blocks=50)
        self.assertLess(abs(value), 4.0 * se)

    def test_off_grid_and_out_of_range(self):
        with self.assertLogs("fluortraj.engines.correlators", level="WARNING"):
            empirical_covariance_grid(self.ensemble, ("u", "u"), [0.105], [0.2])
        with self.assertRaises(ValueError):
            empirical_covariance_grid(self.ensemble, ("I", "I"), [1.0], [1.0])

    def test_report_requires_stderr(self):
        analytic = covariance_grid(("x", "x"), self.grid, self.grid, self.s0, self.p)
        with self.assertRaises(ValueError):
            agreement_report(analytic, analytic)


if __name__ == '__main__':
    unittest.main()
