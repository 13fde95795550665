"""
Tests for the trajectory engine and ensemble analysis
"""

import math
import unittest

import numpy as np

from fluortraj.engines.bloch import purity_defect
from fluortraj.engines.errors import IntegrationFailure
from fluortraj.engines.trajectory_engine import (
    TrajectoryEngine,
    band_coverage,
    default_clip_tolerance,
    diffusion_matrix,
    empirical_mlp,
    ensemble_stats,
    exponential_averages,
    filter_record,
    ito_drift,
    ito_drift_correction,
    ito_rhs,
    postselect,
    simulate_trajectory,
    stratonovich_rhs,
    theta_sde_step,
)
from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams, Sampling, Scheme
from fluortraj.models.trajectory import Ensemble, FinalCondition


def _ensemble(final_u, times=None):
    """Hand-built ensemble whose members relax linearly to the given final u"""
    times = np.linspace(0.0, 1.0, 5) if times is None else times
    n = len(final_u)
    states = np.zeros((n, len(times), 3))
    for k, uf in enumerate(final_u):
        states[k, :, 0] = np.linspace(1.0, uf, len(times))
    return Ensemble(
        times=times,
        states=states,
        readouts=np.zeros((n, len(times) - 1, 2)),
        noises=np.zeros((n, len(times) - 1, 2)),
        seeds=np.arange(n),
        params=MeasurementParams(),
        initial=BlochState(u=1.0),
    )


class TestEquations(unittest.TestCase):
    """Tests for the equations of motion"""

    def setUp(self):
        self.p = MeasurementParams(gamma_phi=0.3, eta=0.6, dt=0.01)
        self.r = np.array([1.2, 0.4, -0.3])

    def test_ito_correction(self):
        """Stratonovich drift at the mean readout plus the correction is the exponential drift"""
        strat = stratonovich_rhs(self.r, self.p.zeta * self.r[1], self.p.zeta * self.r[2], self.p)
        np.testing.assert_allclose(strat + ito_drift_correction(self.r, self.p), ito_drift(self.r, self.p),
                                   atol=1e-14)

    def test_ito_rhs_splits_drift_and_noise(self):
        np.testing.assert_allclose(ito_rhs(self.r, 0.0, 0.0, self.p), ito_drift(self.r, self.p), atol=1e-15)
        noise = np.array([0.7, -1.1])
        expected = ito_drift(self.r, self.p) + diffusion_matrix(self.r, self.p) @ noise
        np.testing.assert_allclose(ito_rhs(self.r, noise[0], noise[1], self.p), expected, atol=1e-14)

    def test_exponential_averages(self):
        avg = exponential_averages([0.0, 1.0], self.r, self.p)
        np.testing.assert_allclose(avg[0], self.r)
        self.assertAlmostEqual(avg[1, 0], 1.2 * math.exp(-1.0))
        self.assertAlmostEqual(avg[1, 1], 0.4 * math.exp(-self.p.gamma2))

    def test_theta_equation_needs_ideal_channel(self):
        with self.assertRaises(ValueError):
            theta_sde_step(0.5, 0.0, self.p)
        ideal = MeasurementParams(dt=0.01)
        self.assertAlmostEqual(float(theta_sde_step(0.0, 0.0, ideal)), 0.0)


class TestTrajectoryEngine(unittest.TestCase):
    """Tests for single trajectories and ensembles"""

    def setUp(self):
        self.p = MeasurementParams(eta=0.2, dt=0.01)
        self.s0 = BlochState(u=1.0, x=1.0, y=0.0)

    def test_noise_free_ito(self):
        traj = simulate_trajectory(self.s0, self.p, Scheme.ITO, 50, seed=0, noise_free=True)
        self.assertAlmostEqual(traj.states[-1, 0], (1.0 - self.p.dt) ** 50)
        self.assertAlmostEqual(traj.states[-1, 1], (1.0 - self.p.gamma2 * self.p.dt) ** 50)
        self.assertEqual(traj.readouts.shape, (50, 2))

    def test_ground_state_is_fixed(self):
        traj = simulate_trajectory(BlochState.ground(), self.p, Scheme.EXACT, 30, seed=4)
        np.testing.assert_allclose(traj.states, 0.0, atol=1e-15)

    def test_same_seed_same_trajectory(self):
        a = simulate_trajectory(self.s0, self.p, Scheme.STRATONOVICH, 40, seed=9)
        b = simulate_trajectory(self.s0, self.p, Scheme.STRATONOVICH, 40, seed=9)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.readouts, b.readouts)

    def test_ensemble_independent_of_chunking(self):
        """Member k depends only on its own seed, not on chunking or threads"""
        serial = TrajectoryEngine(self.p, sampling=Sampling.KRAUS, chunk_size=256)
        chunked = TrajectoryEngine(self.p, sampling=Sampling.KRAUS, chunk_size=3, max_workers=2)
        a = serial.simulate_ensemble(self.s0, 20, 10, base_seed=5)
        b = chunked.simulate_ensemble(self.s0, 20, 10, base_seed=5)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.seeds, np.arange(5, 15))
        single = serial.simulate_trajectory(self.s0, 20, seed=8)
        np.testing.assert_array_equal(single.states, a.states[3])

    def test_exact_scheme_mean_decay(self):
        """Unconditional means follow (1 - eps)^n for u and (1 - eps)^(n/2) for x"""
        engine = TrajectoryEngine(self.p, sampling=Sampling.KRAUS)
        e = engine.simulate_ensemble(self.s0, 100, 2000, base_seed=0)
        stats = ensemble_stats(e)
        expected = [(1.0 - self.p.epsilon) ** 100, (1.0 - self.p.epsilon) ** 50]
        for i, value in enumerate(expected):
            self.assertLess(abs(stats.mean[-1, i] - value), 4.0 * stats.stderr[-1, i])

    def test_ito_mean_decay(self):
        engine = TrajectoryEngine(self.p, scheme=Scheme.ITO)
        e = engine.simulate_ensemble(self.s0, 100, 2000, base_seed=0)
        stats = ensemble_stats(e)
        predicted = exponential_averages(stats.times, self.s0, self.p)
        self.assertTrue(np.all(np.abs(stats.mean[-1] - predicted[-1]) <= 4.0 * stats.stderr[-1] + 1e-12))

    def test_filter_record_reproduces_states(self):
        traj = simulate_trajectory(self.s0, self.p, Scheme.EXACT, 60, seed=2)
        filtered = filter_record(self.s0, traj.readouts, self.p, Scheme.EXACT)
        np.testing.assert_allclose(filtered.states, traj.states, atol=1e-10)
        np.testing.assert_allclose(filtered.noises, traj.noises, atol=1e-10)

    def test_exact_scheme_keeps_pure_states_pure(self):
        """Ten thousand exact steps at eta = 1 stay on the ball surface"""
        ideal = MeasurementParams(eta=1.0, dt=0.01)
        for sampling in (Sampling.GAUSSIAN, Sampling.KRAUS):
            engine = TrajectoryEngine(ideal, sampling=sampling)
            e = engine.simulate_ensemble(self.s0, 10000, 2, base_seed=3)
            self.assertLessEqual(float(np.max(np.abs(purity_defect(e.states)))), 1e-8)
            self.assertEqual(engine.physicality_guard.report()["clipped_states"], 0)

    def test_default_clip_tolerance(self):
        self.assertEqual(default_clip_tolerance(self.p, Scheme.EXACT), 1e-6)
        self.assertAlmostEqual(default_clip_tolerance(self.p, Scheme.ITO), 0.2 * 0.01)
        self.assertEqual(default_clip_tolerance(MeasurementParams(eta=0.0), Scheme.STRATONOVICH), 1e-6)
        engine = TrajectoryEngine(self.p, scheme=Scheme.ITO, clip_tolerance=0.05)
        self.assertEqual(engine.physicality_guard.clip_tolerance, 0.05)

    def test_sde_overshoot_beyond_tolerance_fails(self):
        ideal = MeasurementParams(eta=1.0, dt=0.01)
        strict = TrajectoryEngine(ideal, scheme=Scheme.ITO, clip_tolerance=1e-6)
        with self.assertRaises(IntegrationFailure):
            strict.simulate_ensemble(self.s0, 20, 200, base_seed=0)
        loose = TrajectoryEngine(ideal, scheme=Scheme.ITO, clip_tolerance=0.5)
        loose.simulate_ensemble(self.s0, 20, 200, base_seed=0)
        report = loose.physicality_guard.report()
        self.assertGreater(report["clipped_states"], 0)
        self.assertGreater(report["max_overshoot"], 1e-6)
        self.assertLessEqual(report["max_overshoot"], 0.5)

    def test_invalid_inputs(self):
        engine = TrajectoryEngine(self.p)
        with self.assertRaises(ValueError):
            engine.simulate_trajectory(BlochState(u=1.0, x=1.5), 10, seed=0)
        with self.assertRaises(ValueError):
            engine.simulate_ensemble(self.s0, 10, 0)
        with self.assertRaises(ValueError):
            engine.simulate_trajectory(self.s0, -1, seed=0)
        with self.assertRaises(ValueError):
            filter_record(self.s0, np.zeros((5, 2)), self.p, Scheme.ITO)


class TestEnsembleAnalysis(unittest.TestCase):
    """Tests for post-selection and empirical most-likely paths"""

    def test_postselect(self):
        e = _ensemble([0.2, 0.5, 0.52, 0.9])
        result = postselect(e, FinalCondition(u=0.5), tolerance=0.05)
        self.assertEqual(result.status, "ok")
        self.assertEqual(result.indices.tolist(), [1, 2])
        self.assertAlmostEqual(result.fraction, 0.5)

    def test_postselect_empty(self):
        result = postselect(_ensemble([0.2, 0.9]), FinalCondition(u=0.5), tolerance=0.05)
        self.assertEqual(result.status, "empty")
        self.assertTrue(result.is_empty)
        with self.assertRaises(ValueError):
            postselect(_ensemble([0.2]), FinalCondition(u=0.5), tolerance=0.0)

    def test_empirical_mlp_picks_central_member(self):
        best = empirical_mlp(_ensemble([0.2, 0.5, 0.9]))
        self.assertEqual(best.seed, 1)
        with self.assertRaises(ValueError):
            empirical_mlp(_ensemble([0.5]))

    def test_empirical_mlp_tie_goes_to_lowest_seed(self):
        self.assertEqual(empirical_mlp(_ensemble([0.4, 0.4])).seed, 0)

    def test_band_coverage(self):
        e = _ensemble([0.2, 0.4, 0.6, 0.8])
        stats = ensemble_stats(e)
        self.assertEqual(band_coverage(stats.mean, stats), 1.0)
        self.assertLess(band_coverage(stats.mean[:, 0] + 1.0, stats), 0.5)


if __name__ == '__main__':
    unittest.main()
