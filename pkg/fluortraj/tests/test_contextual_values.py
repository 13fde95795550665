"""
Tests for observable reconstruction with contextual values
"""

import unittest

import numpy as np

from fluortraj.engines.contextual_values import (
    cv_for,
    observable_matrix,
    povm_completeness,
    povm_element,
    reconstruct,
    reconstruct_all,
    reconstruct_expectation,
    reconstruction_identity,
    sample_single_step_alpha,
    true_expectation,
)
from fluortraj.engines.bloch import to_density
from fluortraj.engines.weak_measurement import kraus_trace_density
from fluortraj.models.bloch import BlochState
from fluortraj.models.contextual import Observable


class TestContextualValues(unittest.TestCase):
    """Tests for the weightings and the POVM they invert"""

    def test_povm_is_complete(self):
        np.testing.assert_allclose(povm_completeness(0.05), np.eye(2), atol=1e-6)

    def test_povm_elements_give_outcome_density(self):
        alpha = np.array([0.0, 0.4 - 0.2j, -1.1 + 0.7j])
        elements = povm_element(alpha, 0.05)
        np.testing.assert_allclose(elements, np.conj(np.swapaxes(elements, -1, -2)), atol=1e-15)
        self.assertTrue(np.all(np.linalg.eigvalsh(elements) >= -1e-15))
        s = BlochState(u=1.3, x=0.6, y=-0.5)
        rho = to_density(s).matrix
        probs = np.einsum("ij,kji->k", rho, elements).real
        np.testing.assert_allclose(probs, kraus_trace_density(s, 0.05, alpha), atol=1e-14)

    def test_weightings_reconstruct_operators(self):
        for target in Observable:
            cv = cv_for(target, 0.05)
            np.testing.assert_allclose(reconstruction_identity(cv), observable_matrix(target), atol=1e-6)

    def test_invalid_strength(self):
        with self.assertRaises(ValueError):
            cv_for(Observable.SIGMA_Z, 0.0)
        with self.assertRaises(ValueError):
            cv_for("sigma_w", 0.1)

    def test_true_expectation(self):
        s = BlochState(u=0.4, x=0.3, y=-0.5)
        self.assertAlmostEqual(true_expectation(s, "sigma_x"), 0.3)
        self.assertAlmostEqual(true_expectation(s, Observable.SIGMA_Y), -0.5)
        self.assertAlmostEqual(true_expectation(s, Observable.SIGMA_Z), -0.6)


class TestReconstruction(unittest.TestCase):
    """Sample-mean reconstruction from single-step outcomes"""

    def test_excited_state_sigma_z(self):
        result = reconstruct(BlochState.excited(), Observable.SIGMA_Z, 0.05, 20000, seed=4)
        self.assertEqual(result.N, 20000)
        self.assertEqual(result.truth_if_known, 1.0)
        self.assertLess(abs(result.estimate - 1.0), 4.0 * result.stderr)

    def test_all_paulis_share_one_sample(self):
        s = BlochState(u=1.0, x=0.6, y=0.8)
        results = reconstruct_all(s, 0.05, 20000, seed=9)
        self.assertEqual(set(results), {"sigma_x", "sigma_y", "sigma_z"})
        for name, result in results.items():
            self.assertLess(abs(result.estimate - result.truth_if_known), 4.0 * result.stderr, name)
        self.assertGreater(results["sigma_z"].stderr, results["sigma_x"].stderr)

    def test_sampling_is_seeded(self):
        a = sample_single_step_alpha(BlochState.ground(), 0.02, 50, seed=1)
        b = sample_single_step_alpha(BlochState.ground(), 0.02, 50, seed=1)
        np.testing.assert_array_equal(a, b)

    def test_empty_sample(self):
        with self.assertRaises(ValueError):
            reconstruct_expectation([], cv_for(Observable.SIGMA_X, 0.1))
        with self.assertRaises(ValueError):
            sample_single_step_alpha(BlochState.ground(), 0.1, 0, seed=0)


if __name__ == '__main__':
    unittest.main()
