"""
Tests for Bloch-coordinate conversions and validity checks
"""

import math
import unittest

import numpy as np

from fluortraj.engines.bloch import (
    from_density,
    project_to_ball,
    purity_defect,
    random_physical_states,
    state_from_theta,
    theta_from_state,
    to_density,
    trace_distance,
)
from fluortraj.engines.errors import NonPhysicalStateError
from fluortraj.models.bloch import BlochState, DensityMatrix2, PolarAngle


class TestBlochState(unittest.TestCase):
    """Tests for the BlochState model and density-matrix conversions"""

    def test_ground_and_excited(self):
        """Ground and excited states sit at the poles"""
        self.assertEqual(BlochState.ground().as_array().tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(BlochState.excited().z, 1.0)
        self.assertTrue(BlochState.excited().is_physical())

    def test_outside_ball_is_not_physical(self):
        s = BlochState(u=1.0, x=1.2, y=0.0)
        self.assertFalse(s.is_physical())
        with self.assertRaises(NonPhysicalStateError):
            to_density(s)

    def test_non_finite_rejected(self):
        with self.assertRaises(ValueError):
            BlochState(u=float("nan"))

    def test_density_conversion(self):
        """rho_ee = u/2 and rho_eg = (x - iy)/2 in the (|e>, |g>) basis"""
        s = BlochState(u=1.2, x=0.3, y=-0.4)
        rho = to_density(s)
        self.assertAlmostEqual(rho.rho_ee.real, 0.6)
        self.assertAlmostEqual(rho.rho_gg.real, 0.4)
        self.assertAlmostEqual(rho.rho_eg, complex(0.15, 0.2))
        back = from_density(rho)
        np.testing.assert_allclose(back.as_array(), s.as_array(), atol=1e-15)

    def test_density_validation(self):
        with self.assertRaises(ValueError):
            DensityMatrix2(matrix=[[0.7, 0.0], [0.0, 0.7]]).validate_physical()
        with self.assertRaises(ValueError):
            DensityMatrix2(matrix=[[0.5, 0.6], [0.6, 0.5]]).validate_physical()

    def test_purity_defect(self):
        self.assertAlmostEqual(purity_defect(PolarAngle(theta=0.7).to_bloch()), 0.0, places=14)
        self.assertAlmostEqual(purity_defect(BlochState(u=1.0)), 1.0)

    def test_theta_round_trip(self):
        thetas = np.linspace(-3.0, 3.0, 7)
        np.testing.assert_allclose(theta_from_state(state_from_theta(thetas)), thetas, atol=1e-14)

    def test_trace_distance(self):
        """Antipodal pure states are at distance one"""
        self.assertAlmostEqual(float(trace_distance(BlochState.ground(), BlochState.excited())), 1.0)

    def test_project_to_ball(self):
        r = np.array([[1.0, 2.0, 0.0], [1.0, 0.5, 0.0]])
        out = project_to_ball(r)
        np.testing.assert_allclose(out[0], [1.0, 1.0, 0.0])
        np.testing.assert_allclose(out[1], r[1])

    def test_random_states_are_physical(self):
        states = random_physical_states(np.random.default_rng(3), 200, pure_fraction=0.5)
        self.assertEqual(states.shape, (200, 3))
        self.assertTrue(all(BlochState.from_array(s).is_physical() for s in states))
        self.assertTrue(np.any(np.abs(purity_defect(states)) < 1e-12))

    def test_polar_angle(self):
        s = PolarAngle(theta=math.pi / 2).to_bloch()
        self.assertAlmostEqual(s.u, 1.0)
        self.assertAlmostEqual(s.x, 1.0)


if __name__ == '__main__':
    unittest.main()
