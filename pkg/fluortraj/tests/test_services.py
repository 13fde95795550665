"""
Tests for the settings, storage, report and random-stream services
"""

import csv
import json
import os
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

from fluortraj.engines.correlators import covariance_grid
from fluortraj.engines.trajectory_engine import TrajectoryEngine
from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams, Scheme
from fluortraj.services.report_service import ReportService
from fluortraj.services.rng_service import RNGService, generator_for_seed
from fluortraj.services.settings_service import get_settings, resolve_threads
from fluortraj.services.storage_service import StorageService, fmt, load_ensemble


class TestSettingsService(unittest.TestCase):
    """Tests for environment-driven settings"""

    def setUp(self):
        """Set up test fixtures"""
        get_settings.cache_clear()

    def tearDown(self):
        """Tear down test fixtures"""
        get_settings.cache_clear()

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            settings = get_settings()
        self.assertEqual(settings.threads, 1)
        self.assertEqual(settings.out_dir, "out")
        self.assertEqual(settings.log_level, "INFO")
        self.assertFalse(settings.trace)

    def test_environment_overrides(self):
        env = {"FLUOR_THREADS": "4", "FLUOR_OUT": "/tmp/runs", "FLUOR_LOG_LEVEL": "debug", "FLUOR_TRACE": "1"}
        with patch.dict(os.environ, env, clear=True):
            settings = get_settings()
            self.assertEqual(resolve_threads(None), 4)
            self.assertEqual(resolve_threads(2), 2)
        self.assertEqual(settings.out_dir, "/tmp/runs")
        self.assertEqual(settings.log_level, "DEBUG")
        self.assertTrue(settings.trace)

    def test_invalid_values(self):
        with patch.dict(os.environ, {"FLUOR_THREADS": "many"}, clear=True):
            with self.assertRaises(ValueError):
                get_settings()
        get_settings.cache_clear()
        with patch.dict(os.environ, {"FLUOR_LOG_LEVEL": "LOUD"}, clear=True):
            with self.assertRaises(ValueError):
                get_settings()
        with self.assertRaises(ValueError):
            resolve_threads(0)


class TestStorageService(unittest.TestCase):
    """Tests for artifact files"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.storage = StorageService(self.tmp.name)
        self.p = MeasurementParams(eta=0.2, dt=0.01)
        self.s0 = BlochState(u=1.0, x=1.0, y=0.0)

    def tearDown(self):
        """Tear down test fixtures"""
        self.tmp.cleanup()

    def test_number_format(self):
        self.assertEqual(fmt(0.1), "0.10000000000000001")
        self.assertEqual(fmt(None), "")
        self.assertEqual(fmt(np.float64(2.0)), "2")

    def test_ensemble_files(self):
        engine = TrajectoryEngine(self.p, scheme=Scheme.ITO)
        ensemble = engine.simulate_ensemble(self.s0, 20, 4, base_seed=10)
        written = self.storage.save_ensemble(ensemble, csv_members=2)
        names = sorted(os.path.relpath(w, self.tmp.name) for w in written)
        self.assertEqual(names, ["ensemble/ensemble.json", "ensemble/ensemble.npz",
                                 "ensemble/traj_10.csv", "ensemble/traj_11.csv"])

        with open(os.path.join(self.tmp.name, "ensemble", "traj_10.csv"), encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["t", "u", "x", "y", "I", "Q", "xi_I", "xi_Q"])
        self.assertEqual(len(rows), 22)
        self.assertEqual(rows[-1][4:], ["", "", "", ""])

        again = load_ensemble(os.path.join(self.tmp.name, "ensemble"))
        np.testing.assert_array_equal(again.states, ensemble.states)
        np.testing.assert_array_equal(again.seeds, [10, 11, 12, 13])
        self.assertEqual(again.scheme, Scheme.ITO)
        self.assertEqual(again.params, self.p)

    def test_missing_ensemble(self):
        with self.assertRaises(FileNotFoundError):
            load_ensemble(os.path.join(self.tmp.name, "nothing"))

    def test_covariance_grid_files(self):
        grid = covariance_grid(("u", "u"), [0.0, 0.5], [0.0, 0.5, 1.0], self.s0, self.p)
        written = self.storage.write_covariance_grid(grid, "cov_u_u_analytic")
        self.assertEqual(len(written), 2)
        with open(written[0], encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["t1\\t2", "0", "0.5", "1"])
        self.assertEqual(len(rows), 3)
        meta = self.storage.read_json("cov_u_u_analytic.json")
        self.assertEqual(meta["kind"], "analytic")

    def test_manifest(self):
        self.storage.write_manifest({"command": "average"}, status="failed", outputs=["b.csv", "a.csv"],
                                    extra={"error": "boom"})
        with open(os.path.join(self.tmp.name, "manifest.json"), encoding="utf-8") as handle:
            manifest = json.load(handle)
        self.assertEqual(manifest["status"], "failed")
        self.assertEqual(manifest["outputs"], ["a.csv", "b.csv"])
        self.assertEqual(manifest["error"], "boom")


class TestReportService(unittest.TestCase):
    """Tests for the text report templates"""

    def test_cv_report(self):
        rows = [{"target": "sigma_z", "estimate": 0.98, "stderr": 0.05, "truth_if_known": 1.0}]
        text = ReportService().cv_report(rows, initial=BlochState.excited(), epsilon=0.02, N=1000)
        self.assertIn("sigma_z", text)
        self.assertIn("+0.98000 +/- 0.05000", text)

    def test_missing_value_raises(self):
        with self.assertRaises(Exception):
            ReportService().cv_report([], epsilon=0.02, N=10)


class TestRNGService(unittest.TestCase):
    """Tests for the per-member random streams"""

    def test_member_seeds(self):
        self.assertEqual(RNGService(7).member_seeds(3), [7, 8, 9])
        with self.assertRaises(ValueError):
            RNGService(-1)

    def test_streams_are_keyed(self):
        a = generator_for_seed(5).standard_normal(4)
        b = generator_for_seed(5).standard_normal(4)
        c = generator_for_seed(6).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.allclose(a, c))


if __name__ == '__main__':
    unittest.main()
