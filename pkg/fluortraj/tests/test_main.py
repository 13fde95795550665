"""
Tests for the command-line entry point
"""

import csv
import json
import os
import tempfile
import unittest
from unittest.mock import patch

from fluortraj.main import build_parser, main
from fluortraj.services.settings_service import get_settings
from fluortraj.services.storage_service import MLP_COLUMNS, TRAJECTORY_COLUMNS


class TestMain(unittest.TestCase):
    """End-to-end runs of small configs"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.env = patch.dict(os.environ, {"FLUOR_LOG_LEVEL": "WARNING"}, clear=True)
        self.env.start()
        get_settings.cache_clear()

    def tearDown(self):
        """Tear down test fixtures"""
        self.env.stop()
        get_settings.cache_clear()
        self.tmp.cleanup()

    def _config(self, payload) -> str:
        path = os.path.join(self.tmp.name, "config.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)
        return path

    def _manifest(self, out: str) -> dict:
        with open(os.path.join(out, "manifest.json"), encoding="utf-8") as handle:
            return json.load(handle)

    def test_cv_reconstruct(self):
        config = self._config({
            "command": "cv-reconstruct",
            "cv_reconstruct": {"initial": {"u": 2.0}, "epsilon": 0.05, "N": 2000, "targets": ["sigma_z"]},
        })
        out = os.path.join(self.tmp.name, "cv")
        self.assertEqual(main(["cv-reconstruct", "--config", config, "--out", out, "--seed", "3", "--quiet"]), 0)
        manifest = self._manifest(out)
        self.assertEqual(manifest["status"], "ok")
        self.assertEqual(manifest["config"]["cv_reconstruct"]["seed"], 3)
        self.assertEqual(sorted(manifest["outputs"]), ["cv_report.json", "cv_report.txt"])
        self.assertEqual(manifest["results"][0]["target"], "sigma_z")

    def test_mlp_ideal_zero_energy_path(self):
        config = self._config({
            "command": "mlp-ideal",
            "mlp_ideal": {"theta0": 1.0, "T": 0.2, "step": 0.01, "energies": [-2.0, 0.0], "theta_points": 21},
        })
        out = os.path.join(self.tmp.name, "ideal")
        self.assertEqual(main(["mlp-ideal", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        self.assertEqual(sorted(manifest["outputs"]), ["ideal_path.csv", "phase_portrait.csv"])
        self.assertAlmostEqual(manifest["energy"], 0.0, places=9)

    def _header(self, path: str) -> list:
        with open(path, encoding="utf-8") as handle:
            return next(csv.reader(handle))

    def test_simulate(self):
        config = self._config({
            "command": "simulate",
            "simulate": {
                "params": {"eta": 0.2, "dt": 0.01},
                "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                "sampling": "kraus",
                "n_steps": 20,
                "n_trajectories": 5,
                "seed": 2,
                "csv_members": 2,
            },
        })
        out = os.path.join(self.tmp.name, "simulate")
        self.assertEqual(main(["simulate", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        self.assertEqual(manifest["status"], "ok")
        self.assertEqual(manifest["outputs"], ["ensemble/ensemble.json", "ensemble/ensemble.npz",
                                               "ensemble/traj_2.csv", "ensemble/traj_3.csv"])
        self.assertEqual(manifest["physicality"]["ensemble"]["clip_tolerance"], 1e-6)
        self.assertEqual(manifest["physicality"]["ensemble"]["clipped_states"], 0)
        self.assertEqual(self._header(os.path.join(out, "ensemble", "traj_2.csv")), list(TRAJECTORY_COLUMNS))

    def test_average_with_ito_scheme(self):
        config = self._config({
            "command": "average",
            "average": {
                "params": {"eta": 0.2, "dt": 0.01},
                "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                "scheme": "ito",
                "n_steps": 60,
                "n_trajectories": 50,
            },
        })
        out = os.path.join(self.tmp.name, "average")
        self.assertEqual(main(["average", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        self.assertEqual(manifest["outputs"], ["averages.csv"])
        self.assertEqual(list(manifest["z_scores"]), ["0.5"])
        self.assertAlmostEqual(manifest["physicality"]["ensemble"]["clip_tolerance"], 0.2 * 0.01)

    def test_sde_overshoot_fails_run(self):
        config = self._config({
            "command": "simulate",
            "simulate": {
                "params": {"eta": 1.0, "dt": 0.01},
                "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                "scheme": "ito",
                "n_steps": 20,
                "n_trajectories": 200,
                "clip_tolerance": 1e-6,
            },
        })
        out = os.path.join(self.tmp.name, "overshoot")
        self.assertEqual(main(["simulate", "--config", config, "--out", out]), 3)
        manifest = self._manifest(out)
        self.assertEqual(manifest["status"], "failed")
        self.assertIn("step", manifest)
        self.assertGreater(manifest["physicality"]["ensemble"]["max_overshoot"], 1e-6)

    def test_correlate(self):
        config = self._config({
            "command": "correlate",
            "correlate": {
                "ensemble": {
                    "params": {"eta": 0.2, "dt": 0.01},
                    "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                    "n_steps": 40,
                    "n_trajectories": 40,
                },
                "pairs": [["u", "u"], ["x", "xi_I"]],
                "t_max": 0.3,
                "grid_points": 4,
                "n_blocks": 10,
            },
        })
        out = os.path.join(self.tmp.name, "correlate")
        self.assertEqual(main(["correlate", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        for name in ("cov_u_u_analytic.csv", "cov_u_u_empirical.csv", "cov_u_u_empirical_stderr.csv",
                     "cov_x_xi_I_empirical.csv", "correlate_report.txt"):
            self.assertIn(name, manifest["outputs"])
        header = self._header(os.path.join(out, "cov_u_u_empirical.csv"))
        self.assertEqual(header[0], "t1\\t2")
        self.assertEqual(len(header), 5)
        self.assertEqual([r["pair"] for r in manifest["reports"]], [["u", "u"], ["x", "xi_I"]])
        self.assertTrue(manifest["regime"]["in_regime"])

    def test_mlp_with_postselection(self):
        config = self._config({
            "command": "mlp",
            "mlp": {
                "params": {"eta": 1.0, "dt": 0.01},
                "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                "final": {"u": 1.1},
                "T": 0.5,
                "postselect": {"n_trajectories": 300, "sampling": "kraus"},
            },
        })
        out = os.path.join(self.tmp.name, "mlp")
        self.assertEqual(main(["mlp", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        self.assertIn("mlp_path.csv", manifest["outputs"])
        self.assertIn("summary.txt", manifest["outputs"])
        self.assertTrue(manifest["energy_conserved"])
        self.assertEqual(manifest["postselect"]["n_trajectories"], 300)
        self.assertEqual(manifest["physicality"]["postselect"]["clipped_states"], 0)
        self.assertEqual(self._header(os.path.join(out, "mlp_path.csv")), list(MLP_COLUMNS))

    def test_sme_with_bloch_comparison(self):
        config = self._config({
            "command": "sme",
            "sme": {
                "fluorescence": {"eta": 1.0, "dt": 0.01},
                "initial": {"u": 1.0, "x": 1.0, "y": 0.0},
                "n_steps": 10,
                "n_trajectories": 4,
                "compare": True,
            },
        })
        out = os.path.join(self.tmp.name, "sme")
        self.assertEqual(main(["sme", "--config", config, "--out", out]), 0)
        manifest = self._manifest(out)
        self.assertEqual(manifest["outputs"], ["sme/sme_traj_0.csv", "sme/sme_traj_1.csv", "sme/sme_traj_2.csv",
                                               "sme/sme_traj_3.csv", "sme_compare.csv"])
        self.assertEqual(manifest["dim"], 2)
        self.assertEqual(manifest["n_channels"], 3)
        self.assertIn("max_abs_z", manifest["compare"])
        self.assertIn("bloch_reference", manifest["physicality"])

    def test_bvp_failure_exit_code(self):
        config = self._config({
            "command": "mlp-ideal",
            "mlp_ideal": {"theta0": 0.7, "theta_f": 0.7, "T": 1.0},
        })
        out = os.path.join(self.tmp.name, "fail")
        self.assertEqual(main(["mlp-ideal", "--config", config, "--out", out]), 3)
        manifest = self._manifest(out)
        self.assertEqual(manifest["status"], "failed")
        self.assertIn("residual", manifest)

    def test_config_errors(self):
        out = os.path.join(self.tmp.name, "bad")
        self.assertEqual(main(["average", "--config", os.path.join(self.tmp.name, "missing.json"), "--out", out]), 2)
        config = self._config({"command": "cv-reconstruct", "cv_reconstruct": {"initial": {"u": 2.0}}})
        self.assertEqual(main(["cv-reconstruct", "--config", config, "--out", out]), 2)
        self.assertFalse(os.path.exists(os.path.join(out, "manifest.json")))

    def test_bad_threads(self):
        config = self._config({
            "command": "cv-reconstruct",
            "cv_reconstruct": {"initial": {"u": 2.0}, "epsilon": 0.05, "N": 10},
        })
        self.assertEqual(main(["cv-reconstruct", "--config", config, "--threads", "0"]), 2)

    def test_usage_errors(self):
        with patch("sys.stderr"):
            self.assertEqual(main(["teleport", "--config", "x.json"]), 2)
            self.assertEqual(main(["average"]), 2)

    def test_parser_lists_every_command(self):
        parser = build_parser()
        args = parser.parse_args(["sme", "--config", "c.json", "--threads", "2"])
        self.assertEqual(args.command, "sme")
        self.assertEqual(args.threads, 2)
        self.assertTrue(callable(args.handler))


if __name__ == '__main__':
    unittest.main()
