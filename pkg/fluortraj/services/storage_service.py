"""
Storage Service for fluortraj
Writes run artifacts (CSV, JSON, npz) under one output directory with fixed
17-significant-digit formatting, and reads ensembles back.
"""

from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Sequence
import csv
import json
import logging
import os

import numpy as np

from fluortraj.engines.middleware.tracing import to_jsonable
from fluortraj.models.bloch import BlochState
from fluortraj.models.correlator import CovarianceGrid
from fluortraj.models.measurement import MeasurementParams, Scheme
from fluortraj.models.operators import SMETrajectory
from fluortraj.models.phase import IdealPath, MLPPath
from fluortraj.models.trajectory import Ensemble, EnsembleStats, Trajectory

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "u", "x", "y", "I", "Q", "xi_I", "xi_Q")
MLP_COLUMNS = ("t", "u", "x", "y", "p_u", "p_x", "p_y", "I", "Q", "E")
IDEAL_COLUMNS = ("t", "theta", "p_theta", "I", "u", "x", "E")
MANIFEST_NAME = "manifest.json"


def fmt(value) -> str:
    """Fixed 17-significant-digit text for any real number"""
    if value is None:
        return ""
    return "%.17g" % float(value)


class StorageService:
    """Service for writing and reading run artifacts in one output directory"""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir

    def path(self, *parts: str) -> str:
        full = os.path.join(self.out_dir, *parts)
        directory = os.path.dirname(full)
        if directory:
            os.makedirs(directory, exist_ok=True)
        return full

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        """Write rows with every number formatted by fmt"""
        target = self.path(name)
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
        return target

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as handle:
            json.dump(to_jsonable(payload), handle, sort_keys=True, indent=2)
            handle.write("\n")
        return target

    def write_text(self, name: str, text: str) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as handle:
            handle.write(text)
        return target

    def read_json(self, name: str) -> Dict[str, Any]:
        with open(os.path.join(self.out_dir, name), encoding="utf-8") as handle:
            return json.load(handle)

    def write_manifest(self, config: Dict[str, Any], status: str = "ok",
                       outputs: Optional[List[str]] = None, extra: Optional[Dict[str, Any]] = None) -> str:
        """
        Persist the resolved config beside the outputs.

        A failed run keeps its partial outputs and is flagged with status "failed".
        """
        payload = {"config": config, "status": status, "outputs": sorted(outputs or [])}
        if extra:
            payload.update(extra)
        target = self.write_json(MANIFEST_NAME, payload)
        logger.info(f"Wrote manifest ({status}) to {target}")
        return target

    def write_trajectory(self, traj: Trajectory, name: str) -> str:
        n = len(traj.times)
        rows = []
        for k in range(n):
            step = k if k < n - 1 else None
            tail = ([traj.readouts[step, 0], traj.readouts[step, 1], traj.noises[step, 0], traj.noises[step, 1]]
                    if step is not None else [None] * 4)
            rows.append([traj.times[k], *traj.states[k], *tail])
        return self.write_csv(name, TRAJECTORY_COLUMNS, rows)

    def save_ensemble(self, e: Ensemble, subdir: str = "ensemble", csv_members: Optional[int] = None) -> List[str]:
        """
        Write per-member CSVs (the first csv_members, all when None), the stacked
        arrays as npz and a JSON sidecar with params, seeds and scheme.
        """
        written = []
        count = len(e) if csv_members is None else min(csv_members, len(e))
        for k in range(count):
            seed = int(e.seeds[k])
            written.append(self.write_trajectory(e.trajectory(k), os.path.join(subdir, f"traj_{seed}.csv")))
        arrays = self.path(subdir, "ensemble.npz")
        np.savez(arrays, times=e.times, states=e.states, readouts=e.readouts, noises=e.noises, seeds=e.seeds)
        written.append(arrays)
        written.append(self.write_json(os.path.join(subdir, "ensemble.json"), {
            "params": e.params.model_dump(),
            "initial": e.initial.model_dump(),
            "scheme": e.scheme.value,
            "seeds": [int(s) for s in e.seeds],
            "n_trajectories": len(e),
            "columns": list(TRAJECTORY_COLUMNS),
        }))
        logger.info(f"Saved ensemble of {len(e)} trajectories under {os.path.join(self.out_dir, subdir)}")
        return written

    def write_stats(self, stats: EnsembleStats, predictions: np.ndarray, name: str) -> str:
        """Per-time means, variances and standard errors beside the exponential predictions"""
        header = ("t", "mean_u", "mean_x", "mean_y", "var_u", "var_x", "var_y",
                  "se_u", "se_x", "se_y", "pred_u", "pred_x", "pred_y")
        rows = [[t, *m, *v, *s, *q] for t, m, v, s, q in
                zip(stats.times, stats.mean, stats.variance, stats.stderr, predictions)]
        return self.write_csv(name, header, rows)

    def write_covariance_grid(self, grid: CovarianceGrid, name: str) -> List[str]:
        """Header of t2 values, one row per t1; stderr grid and metadata sidecar beside it"""
        written = [self.write_csv(f"{name}.csv", ["t1\\t2", *[fmt(t) for t in grid.t2]],
                                  ([t1, *row] for t1, row in zip(grid.t1, grid.values)))]
        if grid.stderr is not None:
            written.append(self.write_csv(f"{name}_stderr.csv", ["t1\\t2", *[fmt(t) for t in grid.t2]],
                                          ([t1, *row] for t1, row in zip(grid.t1, grid.stderr))))
        written.append(self.write_json(f"{name}.json", grid.metadata()))
        return written

    def write_mlp_path(self, path: MLPPath, name: str) -> str:
        rows = [[t, *z, *r, E] for t, z, r, E in zip(path.times, path.points, path.readouts, path.energies)]
        return self.write_csv(name, MLP_COLUMNS, rows)

    def write_ideal_path(self, path: IdealPath, name: str) -> str:
        states = path.bloch_states()
        rows = [[t, th, p, I, s[0], s[1], path.energy.E]
                for t, th, p, I, s in zip(path.times, path.theta, path.p_theta, path.readout, states)]
        return self.write_csv(name, IDEAL_COLUMNS, rows)

    def write_phase_portrait(self, rows: List[Dict[str, float]], name: str) -> str:
        header = ("E", "theta", "p_minus", "p_plus")
        return self.write_csv(name, header, ([r["E"], r["theta"], r["p_minus"], r["p_plus"]] for r in rows))

    def write_sme_trajectory(self, traj: SMETrajectory, name: str) -> str:
        """One row per time: t, flattened rho entries as re/im pairs, then the step's readouts"""
        n = traj.dim
        m = traj.readouts.shape[1] if traj.readouts.ndim == 2 else 0
        header = ["t"]
        for i in range(n):
            for j in range(n):
                header += [f"rho_{i}{j}_re", f"rho_{i}{j}_im"]
        header += [f"r_{k}" for k in range(m)]
        rows = []
        for k, t in enumerate(traj.times):
            flat = traj.rhos[k].reshape(-1)
            entries = [v for z in flat for v in (z.real, z.imag)]
            tail = list(traj.readouts[k]) if k < len(traj.readouts) else [None] * m
            rows.append([t, *entries, *tail])
        return self.write_csv(name, header, rows)


def load_ensemble(directory: str) -> Ensemble:
    """
    Read an ensemble written by save_ensemble.

    Raises:
        FileNotFoundError: If the npz or its JSON sidecar is missing
    """
    try:
        with open(os.path.join(directory, "ensemble.json"), encoding="utf-8") as handle:
            meta = json.load(handle)
        with np.load(os.path.join(directory, "ensemble.npz")) as data:
            arrays = {key: data[key] for key in data.files}
    except Exception as e:
        logger.error(f"Error loading ensemble from {directory}: {str(e)}")
        raise
    return Ensemble(
        times=arrays["times"],
        states=arrays["states"],
        readouts=arrays["readouts"],
        noises=arrays["noises"],
        seeds=arrays["seeds"],
        params=MeasurementParams(**meta["params"]),
        initial=BlochState(**meta["initial"]),
        scheme=Scheme(meta["scheme"]),
    )


@lru_cache()
def get_storage_service(out_dir: str) -> StorageService:
    """One storage service per output directory"""
    return StorageService(out_dir)
