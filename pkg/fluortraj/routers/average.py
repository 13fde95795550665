"""
average: ensemble means and variances per time beside the exponential predictions.
"""

from typing import Any, Dict
import logging

import numpy as np

from fluortraj.engines.trajectory_engine import ensemble_stats, exponential_averages
from fluortraj.models.trajectory import STATE_COLUMNS
from fluortraj.routers.common import RunContext, numeric_guard
from fluortraj.routers.simulate import build_ensemble

logger = logging.getLogger(__name__)

CHECK_TIMES = (0.5, 1.0, 2.0)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("average", parents=parents, help="Ensemble averages vs exponential decay")
    parser.set_defaults(handler=run)


def deviation_checks(stats, predictions: np.ndarray) -> Dict[str, Dict[str, float]]:
    """|mean - prediction| / SE at the check times inside the grid"""
    checks = {}
    for t in CHECK_TIMES:
        if t > stats.times[-1] + 1e-12:
            continue
        k = int(np.argmin(np.abs(stats.times - t)))
        row = {}
        for i, name in enumerate(STATE_COLUMNS):
            se = stats.stderr[k, i]
            diff = abs(stats.mean[k, i] - predictions[k, i])
            row[name] = float(diff / se) if se > 0 else (0.0 if diff <= 1e-12 else float("inf"))
        checks[f"{stats.times[k]:.6g}"] = row
    return checks


def run(ctx: RunContext) -> Dict[str, Any]:
    section = ctx.section
    with numeric_guard(ctx):
        ensemble = build_ensemble(ctx, section)
        stats = ensemble_stats(ensemble)
        predictions = exponential_averages(stats.times, section.initial, section.params)
        ctx.record(ctx.storage.write_stats(stats, predictions, "averages.csv"))
    summary = {"n_trajectories": len(ensemble), "z_scores": deviation_checks(stats, predictions)}
    ctx.finish(extra=summary)
    return summary
