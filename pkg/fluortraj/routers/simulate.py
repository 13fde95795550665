"""
simulate: generate an ensemble and write per-trajectory CSVs, the stacked
arrays and the manifest.
"""

from typing import Any, Dict
import logging

from fluortraj.engines.trajectory_engine import TrajectoryEngine
from fluortraj.models.config import EnsembleSection
from fluortraj.models.trajectory import Ensemble
from fluortraj.routers.common import RunContext, numeric_guard, readout_scale

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("simulate", parents=parents, help="Generate a trajectory ensemble")
    parser.set_defaults(handler=run)


def build_ensemble(ctx: RunContext, section: EnsembleSection) -> Ensemble:
    engine = TrajectoryEngine(
        section.params,
        scheme=section.scheme,
        sampling=section.sampling,
        middleware=ctx.middleware(),
        clip_tolerance=section.clip_tolerance,
        max_workers=ctx.threads,
    )
    try:
        return engine.simulate_ensemble(section.initial, section.n_steps, section.n_trajectories, section.seed)
    finally:
        ctx.note_physicality("ensemble", engine)


def run(ctx: RunContext) -> Dict[str, Any]:
    section = ctx.section
    with numeric_guard(ctx):
        ensemble = build_ensemble(ctx, section)
        ctx.record(*ctx.storage.save_ensemble(ensemble, "ensemble", section.csv_members))
    summary = {
        "n_trajectories": len(ensemble),
        "n_steps": section.n_steps,
        "readout_scale": readout_scale(section.params.gamma1),
    }
    ctx.finish(extra=summary)
    return summary
