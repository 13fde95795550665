"""
mlp: solve the most-likely-path boundary-value problem and, optionally, compare
it with the empirical most-likely path of a post-selected ensemble.
"""

from typing import Any, Dict, Optional
import logging

import numpy as np

from fluortraj.engines.mlp_solver import energy_conserved, solve_mlp_bvp, stochastic_action
from fluortraj.engines.trajectory_engine import (
    TrajectoryEngine,
    band_coverage,
    empirical_mlp,
    ensemble_stats,
    postselect,
)
from fluortraj.models.config import MLPSection
from fluortraj.models.phase import MLPPath
from fluortraj.routers.common import RunContext, numeric_guard, readout_scale
from fluortraj.services.report_service import get_report_service

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("mlp", parents=parents, help="Most-likely path between boundary conditions")
    parser.set_defaults(handler=run)


def _postselected(ctx: RunContext, section: MLPSection, path: MLPPath) -> Dict[str, Any]:
    ps = section.postselect
    n_steps = int(round(section.T / section.params.dt))
    engine = TrajectoryEngine(section.params, sampling=ps.sampling, middleware=ctx.middleware(),
                              clip_tolerance=ps.clip_tolerance, max_workers=ctx.threads)
    try:
        ensemble = engine.simulate_ensemble(section.initial, n_steps, ps.n_trajectories, section.seed)
    finally:
        ctx.note_physicality("postselect", engine)
    result = postselect(ensemble, section.final, ps.tolerance)
    report: Dict[str, Any] = {
        "status": result.status,
        "n_trajectories": ps.n_trajectories,
        "selected": 0 if result.is_empty else len(result.ensemble),
        "fraction": result.fraction,
        "coverage": None,
    }
    if result.is_empty or len(result.ensemble) < 2:
        logger.warning(f"Post-selection kept {report['selected']} trajectories; no empirical path")
        return report
    sub = result.ensemble
    best = empirical_mlp(sub)
    stats = ensemble_stats(sub)
    ctx.record(ctx.storage.write_trajectory(best, "empirical_mlp.csv"))
    ctx.record(ctx.storage.write_stats(stats, np.full_like(stats.mean, np.nan), "postselected_stats.csv"))
    analytic_u = np.interp(stats.times, path.times, path.states[:, 0])
    report["coverage"] = band_coverage(analytic_u, stats, component=0, width=1.0, center=best.states)
    report["empirical_seed"] = best.seed
    return report


def run(ctx: RunContext) -> Dict[str, Any]:
    section = ctx.section
    with numeric_guard(ctx):
        path = solve_mlp_bvp(section.initial, section.final, section.T, section.params,
                             initial_momenta=section.initial_momenta, h=section.step, tol=section.tol)
        ctx.record(ctx.storage.write_mlp_path(path, "mlp_path.csv"))
        ps_report: Optional[Dict[str, Any]] = None
        if section.postselect is not None:
            ps_report = _postselected(ctx, section, path)

    summary = {
        "energy": path.energy.E,
        "energy_drift": path.energy.drift,
        "energy_conserved": energy_conserved(path.energy),
        "residual": path.residual,
        "iterations": path.iterations,
        "action": stochastic_action(path, section.params),
        "readout_scale": readout_scale(section.params.gamma1),
        "postselect": ps_report,
    }
    text = get_report_service().mlp_summary(
        run_id=ctx.tracer.run_id if ctx.tracer else "-",
        initial=section.initial,
        final={k: v for k, v in section.final.model_dump().items() if v is not None},
        T=section.T,
        method=path.method,
        residual=path.residual,
        iterations=path.iterations,
        energy=path.energy.E,
        drift=path.energy.drift,
        postselect=ps_report,
    )
    ctx.record(ctx.storage.write_text("summary.txt", text))
    ctx.finish(extra=summary)
    return summary
