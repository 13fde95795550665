"""
sme: density-matrix trajectories for an arbitrary operator set, with an
optional cross-check of the fluorescence set against the Bloch-vector engine.
"""

from typing import Any, Dict
import logging

import numpy as np

from fluortraj.engines.sme_engine import SMEEngine, bloch_from_rho, fluorescence_operator_set, rho_from_bloch
from fluortraj.engines.trajectory_engine import TrajectoryEngine, ensemble_stats
from fluortraj.models.config import SMESection
from fluortraj.models.measurement import MeasurementParams, Scheme
from fluortraj.models.operators import OperatorSet, SMEEnsemble, matrix_from_json
from fluortraj.routers.common import RunContext, numeric_guard

logger = logging.getLogger(__name__)

CSV_MEMBERS = 10


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("sme", parents=parents, help="General stochastic master equation trajectories")
    parser.set_defaults(handler=run)


def operator_set(section: SMESection) -> OperatorSet:
    if section.operators is not None:
        return OperatorSet.from_json_dict(section.operators)
    p = section.fluorescence
    return fluorescence_operator_set(p.gamma1, p.gamma_phi, p.eta)


def initial_rho(section: SMESection) -> np.ndarray:
    if section.rho0 is not None:
        return matrix_from_json(section.rho0)
    return rho_from_bloch(section.initial)


def compare_with_bloch_engine(ctx: RunContext, section: SMESection, ensemble: SMEEnsemble) -> Dict[str, Any]:
    """
    Mean Bloch components of the density-matrix ensemble against an exact-scheme
    Bloch-vector ensemble of the same size; |difference| / combined SE per component.
    """
    params = MeasurementParams(**{**section.fluorescence.model_dump(), "dt": section.dt})
    s0 = bloch_from_rho(initial_rho(section))
    engine = TrajectoryEngine(params, scheme=Scheme.EXACT, middleware=ctx.middleware(), max_workers=ctx.threads)
    try:
        reference = ensemble_stats(engine.simulate_ensemble(s0, len(ensemble.times) - 1, len(ensemble),
                                                            section.seed + len(ensemble)))
    finally:
        ctx.note_physicality("bloch_reference", engine)
    bloch = bloch_from_rho(ensemble.rhos)
    mean = bloch.mean(axis=0)
    n = len(ensemble)
    se = np.sqrt(bloch.var(axis=0, ddof=1) / n + reference.stderr ** 2) if n > 1 else reference.stderr
    diff = np.abs(mean - reference.mean)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), 0.0)
    ctx.record(ctx.storage.write_csv(
        "sme_compare.csv",
        ("t", "sme_u", "sme_x", "sme_y", "bloch_u", "bloch_x", "bloch_y"),
        ([t, *a, *b] for t, a, b in zip(ensemble.times, mean, reference.mean)),
    ))
    result = {"max_abs_diff": float(diff.max()), "max_abs_z": float(z.max())}
    logger.info(f"Density-matrix vs Bloch ensemble: max |diff| = {result['max_abs_diff']:.3e}, "
                f"max z = {result['max_abs_z']:.2f}")
    return result


def run(ctx: RunContext) -> Dict[str, Any]:
    section: SMESection = ctx.section
    summary: Dict[str, Any] = {}
    with numeric_guard(ctx):
        ops = operator_set(section)
        engine = SMEEngine(ops, section.dt, exact_sampling=section.exact_sampling,
                           middleware=ctx.middleware(), max_workers=ctx.threads)
        ensemble = engine.simulate_ensemble(initial_rho(section), section.n_steps, section.n_trajectories,
                                            section.seed)
        for k in range(min(CSV_MEMBERS, len(ensemble))):
            member = ensemble.trajectory(k)
            ctx.record(ctx.storage.write_sme_trajectory(member, f"sme/sme_traj_{member.seed}.csv"))
        summary.update(
            dim=ops.dim,
            n_channels=ops.n_channels,
            n_trajectories=len(ensemble),
            operators=ops.to_json_dict(),
        )
        if section.compare:
            summary["compare"] = compare_with_bloch_engine(ctx, section, ensemble)
    ctx.finish(extra=summary)
    return summary
