"""
correlate: closed-form covariance grids beside jackknife Monte Carlo estimates
from one ensemble, with a per-pair agreement report.
"""

from typing import Any, Dict, List
import logging
import os

import numpy as np

from fluortraj.engines.correlators import agreement_report, covariance_grid, empirical_covariance_grid
from fluortraj.engines.middleware import RegimeGuard
from fluortraj.models.config import CorrelateSection
from fluortraj.models.correlator import STATE_VARIABLES
from fluortraj.models.trajectory import Ensemble
from fluortraj.routers.common import EXIT_CONFIG, CommandError, RunContext, numeric_guard
from fluortraj.routers.simulate import build_ensemble
from fluortraj.services.report_service import get_report_service
from fluortraj.services.storage_service import load_ensemble

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("correlate", parents=parents, help="Analytic vs Monte Carlo covariance grids")
    parser.set_defaults(handler=run)


def _ensemble(ctx: RunContext, section: CorrelateSection) -> Ensemble:
    if section.ensemble is not None:
        ensemble = build_ensemble(ctx, section.ensemble)
        ctx.record(*ctx.storage.save_ensemble(ensemble, "ensemble", csv_members=0))
        return ensemble
    if not os.path.isdir(section.ensemble_dir):
        raise CommandError(EXIT_CONFIG, f"Ensemble directory {section.ensemble_dir} does not exist")
    try:
        return load_ensemble(section.ensemble_dir)
    except (OSError, KeyError, ValueError) as e:
        raise CommandError(EXIT_CONFIG, f"Cannot load ensemble from {section.ensemble_dir}: {str(e)}")


def time_grid(section: CorrelateSection, ensemble: Ensemble, pair) -> np.ndarray:
    """
    Stored sample times spread evenly up to t_max; noises and readouts stop one
    step before the last state.
    """
    stored = ensemble.times if all(v in STATE_VARIABLES for v in pair) else ensemble.times[:-1]
    if len(stored) == 0:
        raise ValueError(f"The ensemble stores no samples for Cov[{pair[0]}, {pair[1]}]")
    last = int(np.searchsorted(stored, section.t_max, side="right")) - 1
    index = np.unique(np.rint(np.linspace(0, max(last, 0), section.grid_points)).astype(int))
    return stored[index]


def run(ctx: RunContext) -> Dict[str, Any]:
    section: CorrelateSection = ctx.section
    reports: List[Dict[str, Any]] = []
    with numeric_guard(ctx):
        ensemble = _ensemble(ctx, section)
        verdict = RegimeGuard().check_params(ensemble.params, "correlator")
        if not verdict["in_regime"]:
            logger.warning(f"Correlators outside their validity regime: {verdict['reasons']}")
        for a, b in section.pairs:
            grid = time_grid(section, ensemble, (a, b))
            name = f"cov_{a}_{b}"
            analytic = covariance_grid((a, b), grid, grid, ensemble.initial, ensemble.params, section.higher_order)
            empirical = empirical_covariance_grid(ensemble, (a, b), grid, grid, section.n_blocks)
            ctx.record(*ctx.storage.write_covariance_grid(analytic, f"{name}_analytic"))
            ctx.record(*ctx.storage.write_covariance_grid(empirical, f"{name}_empirical"))
            reports.append(agreement_report(analytic, empirical, section.k))

    text = get_report_service().correlate_report(
        reports,
        run_id=ctx.tracer.run_id if ctx.tracer else "-",
        initial=ensemble.initial,
        params=ensemble.params,
        n_trajectories=len(ensemble),
    )
    ctx.record(ctx.storage.write_text("correlate_report.txt", text))
    summary = {"reports": reports, "regime": verdict}
    ctx.finish(extra=summary)
    return summary
