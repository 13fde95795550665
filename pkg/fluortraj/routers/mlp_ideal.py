"""
mlp-ideal: closed-form and shooting solutions for the ideal (eta = 1, no
dephasing) most-likely path in the (theta, p_theta) plane, plus
constant-energy phase portraits.
"""

from typing import Any, Dict, Optional
import logging

import numpy as np

from fluortraj.engines.ideal_mlp import phase_portrait, solve_ideal_bvp, zero_energy_path
from fluortraj.models.config import MLPIdealSection
from fluortraj.models.phase import Branch, IdealPath
from fluortraj.routers.common import RunContext, numeric_guard

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("mlp-ideal", parents=parents, help="Ideal-case most-likely path and phase portraits")
    parser.set_defaults(handler=run)


def _path(section: MLPIdealSection) -> Optional[IdealPath]:
    if section.theta_f is not None:
        if section.T is None:
            raise ValueError("theta_f needs a duration T")
        return solve_ideal_bvp(section.theta0, section.theta_f, section.T, section.gamma1, h=section.step)
    if section.T is not None:
        n_points = max(2, int(round(section.T / section.step)) + 1)
        return zero_energy_path(section.theta0, section.T, Branch(section.branch), section.gamma1, n_points)
    return None


def portrait_thetas(n: int) -> np.ndarray:
    """Interior points of (-pi, pi); the endpoints are singular"""
    return np.linspace(-np.pi, np.pi, n + 2)[1:-1]


def run(ctx: RunContext) -> Dict[str, Any]:
    section: MLPIdealSection = ctx.section
    summary: Dict[str, Any] = {}
    with numeric_guard(ctx):
        path = _path(section)
        if path is not None:
            ctx.record(ctx.storage.write_ideal_path(path, "ideal_path.csv"))
            summary.update(
                energy=path.energy.E,
                energy_drift=path.energy.drift,
                theta_final=float(path.theta[-1]),
                action=path.action,
            )
        if section.energies:
            rows = phase_portrait(section.energies, portrait_thetas(section.theta_points), section.gamma1)
            ctx.record(ctx.storage.write_phase_portrait(rows, "phase_portrait.csv"))
            summary["energies"] = list(section.energies)
    ctx.finish(extra=summary)
    return summary
