"""
cv-reconstruct: estimate qubit observables from single-step heterodyne
outcomes weighted by contextual values.
"""

from typing import Any, Dict
import logging

from fluortraj.engines.contextual_values import reconstruct, sample_single_step_alpha
from fluortraj.models.config import CVSection
from fluortraj.routers.common import RunContext, numeric_guard
from fluortraj.services.report_service import get_report_service

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("cv-reconstruct", parents=parents,
                                   help="Observable reconstruction with contextual values")
    parser.set_defaults(handler=run)


def run(ctx: RunContext) -> Dict[str, Any]:
    section: CVSection = ctx.section
    with numeric_guard(ctx):
        samples = sample_single_step_alpha(section.initial, section.epsilon, section.N, section.seed)
        results = [reconstruct(section.initial, target, section.epsilon, section.N, section.seed, samples=samples)
                   for target in section.targets]
        rows = [r.report() for r in results]
        ctx.record(ctx.storage.write_json("cv_report.json", {"results": rows}))
    text = get_report_service().cv_report(rows, initial=section.initial, epsilon=section.epsilon, N=section.N)
    ctx.record(ctx.storage.write_text("cv_report.txt", text))
    summary = {"results": rows}
    ctx.finish(extra=summary)
    return summary
