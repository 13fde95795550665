"""
Report Service for fluortraj
Renders human-readable run summaries from jinja2 templates.
"""

from functools import lru_cache
from typing import Any, Dict
import logging
import os

from jinja2 import Environment, FileSystemLoader, StrictUndefined

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), "templates")


class ReportService:
    """Service for rendering text reports"""

    def __init__(self, template_dir: str = TEMPLATE_DIR):
        self.env = Environment(
            loader=FileSystemLoader(template_dir),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=False,
        )

    def render(self, template: str, **context: Any) -> str:
        """
        Raises:
            jinja2.TemplateError: If the template is missing or refers to an absent value
        """
        try:
            return self.env.get_template(template).render(**context)
        except Exception as e:
            logger.error(f"Error rendering {template}: {str(e)}")
            raise

    def correlate_report(self, reports, **context) -> str:
        return self.render("correlate_report.txt.j2", reports=reports, **context)

    def mlp_summary(self, **context) -> str:
        return self.render("mlp_summary.txt.j2", **context)

    def cv_report(self, results, **context) -> str:
        return self.render("cv_report.txt.j2", results=results, **context)


@lru_cache()
def get_report_service() -> ReportService:
    return ReportService()
