"""
Hook protocol shared by everything an engine runs around its steps.
"""

from typing import Any, Dict, Optional
import numpy as np


class EngineMiddleware:
    """
    Base middleware. Engines call before_run once, after_step after every
    step (a returned array replaces the step's states) and after_run once.
    """

    def before_run(self, context: Dict[str, Any]) -> None:
        return None

    def after_step(self, states: np.ndarray, step: int) -> Optional[np.ndarray]:
        return None

    def after_run(self, summary: Dict[str, Any]) -> None:
        return None


def run_after_step(middleware, states: np.ndarray, step: int) -> np.ndarray:
    """Apply every after_step hook in order"""
    for hook in middleware:
        replaced = hook.after_step(states, step)
        if replaced is not None:
            states = replaced
    return states
