import logging
import threading
from typing import Any, Dict, List, Optional

import numpy as np

from fluortraj.engines.errors import IntegrationFailure
from fluortraj.engines.middleware.base import EngineMiddleware
from fluortraj.models.bloch import PHYSICALITY_TOL
from fluortraj.models.measurement import MeasurementParams

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

STRICT_CLIP_TOLERANCE = 1e-6


class PhysicalityGuard(EngineMiddleware):
    """
    Middleware that keeps trajectory states inside the Bloch ball.

    Overshoot up to clip_tolerance (in Bloch-vector norm) is projected back
    onto the surface; anything larger aborts the run.
    """

    def __init__(self,
                 clip_tolerance: float = STRICT_CLIP_TOLERANCE,
                 tol: float = PHYSICALITY_TOL,
                 log_detections: bool = True):
        """
        Args:
            clip_tolerance: Largest overshoot that is silently projected back
            tol: Overshoot below which a state counts as physical
            log_detections: If True, log a summary of clipped steps after the run
        """
        super().__init__()
        if clip_tolerance < 0:
            raise ValueError("clip_tolerance must be non-negative")
        self.clip_tolerance = clip_tolerance
        self.tol = tol
        self.log_detections = log_detections
        self.clipped = 0
        self.max_overshoot = 0.0
        self._lock = threading.Lock()

    def check_states(self, states: np.ndarray) -> dict:
        """
        Check states against the Bloch ball.

        Returns:
            dict with 'flagged' (bool) and 'categories' (dict) keys
        """
        overshoot = _overshoot(states)
        outside = overshoot > self.tol
        if not np.any(outside):
            return {"flagged": False, "categories": {}}
        return {
            "flagged": True,
            "categories": {
                "outside_ball": int(np.count_nonzero(outside)),
                "max_overshoot": float(overshoot.max()),
            },
        }

    def before_run(self, context: Dict[str, Any]) -> None:
        self.clipped = 0
        self.max_overshoot = 0.0

    def after_step(self, states: np.ndarray, step: int) -> Optional[np.ndarray]:
        overshoot = _overshoot(states)
        worst = float(np.max(overshoot)) if overshoot.size else 0.0
        if not np.isfinite(worst):
            logger.error(f"Non-finite state at step {step}")
            raise IntegrationFailure("Non-finite state", step=step, state=np.atleast_2d(states)[0])
        if worst <= self.tol:
            return None
        with self._lock:
            self.max_overshoot = max(self.max_overshoot, worst)
        if worst > self.clip_tolerance:
            k = int(np.argmax(overshoot))
            bad = np.atleast_2d(states)[k]
            logger.error(f"State left the Bloch ball by {worst:.3e} at step {step}")
            raise IntegrationFailure(f"State left the Bloch ball by {worst:.3e}", step=step, state=bad)

        outside = overshoot > self.tol
        with self._lock:
            self.clipped += int(np.count_nonzero(outside))
        states = np.array(states, dtype=float, copy=True)
        z = states[..., 0] - 1.0
        norm = 1.0 + overshoot
        scale = np.where(outside, 1.0 / norm, 1.0)
        states[..., 0] = 1.0 + z * scale
        states[..., 1] *= scale
        states[..., 2] *= scale
        return states

    def after_run(self, summary: Dict[str, Any]) -> None:
        if self.log_detections and self.clipped:
            logger.warning(f"Projected {self.clipped} states back onto the Bloch ball")
            logger.warning(f"   max_overshoot: {self.max_overshoot:.3e}")
        summary.update(self.report())

    def report(self) -> Dict[str, Any]:
        """Clip counters of the last run, for the run manifest"""
        return {
            "clip_tolerance": self.clip_tolerance,
            "clipped_states": self.clipped,
            "max_overshoot": self.max_overshoot,
        }


class RegimeGuard(EngineMiddleware):
    """
    Middleware that warns when a run leaves the regime where the analytic
    results hold. Warnings never stop a run.
    """

    def __init__(self,
                 max_epsilon: float = 0.1,
                 max_correlator_eta: float = 0.5,
                 max_channel_rate_dt: float = 0.1):
        super().__init__()
        self.max_epsilon = max_epsilon
        self.max_correlator_eta = max_correlator_eta
        self.max_channel_rate_dt = max_channel_rate_dt

    def check_params(self, params: MeasurementParams, purpose: str = "trajectory") -> dict:
        """
        Returns:
            dict with 'in_regime' (bool) and 'reasons' (list) keys
        """
        reasons: List[str] = []
        if params.epsilon > self.max_epsilon:
            reasons.append(f"gamma1*dt = {params.epsilon:.4g} exceeds {self.max_epsilon}")
        if purpose == "correlator" and params.eta > self.max_correlator_eta:
            reasons.append(
                f"eta = {params.eta:.3g} above {self.max_correlator_eta}: leading-order correlators degrade"
            )
        if reasons:
            for reason in reasons:
                logger.warning(f"Regime check ({purpose}): {reason}")
        return {"in_regime": not reasons, "reasons": reasons}

    def check_operators(self, ops, dt: float) -> dict:
        """dt * ||sum L^dag L|| must stay small for the discrete scheme"""
        reasons: List[str] = []
        total = sum(c.L.conj().T @ c.L for c in ops.channels) if ops.channels else np.zeros_like(ops.H)
        rate = float(np.linalg.norm(total, 2)) * dt if np.size(total) else 0.0
        if rate > self.max_channel_rate_dt:
            reasons.append(f"dt*||sum L^dag L|| = {rate:.4g} exceeds {self.max_channel_rate_dt}")
        for reason in reasons:
            logger.warning(f"Regime check (sme): {reason}")
        return {"in_regime": not reasons, "reasons": reasons}

    def before_run(self, context: Dict[str, Any]) -> None:
        params = context.get("params")
        if isinstance(params, MeasurementParams):
            self.check_params(params, context.get("purpose", "trajectory"))
        if context.get("operators") is not None and context.get("dt") is not None:
            self.check_operators(context["operators"], context["dt"])


def _overshoot(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    norm = np.sqrt(states[..., 1] ** 2 + states[..., 2] ** 2 + (states[..., 0] - 1.0) ** 2)
    return np.maximum(norm - 1.0, 0.0)
