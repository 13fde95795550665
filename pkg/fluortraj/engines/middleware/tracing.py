import json
import logging
import os
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np

from fluortraj.engines.middleware.base import EngineMiddleware

# Configure logging for tracing
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


class RunTracer(EngineMiddleware):
    """Middleware to trace engine runs and store them as JSONL events"""

    def __init__(self, run_id: str = None,
                 engine_id: str = None,
                 trace_path: Optional[str] = None,
                 step_interval: int = 0,
                 max_events: int = 10000):
        super().__init__()
        self.run_id = run_id or str(uuid.uuid4())
        self.engine_id = engine_id or 'trajectory_engine'
        self.trace_path = trace_path
        self.step_interval = step_interval
        self.max_events = max_events
        self.events: List[Dict[str, Any]] = []

    def before_run(self, context: Dict[str, Any]) -> None:
        logger.info(f'[RunTracer] before_run for run_id: {self.run_id}')
        self.log_event('run_started', **context)

    def after_step(self, states: np.ndarray, step: int) -> None:
        if self.step_interval and step % self.step_interval == 0:
            states = np.atleast_2d(states)
            self.log_event('step', step=step, mean_state=states.mean(axis=0).tolist())
        return None

    def after_run(self, summary: Dict[str, Any]) -> None:
        logger.info(f'[RunTracer] after_run for run_id: {self.run_id}')
        self.log_event('run_finished', **summary)
        if self.trace_path:
            self.flush(self.trace_path)

    def log_event(self, kind: str, **payload) -> None:
        """Buffer one trace event and echo it to the log"""
        if len(self.events) >= self.max_events:
            return
        event = {
            'run_id': self.run_id,
            'engine_id': self.engine_id,
            'kind': kind,
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'payload': to_jsonable(payload),
        }
        self.events.append(event)
        if kind != 'step':
            logger.info(f"[RUN_ID: {self.run_id}] {self.engine_id}: {kind}")

    def flush(self, path: str) -> None:
        """Append buffered events to a JSONL file; failures are logged, never raised"""
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, 'a', encoding='utf-8') as handle:
                for event in self.events:
                    handle.write(json.dumps(event, sort_keys=True) + '\n')
            self.events = []
        except Exception as e:
            logger.error(f"Error writing run trace: {str(e)}")
            # Continue execution even if tracing fails


def to_jsonable(value):
    """Plain JSON types for numpy arrays, complex numbers, pydantic models and str enums"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, 'to_json_dict'):
        return value.to_json_dict()
    if hasattr(value, 'model_dump'):
        return to_jsonable(value.model_dump(mode='json'))
    if hasattr(value, 'value') and isinstance(value.value, str):
        return value.value
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
