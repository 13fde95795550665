"""
Middleware run around engine steps.
"""

from fluortraj.engines.middleware.base import EngineMiddleware
from fluortraj.engines.middleware.tracing import RunTracer
from fluortraj.engines.middleware.guards import PhysicalityGuard, RegimeGuard
