"""
Domain exceptions raised by the numerical engines.
"""

from typing import Optional, Sequence


class InvalidOutcomeError(ValueError):
    """Measurement outcome has non-positive probability or trace"""


class NonPhysicalStateError(ValueError):
    """A state lies outside the Bloch ball beyond tolerance"""


class IntegrationFailure(RuntimeError):
    """A trajectory left the physical region beyond the clip tolerance"""

    def __init__(self, message: str, step: int, state: Optional[Sequence[float]] = None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.state = None if state is None else list(state)


class BVPConvergenceError(RuntimeError):
    """Boundary-value shooting did not converge"""

    def __init__(self, message: str, residual: float, iterations: int = 0):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
