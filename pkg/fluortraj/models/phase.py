"""
Phase-space types for most-likely-path dynamics.
"""

from enum import Enum
from pydantic import BaseModel, ConfigDict, field_validator
from typing import Any, Optional
import math
import numpy as np

from fluortraj.models.bloch import BlochState


class Branch(str, Enum):
    """Zero-energy branches: PLUS relaxes towards |g>, MINUS climbs towards |e>"""
    PLUS = "+"
    MINUS = "-"

    @property
    def sign(self) -> float:
        return 1.0 if self is Branch.PLUS else -1.0


class PhasePoint(BaseModel):
    """State (u, x, y) together with its conjugate momenta (p_u, p_x, p_y)"""
    model_config = ConfigDict(frozen=True)

    state: BlochState
    p_u: float = 0.0
    p_x: float = 0.0
    p_y: float = 0.0

    @field_validator("p_u", "p_x", "p_y")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("Momenta must be finite")
        return float(value)

    @property
    def momenta(self) -> np.ndarray:
        return np.array([self.p_u, self.p_x, self.p_y], dtype=float)

    def as_array(self) -> np.ndarray:
        """Six-vector (u, x, y, p_u, p_x, p_y)"""
        return np.concatenate([self.state.as_array(), self.momenta])

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        return cls(state=BlochState.from_array(z[:3]), p_u=z[3], p_x=z[4], p_y=z[5])


class IdealPhasePoint(BaseModel):
    """Polar angle theta and conjugate p_theta for the ideal pure-state reduction"""
    model_config = ConfigDict(frozen=True)

    theta: float
    p_theta: float


class StochasticEnergy(BaseModel):
    """Conserved value of the stochastic Hamiltonian along a most-likely path"""
    model_config = ConfigDict(frozen=True)

    E: float
    drift: float = 0.0  # max |H(t) - E| observed along the path


class MLPPath(BaseModel):
    """Solved most-likely path with optimal readouts and energy diagnostics"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    points: Any          # (T, 6): u, x, y, p_u, p_x, p_y
    readouts: Any        # (T, 2): optimal I, Q
    energies: Any        # (T,): H along the path
    energy: StochasticEnergy
    residual: float = 0.0
    iterations: int = 0
    method: str = "multiple_shooting"

    @field_validator("times", "points", "readouts", "energies")
    @classmethod
    def _arrays(cls, value):
        return np.asarray(value, dtype=float)

    @property
    def states(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def momenta(self) -> np.ndarray:
        return self.points[:, 3:]

    def point_at(self, k: int) -> PhasePoint:
        return PhasePoint.from_array(self.points[k])


class IdealPath(BaseModel):
    """Ideal-case (theta, p_theta) path with its energy and action"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    theta: Any
    p_theta: Any
    readout: Any
    energy: StochasticEnergy
    branch: Optional[Branch] = None
    action: Optional[float] = None

    @field_validator("times", "theta", "p_theta", "readout")
    @classmethod
    def _arrays(cls, value):
        return np.asarray(value, dtype=float)

    def bloch_states(self) -> np.ndarray:
        """(T, 3) pure states u = 1 + cos(theta), x = sin(theta), y = 0"""
        return np.column_stack([1.0 + np.cos(self.theta), np.sin(self.theta), np.zeros_like(self.theta)])
