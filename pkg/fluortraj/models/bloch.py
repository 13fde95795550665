"""
Qubit state value types in modified Bloch coordinates.
"""

from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from typing import Any
import math
import numpy as np

# Absolute tolerance for every physicality check in the toolkit
PHYSICALITY_TOL = 1e-9


class BlochState(BaseModel):
    """
    Qubit state (u, x, y) with excitation u = 1 + z = 2 rho_ee.

    Construction does not enforce physicality so that diagnostics can be
    computed for states slightly outside the ball; use is_physical().
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    u: float
    x: float = 0.0
    y: float = 0.0

    @field_validator("u", "x", "y")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("Bloch coordinates must be finite")
        return float(value)

    @property
    def z(self) -> float:
        return self.u - 1.0

    def radius_sq(self) -> float:
        """Squared distance from the ball centre in (x, y, z) coordinates"""
        return self.x ** 2 + self.y ** 2 + (1.0 - self.u) ** 2

    def is_physical(self, tol: float = PHYSICALITY_TOL) -> bool:
        return self.radius_sq() <= 1.0 + tol and -tol <= self.u <= 2.0 + tol

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, r) -> "BlochState":
        r = np.asarray(r, dtype=float)
        return cls(u=float(r[0]), x=float(r[1]), y=float(r[2]))

    @classmethod
    def ground(cls) -> "BlochState":
        return cls(u=0.0, x=0.0, y=0.0)

    @classmethod
    def excited(cls) -> "BlochState":
        return cls(u=2.0, x=0.0, y=0.0)


class DensityMatrix2(BaseModel):
    """2x2 density matrix in the (|e>, |g>) basis"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: Any

    @field_validator("matrix")
    @classmethod
    def _shape(cls, value):
        m = np.array(value, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"Density matrix must be 2x2, got shape {m.shape}")
        m.setflags(write=False)
        return m

    @property
    def rho_ee(self) -> complex:
        return self.matrix[0, 0]

    @property
    def rho_eg(self) -> complex:
        return self.matrix[0, 1]

    @property
    def rho_ge(self) -> complex:
        return self.matrix[1, 0]

    @property
    def rho_gg(self) -> complex:
        return self.matrix[1, 1]

    def validate_physical(self, tol: float = PHYSICALITY_TOL) -> None:
        """
        Check Hermiticity, unit trace and eigenvalue floor.

        Raises:
            ValueError: If any of the density-matrix invariants fails
        """
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=tol, rtol=0.0):
            raise ValueError("Density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ValueError(f"Density matrix trace is {np.trace(m).real:.12g}, expected 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -tol:
            raise ValueError("Density matrix has a negative eigenvalue")


class PolarAngle(BaseModel):
    """Pure state on the x-z great circle, theta measured from the excited state"""
    model_config = ConfigDict(frozen=True)

    theta: float

    def to_bloch(self) -> BlochState:
        return BlochState(u=1.0 + math.cos(self.theta), x=math.sin(self.theta), y=0.0)

    @model_validator(mode="after")
    def _finite(self):
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")
        return self
