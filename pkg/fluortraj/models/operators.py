"""
Operator sets and matrix states for general diffusive stochastic master equations.
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, List

import numpy as np

from fluortraj.models.bloch import PHYSICALITY_TOL

HERMITIAN_TOL = 1e-12


def _complex_matrix(value, name: str) -> np.ndarray:
    m = np.array(value, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def matrix_to_json(m: np.ndarray) -> list:
    """Complex matrix as row-major nested [re, im] pairs"""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def matrix_from_json(rows) -> np.ndarray:
    data = np.asarray(rows, dtype=float)
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError("Serialized matrix must be nested [re, im] pairs")
    return data[..., 0] + 1j * data[..., 1]


class Channel(BaseModel):
    """One monitored channel: jump operator L and detection efficiency eta"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    L: Any
    eta: float = Field(ge=0.0, le=1.0)

    @field_validator("L")
    @classmethod
    def _matrix(cls, value):
        return _complex_matrix(value, "L")


class OperatorSet(BaseModel):
    """Hamiltonian and monitored channels of an n-level system"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    H: Any
    channels: List[Channel] = []

    @field_validator("H")
    @classmethod
    def _hermitian(cls, value):
        m = _complex_matrix(value, "H")
        if not np.allclose(m, m.conj().T, atol=HERMITIAN_TOL, rtol=0.0):
            raise ValueError("H must be Hermitian")
        return m

    @model_validator(mode="after")
    def _dimensions(self):
        n = self.H.shape[0]
        for k, channel in enumerate(self.channels):
            if channel.L.shape != (n, n):
                raise ValueError(f"Channel {k} operator has shape {channel.L.shape}, expected ({n}, {n})")
        return self

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def active_channels(self) -> int:
        """Channels with a non-zero operator"""
        return sum(1 for c in self.channels if np.any(c.L != 0))

    @property
    def etas(self) -> np.ndarray:
        return np.array([c.eta for c in self.channels], dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "H": matrix_to_json(self.H),
            "channels": [{"L": matrix_to_json(c.L), "eta": c.eta} for c in self.channels],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "OperatorSet":
        return cls(
            H=matrix_from_json(payload["H"]),
            channels=[Channel(L=matrix_from_json(c["L"]), eta=c["eta"]) for c in payload.get("channels", [])],
        )


class GeneralState(BaseModel):
    """Density matrix of an n-level system"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rho: Any

    @field_validator("rho")
    @classmethod
    def _valid(cls, value):
        m = _complex_matrix(value, "rho")
        if not np.allclose(m, m.conj().T, atol=PHYSICALITY_TOL, rtol=0.0):
            raise ValueError("rho must be Hermitian")
        if abs(np.trace(m) - 1.0) > PHYSICALITY_TOL:
            raise ValueError("rho must have unit trace")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -PHYSICALITY_TOL:
            raise ValueError("rho must be positive semidefinite")
        return m


class AdjointState(BaseModel):
    """Operator-valued conjugate momentum xi"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    xi: Any

    @field_validator("xi")
    @classmethod
    def _hermitian(cls, value):
        m = _complex_matrix(value, "xi")
        if not np.allclose(m, m.conj().T, atol=PHYSICALITY_TOL, rtol=0.0):
            raise ValueError("xi must be Hermitian")
        return m


class SMETrajectory(BaseModel):
    """One density-matrix trajectory with its per-channel readouts"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    rhos: Any
    readouts: Any
    seed: int
    exact_sampling: bool = True

    @model_validator(mode="after")
    def _shapes(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rhos = np.asarray(self.rhos, dtype=complex)
        self.readouts = np.asarray(self.readouts, dtype=float)
        if self.rhos.ndim != 3 or self.rhos.shape[0] != len(self.times):
            raise ValueError("rhos must have shape (T, n, n) matching times")
        if self.readouts.ndim != 2 or self.readouts.shape[0] != max(len(self.times) - 1, 0):
            raise ValueError("readouts must have shape (T - 1, m)")
        return self

    @property
    def dim(self) -> int:
        return self.rhos.shape[1]


class SMEEnsemble(BaseModel):
    """Density-matrix trajectories stacked as (N, T, n, n) with readouts (N, T - 1, m)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    rhos: Any
    readouts: Any
    seeds: Any
    exact_sampling: bool = True

    @model_validator(mode="after")
    def _shapes(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rhos = np.asarray(self.rhos, dtype=complex)
        self.readouts = np.asarray(self.readouts, dtype=float)
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        if self.rhos.ndim != 4 or self.rhos.shape[1] != len(self.times):
            raise ValueError("rhos must have shape (N, T, n, n) matching times")
        if len(self.seeds) != self.rhos.shape[0]:
            raise ValueError("One seed per member is required")
        return self

    def __len__(self) -> int:
        return self.rhos.shape[0]

    def trajectory(self, k: int) -> SMETrajectory:
        return SMETrajectory(times=self.times, rhos=self.rhos[k], readouts=self.readouts[k],
                             seed=int(self.seeds[k]), exact_sampling=self.exact_sampling)
