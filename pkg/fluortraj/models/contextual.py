"""
Contextual-value types for observable reconstruction.
"""

from enum import Enum
from pydantic import BaseModel, ConfigDict, Field
from typing import Optional

import numpy as np


class Observable(str, Enum):
    """Qubit observables reachable from heterodyne outcome statistics"""
    IDENTITY = "identity"
    SIGMA_X = "sigma_x"
    SIGMA_Y = "sigma_y"
    SIGMA_Z = "sigma_z"


class ContextualValue(BaseModel):
    """Weighting C_A(alpha) that reconstructs observable A from outcome samples"""
    model_config = ConfigDict(frozen=True)

    target: Observable
    epsilon: float = Field(gt=0.0, lt=1.0)

    def __call__(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=complex)
        if self.target is Observable.IDENTITY:
            return np.ones(alpha.shape, dtype=float)
        if self.target is Observable.SIGMA_X:
            return 2.0 / np.sqrt(self.epsilon) * alpha.real
        if self.target is Observable.SIGMA_Y:
            return -2.0 / np.sqrt(self.epsilon) * alpha.imag
        return 2.0 / self.epsilon * (np.abs(alpha) ** 2 - 1.0) - 1.0


class ReconstructionResult(BaseModel):
    """Sample-mean estimate of <A> with its standard error"""
    model_config = ConfigDict(frozen=True)

    target: Observable
    N: int
    epsilon: float
    estimate: float
    stderr: float
    truth_if_known: Optional[float] = None

    def report(self) -> dict:
        return {
            "target": self.target.value,
            "N": self.N,
            "epsilon": self.epsilon,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "truth_if_known": self.truth_if_known,
        }
