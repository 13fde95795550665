"""
Correlation-function request and grid types.
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Any, Literal, Optional, Tuple

import numpy as np

from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams

STATE_VARIABLES = ("u", "x", "y")
NOISE_VARIABLES = ("xi_I", "xi_Q")
READOUT_VARIABLES = ("I", "Q")
CORRELATOR_VARIABLES = STATE_VARIABLES + NOISE_VARIABLES


def parse_pair(text: str) -> Tuple[str, str]:
    """Parse 'a,b' into a validated variable pair"""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"Correlator pair must look like 'a,b', got {text!r}")
    allowed = CORRELATOR_VARIABLES + READOUT_VARIABLES
    for name in parts:
        if name not in allowed:
            raise ValueError(f"Unknown correlator variable {name!r}; expected one of {allowed}")
    return parts[0], parts[1]


class CorrelatorSpec(BaseModel):
    """Request for Cov[a(t1) b(t2)] from a fixed initial state"""
    model_config = ConfigDict(frozen=True)

    pair: Tuple[str, str]
    t1: float = Field(ge=0.0)
    t2: float = Field(ge=0.0)
    initial: BlochState
    params: MeasurementParams

    @field_validator("pair")
    @classmethod
    def _pair(cls, value):
        for name in value:
            if name not in CORRELATOR_VARIABLES + READOUT_VARIABLES:
                raise ValueError(f"Unknown correlator variable {name!r}")
        return tuple(value)


class CovarianceGrid(BaseModel):
    """Cov[a(t1) b(t2)] on a t1 x t2 grid; rows follow t1"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pair: Tuple[str, str]
    t1: Any
    t2: Any
    values: Any
    initial: BlochState
    params: MeasurementParams
    kind: Literal["analytic", "empirical"] = "analytic"
    stderr: Any = None
    n_trajectories: Optional[int] = None
    scheme: Optional[str] = None

    @field_validator("t1", "t2", "values")
    @classmethod
    def _arrays(cls, value):
        return np.asarray(value, dtype=float)

    @field_validator("stderr")
    @classmethod
    def _stderr(cls, value):
        return None if value is None else np.asarray(value, dtype=float)

    def metadata(self) -> dict:
        return {
            "pair": list(self.pair),
            "kind": self.kind,
            "initial": self.initial.model_dump(),
            "params": self.params.model_dump(),
            "n_trajectories": self.n_trajectories,
            "scheme": self.scheme,
        }
