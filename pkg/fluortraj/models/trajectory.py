"""
Trajectory, ensemble and post-selection records.
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, List, Literal, Optional, Tuple
import numpy as np

from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams, Scheme

STATE_COLUMNS = ("u", "x", "y")


def _as_float_array(value, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    return arr


class Trajectory(BaseModel):
    """
    One quantum trajectory on a fixed time grid.

    states has one row per time; readouts and noises have one row per step,
    each row belonging to the step that starts at the same index.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    states: Any
    readouts: Any
    noises: Any
    seed: int
    scheme: Scheme = Scheme.EXACT

    @model_validator(mode="after")
    def _shapes(self):
        self.times = _as_float_array(self.times, 1, "times")
        self.states = _as_float_array(self.states, 2, "states")
        self.readouts = _as_float_array(self.readouts, 2, "readouts")
        self.noises = _as_float_array(self.noises, 2, "noises")
        n = len(self.times)
        if self.states.shape != (n, 3):
            raise ValueError(f"states must have shape ({n}, 3), got {self.states.shape}")
        if self.readouts.shape != (n - 1, 2) or self.noises.shape != (n - 1, 2):
            raise ValueError("readouts and noises need one (I, Q) row per step")
        return self

    def __len__(self) -> int:
        return len(self.times)

    def state_at(self, k: int) -> BlochState:
        return BlochState.from_array(self.states[k])

    @property
    def final_state(self) -> BlochState:
        return self.state_at(-1)


class Ensemble(BaseModel):
    """
    Trajectories sharing a time grid, parameters and initial state.

    Stored as stacked arrays: states (N, T, 3), readouts and noises (N, T-1, 2).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    states: Any
    readouts: Any
    noises: Any
    seeds: Any
    params: MeasurementParams
    initial: BlochState
    scheme: Scheme = Scheme.EXACT

    @model_validator(mode="after")
    def _shapes(self):
        self.times = _as_float_array(self.times, 1, "times")
        self.states = _as_float_array(self.states, 3, "states")
        self.readouts = _as_float_array(self.readouts, 3, "readouts")
        self.noises = _as_float_array(self.noises, 3, "noises")
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        n_traj, n_times = len(self.seeds), len(self.times)
        if self.states.shape != (n_traj, n_times, 3):
            raise ValueError(f"states must have shape ({n_traj}, {n_times}, 3), got {self.states.shape}")
        if self.readouts.shape != (n_traj, n_times - 1, 2) or self.noises.shape != (n_traj, n_times - 1, 2):
            raise ValueError("readouts and noises need one (I, Q) row per step and member")
        if len(np.unique(self.seeds)) != n_traj:
            raise ValueError("Ensemble member seeds must be distinct")
        return self

    def __len__(self) -> int:
        return len(self.seeds)

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(
            times=self.times,
            states=self.states[k],
            readouts=self.readouts[k],
            noises=self.noises[k],
            seed=int(self.seeds[k]),
            scheme=self.scheme,
        )

    @property
    def trajectories(self) -> List[Trajectory]:
        return [self.trajectory(k) for k in range(len(self))]

    def subset(self, indices) -> "Ensemble":
        idx = np.asarray(indices, dtype=int)
        return Ensemble(
            times=self.times,
            states=self.states[idx],
            readouts=self.readouts[idx],
            noises=self.noises[idx],
            seeds=self.seeds[idx],
            params=self.params,
            initial=self.initial,
            scheme=self.scheme,
        )

    @property
    def final_states(self) -> np.ndarray:
        return self.states[:, -1, :]


class FinalCondition(BaseModel):
    """Final-time condition on any subset of (u, x, y); None leaves a component free"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    u: Optional[float] = None
    x: Optional[float] = None
    y: Optional[float] = None

    def conditioned(self) -> List[Tuple[int, float]]:
        """(component index, target value) pairs for the fixed components"""
        values = (self.u, self.x, self.y)
        return [(i, float(v)) for i, v in enumerate(values) if v is not None]

    def free_indices(self) -> List[int]:
        values = (self.u, self.x, self.y)
        return [i for i, v in enumerate(values) if v is None]


class PostselectionResult(BaseModel):
    """Outcome of a final-state post-selection; an empty selection is a status, not an error"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: Literal["ok", "empty"]
    ensemble: Optional[Ensemble] = None
    indices: Any = None
    fraction: float = 0.0

    @property
    def is_empty(self) -> bool:
        return self.status == "empty"


class EnsembleStats(BaseModel):
    """Pointwise sample moments of (u, x, y) over an ensemble"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: Any
    mean: Any
    variance: Any
    stderr: Any
    n_trajectories: int = Field(ge=1)

    @field_validator("times", "mean", "variance", "stderr")
    @classmethod
    def _arrays(cls, value):
        return np.asarray(value, dtype=float)
