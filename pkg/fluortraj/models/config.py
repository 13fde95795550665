"""
Run configurations for the command-line front end.

A config file holds one command section; unknown keys are rejected so a
persisted manifest always re-runs the same way.
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Any, Dict, List, Literal, Optional

from fluortraj.models.bloch import BlochState
from fluortraj.models.contextual import Observable
from fluortraj.models.measurement import MeasurementParams, Sampling, Scheme
from fluortraj.models.trajectory import FinalCondition

SCHEMA_VERSION = 1

COMMANDS = ("simulate", "average", "mlp", "mlp-ideal", "correlate", "sme", "cv-reconstruct")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnsembleSection(_Section):
    """Ensemble generation shared by simulate, average, mlp post-selection and correlate"""
    params: MeasurementParams = MeasurementParams()
    initial: BlochState
    scheme: Scheme = Scheme.EXACT
    sampling: Sampling = Sampling.GAUSSIAN
    n_steps: int = Field(ge=0)
    n_trajectories: int = Field(ge=1)
    seed: int = Field(0, ge=0)
    clip_tolerance: Optional[float] = Field(None, ge=0.0)


class SimulateSection(EnsembleSection):
    csv_members: Optional[int] = Field(None, ge=0)


class AverageSection(EnsembleSection):
    pass


class PostselectSection(_Section):
    n_trajectories: int = Field(ge=1)
    tolerance: float = Field(0.05, gt=0.0)
    sampling: Sampling = Sampling.GAUSSIAN
    clip_tolerance: Optional[float] = Field(None, ge=0.0)


class MLPSection(_Section):
    params: MeasurementParams = MeasurementParams()
    initial: BlochState
    final: FinalCondition
    T: float = Field(gt=0.0)
    initial_momenta: Optional[List[float]] = None
    step: float = Field(1e-3, gt=0.0)
    tol: float = Field(1e-9, gt=0.0)
    postselect: Optional[PostselectSection] = None
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _momenta(self):
        if self.initial_momenta is not None and len(self.initial_momenta) != 3:
            raise ValueError("initial_momenta needs three entries (p_u, p_x, p_y)")
        return self


class MLPIdealSection(_Section):
    gamma1: float = Field(1.0, gt=0.0)
    theta0: float
    theta_f: Optional[float] = None
    T: Optional[float] = Field(None, ge=0.0)
    branch: Literal["+", "-"] = "+"
    step: float = Field(1e-3, gt=0.0)
    energies: List[float] = []
    theta_points: int = Field(401, ge=2)

    @model_validator(mode="after")
    def _target(self):
        if self.theta_f is None and self.T is None and not self.energies:
            raise ValueError("Give theta_f, T or energies")
        return self


class CorrelateSection(_Section):
    ensemble: Optional[EnsembleSection] = None
    ensemble_dir: Optional[str] = None
    pairs: List[List[str]] = [["u", "u"], ["x", "x"], ["y", "y"]]
    t_max: float = Field(2.0, gt=0.0)
    grid_points: int = Field(21, ge=1)
    n_blocks: int = Field(100, ge=2)
    k: float = Field(3.0, gt=0.0)
    higher_order: bool = False

    @model_validator(mode="after")
    def _source(self):
        if (self.ensemble is None) == (self.ensemble_dir is None):
            raise ValueError("Give exactly one of ensemble or ensemble_dir")
        for pair in self.pairs:
            if len(pair) != 2:
                raise ValueError(f"Correlator pairs need two variables, got {pair}")
        return self


class SMESection(_Section):
    operators: Optional[Dict[str, Any]] = None
    fluorescence: Optional[MeasurementParams] = None
    rho0: Optional[List[List[List[float]]]] = None
    initial: Optional[BlochState] = None
    dt: float = Field(0.01, gt=0.0)
    n_steps: int = Field(ge=0)
    n_trajectories: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    exact_sampling: bool = True
    compare: bool = False

    @model_validator(mode="after")
    def _source(self):
        if (self.operators is None) == (self.fluorescence is None):
            raise ValueError("Give exactly one of operators or fluorescence")
        if (self.rho0 is None) == (self.initial is None):
            raise ValueError("Give exactly one of rho0 or initial")
        if self.compare and self.fluorescence is None:
            raise ValueError("compare needs the fluorescence operator set")
        return self


class CVSection(_Section):
    initial: BlochState
    epsilon: float = Field(gt=0.0, lt=1.0)
    N: int = Field(ge=1)
    targets: List[Observable] = [Observable.SIGMA_X, Observable.SIGMA_Y, Observable.SIGMA_Z]
    seed: int = Field(0, ge=0)


_SECTIONS = {
    "simulate": ("simulate", SimulateSection),
    "average": ("average", AverageSection),
    "mlp": ("mlp", MLPSection),
    "mlp-ideal": ("mlp_ideal", MLPIdealSection),
    "correlate": ("correlate", CorrelateSection),
    "sme": ("sme", SMESection),
    "cv-reconstruct": ("cv_reconstruct", CVSection),
}


class RunConfig(_Section):
    """Top-level config: schema version, command and the matching section"""
    schema_version: int = SCHEMA_VERSION
    command: Literal["simulate", "average", "mlp", "mlp-ideal", "correlate", "sme", "cv-reconstruct"]
    simulate: Optional[SimulateSection] = None
    average: Optional[AverageSection] = None
    mlp: Optional[MLPSection] = None
    mlp_ideal: Optional[MLPIdealSection] = None
    correlate: Optional[CorrelateSection] = None
    sme: Optional[SMESection] = None
    cv_reconstruct: Optional[CVSection] = None

    @model_validator(mode="after")
    def _one_section(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"Unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}")
        field, _ = _SECTIONS[self.command]
        if getattr(self, field) is None:
            raise ValueError(f"Command {self.command!r} needs a {field!r} section")
        return self

    @property
    def section(self):
        return getattr(self, _SECTIONS[self.command][0])

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with the command's seed replaced (the --seed flag)"""
        section = self.section
        if hasattr(section, "seed"):
            section = section.model_copy(update={"seed": seed})
        elif isinstance(section, CorrelateSection) and section.ensemble is not None:
            section = section.model_copy(update={"ensemble": section.ensemble.model_copy(update={"seed": seed})})
        return self.model_copy(update={_SECTIONS[self.command][0]: section})

    def resolved(self) -> Dict[str, Any]:
        """JSON-ready dict for the manifest"""
        return self.model_dump(mode="json", exclude_none=True)


def section_for(command: str):
    return _SECTIONS[command][1]
