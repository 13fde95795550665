"""
Monitoring-channel parameters and quadrature outcome values.
"""

from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, model_validator
import math


class Scheme(str, Enum):
    """Trajectory integration schemes"""
    EXACT = "exact"                  # Kraus update per step
    STRATONOVICH = "stratonovich"    # Heun on the physical-form equations
    ITO = "ito"                      # Euler-Maruyama on the Ito equations


class Sampling(str, Enum):
    """How the exact scheme draws its per-step outcome"""
    GAUSSIAN = "gaussian"  # (I, Q) from the Gaussian readout law
    KRAUS = "kraus"        # alpha from the exact Kraus-trace density


class MeasurementParams(BaseModel):
    """
    Heterodyne fluorescence channel.

    Rates are in units of 1/time; with gamma1 = 1 time is measured in 1/gamma1.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma1: float = Field(1.0, gt=0.0)
    gamma_phi: float = Field(0.0, ge=0.0)
    eta: float = Field(1.0, ge=0.0, le=1.0)
    dt: float = Field(0.01, gt=0.0)
    max_epsilon: float = Field(0.1, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _step_size(self):
        if self.gamma1 * self.dt > self.max_epsilon:
            raise ValueError(
                f"gamma1*dt = {self.gamma1 * self.dt:.6g} exceeds the step limit {self.max_epsilon}"
            )
        return self

    @property
    def epsilon(self) -> float:
        """Relaxation probability per step"""
        return self.gamma1 * self.dt

    @property
    def zeta(self) -> float:
        return math.sqrt(self.eta * self.gamma1 / 2.0)

    @property
    def gamma2(self) -> float:
        """Total dephasing rate"""
        return self.gamma1 / 2.0 + self.gamma_phi

    def with_dt(self, dt: float) -> "MeasurementParams":
        return self.model_copy(update={"dt": dt})


class QuadratureSample(BaseModel):
    """One heterodyne outcome as rescaled quadratures (I, Q) for a step dt"""
    model_config = ConfigDict(frozen=True)

    I: float
    Q: float
    dt: float = Field(gt=0.0)

    @property
    def alpha(self) -> complex:
        scale = math.sqrt(self.dt / 2.0)
        return complex(self.I * scale, -self.Q * scale)

    @classmethod
    def from_alpha(cls, alpha: complex, dt: float) -> "QuadratureSample":
        scale = math.sqrt(dt / 2.0)
        return cls(I=alpha.real / scale, Q=-alpha.imag / scale, dt=dt)
