"""
Conversions and validity predicates for qubit states in modified Bloch coordinates.
"""

from typing import Union
import logging
import numpy as np

from fluortraj.models.bloch import BlochState, DensityMatrix2, PHYSICALITY_TOL
from fluortraj.engines.errors import NonPhysicalStateError

logger = logging.getLogger(__name__)

StateLike = Union[BlochState, np.ndarray, tuple, list]


def as_array(s: StateLike) -> np.ndarray:
    """(..., 3) float array from a BlochState or array-like"""
    if isinstance(s, BlochState):
        return s.as_array()
    r = np.asarray(s, dtype=float)
    if r.shape[-1] != 3:
        raise ValueError(f"Bloch arrays need a trailing dimension of 3, got shape {r.shape}")
    return r


def to_density(s: BlochState, tol: float = PHYSICALITY_TOL) -> DensityMatrix2:
    """
    Density matrix in the (|e>, |g>) basis.

    Raises:
        NonPhysicalStateError: If s lies outside the Bloch ball beyond tol
    """
    if not s.is_physical(tol):
        raise NonPhysicalStateError(f"State {s.as_array().tolist()} lies outside the Bloch ball")
    rho_eg = 0.5 * complex(s.x, -s.y)
    return DensityMatrix2(matrix=[[s.u / 2.0, rho_eg], [rho_eg.conjugate(), 1.0 - s.u / 2.0]])


def from_density(rho: DensityMatrix2, tol: float = PHYSICALITY_TOL) -> BlochState:
    """
    Inverse of to_density.

    Raises:
        ValueError: If rho is not Hermitian, not unit trace or not positive
    """
    rho.validate_physical(tol)
    m = rho.matrix
    return BlochState(u=2.0 * m[0, 0].real, x=2.0 * m[0, 1].real, y=-2.0 * m[0, 1].imag)


def purity_defect(s: StateLike) -> np.ndarray:
    """1 - (x^2 + y^2 + (1-u)^2); zero for pure states, vectorized over leading axes"""
    r = as_array(s)
    value = 1.0 - (r[..., 1] ** 2 + r[..., 2] ** 2 + (1.0 - r[..., 0]) ** 2)
    return float(value) if np.ndim(value) == 0 else value


def trace_distance(a: StateLike, b: StateLike) -> np.ndarray:
    """Half the Euclidean distance between qubit states in (x, y, z) coordinates"""
    d = as_array(a) - as_array(b)
    return 0.5 * np.sqrt(np.sum(d ** 2, axis=-1))


def state_from_theta(theta) -> np.ndarray:
    """Pure states u = 1 + cos(theta), x = sin(theta), y = 0"""
    theta = np.asarray(theta, dtype=float)
    return np.stack([1.0 + np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1)


def theta_from_state(s: StateLike) -> np.ndarray:
    """Polar angle of the (x, z) projection; exact inverse of state_from_theta on (-pi, pi]"""
    r = as_array(s)
    return np.arctan2(r[..., 1], r[..., 0] - 1.0)


def project_to_ball(r: np.ndarray) -> np.ndarray:
    """Radially rescale (x, y, z) rows with norm above 1 onto the ball surface"""
    r = np.array(r, dtype=float, copy=True)
    z = r[..., 0] - 1.0
    norm = np.sqrt(r[..., 1] ** 2 + r[..., 2] ** 2 + z ** 2)
    scale = np.where(norm > 1.0, 1.0 / np.where(norm > 0.0, norm, 1.0), 1.0)
    r[..., 0] = 1.0 + z * scale
    r[..., 1] *= scale
    r[..., 2] *= scale
    return r


def random_physical_states(rng: np.random.Generator, size: int, pure_fraction: float = 0.0) -> np.ndarray:
    """
    Draw states uniformly from the Bloch ball; a fraction are pushed to the surface.

    Returns:
        (size, 3) array of (u, x, y)
    """
    v = rng.standard_normal((size, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    radius = rng.random(size) ** (1.0 / 3.0)
    radius[rng.random(size) < pure_fraction] = 1.0
    v *= radius[:, None]
    return np.column_stack([1.0 + v[:, 2], v[:, 0], v[:, 1]])
