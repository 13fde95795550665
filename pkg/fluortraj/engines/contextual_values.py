"""
Observable reconstruction from single-step heterodyne statistics with
contextual values. Every sample is taken on a fresh copy of the same state.
"""

from typing import Dict, Optional, Sequence, Union
import logging
import math

import numpy as np

from fluortraj.engines.bloch import StateLike, as_array
from fluortraj.engines.weak_measurement import alpha_grid, sample_alpha_exact
from fluortraj.models.contextual import ContextualValue, Observable, ReconstructionResult
from fluortraj.services.rng_service import generator_for_seed

logger = logging.getLogger(__name__)

PAULI_TARGETS = (Observable.SIGMA_X, Observable.SIGMA_Y, Observable.SIGMA_Z)

_MATRICES = {
    Observable.IDENTITY: np.eye(2, dtype=complex),
    Observable.SIGMA_X: np.array([[0, 1], [1, 0]], dtype=complex),
    Observable.SIGMA_Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    Observable.SIGMA_Z: np.array([[1, 0], [0, -1]], dtype=complex),
}


def observable_matrix(target: Union[Observable, str]) -> np.ndarray:
    """Operator in the (|e>, |g>) basis"""
    return _MATRICES[Observable(target)].copy()


def povm_element(alpha, eps: float) -> np.ndarray:
    """
    E_alpha = M_alpha^dag M_alpha for a lossless meter, normalized against d^2alpha/pi.

    Returns:
        (..., 2, 2) positive semidefinite matrices
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {eps}")
    alpha = np.asarray(alpha, dtype=complex)
    weight = np.exp(-np.abs(alpha) ** 2)
    k = math.sqrt(eps)
    out = np.empty(alpha.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = weight * (1.0 - eps + eps * np.abs(alpha) ** 2)
    out[..., 0, 1] = weight * k * alpha
    out[..., 1, 0] = weight * k * np.conj(alpha)
    out[..., 1, 1] = weight
    return out


def cv_for(target: Union[Observable, str], eps: float) -> ContextualValue:
    """
    Raises:
        ValueError: If eps is not in (0, 1)
    """
    return ContextualValue(target=Observable(target), epsilon=eps)


def true_expectation(s: StateLike, target: Union[Observable, str]) -> float:
    """tr(rho A) from Bloch coordinates"""
    u, x, y = as_array(s)
    target = Observable(target)
    if target is Observable.IDENTITY:
        return 1.0
    if target is Observable.SIGMA_X:
        return float(x)
    if target is Observable.SIGMA_Y:
        return float(y)
    return float(u - 1.0)


def reconstruction_identity(cv: ContextualValue, radius: float = 6.0, n: int = 400) -> np.ndarray:
    """Quadrature of the integral of C_A(alpha) E_alpha d^2alpha/pi; equals A to grid accuracy"""
    alpha, weight = alpha_grid(radius, n)
    terms = cv(alpha)[..., None, None] * povm_element(alpha, cv.epsilon)
    return terms.sum(axis=(0, 1)) * weight


def povm_completeness(eps: float, radius: float = 6.0, n: int = 400) -> np.ndarray:
    alpha, weight = alpha_grid(radius, n)
    return povm_element(alpha, eps).sum(axis=(0, 1)) * weight


def sample_single_step_alpha(s: StateLike, eps: float, N: int, seed: int) -> np.ndarray:
    """
    N outcomes of one weak measurement on fresh copies of s, drawn from the exact density.

    Raises:
        ValueError: If N is not positive or eps is out of range
    """
    if N < 1:
        raise ValueError("At least one sample is required")
    return sample_alpha_exact(s, eps, generator_for_seed(seed), size=N)


def reconstruct_expectation(samples: Sequence[complex], cv: ContextualValue):
    """
    Sample mean of C_A(alpha) with its standard error.

    Returns:
        (estimate, stderr)

    Raises:
        ValueError: If there are no samples
    """
    values = cv(np.asarray(samples, dtype=complex))
    if values.size == 0:
        raise ValueError("Cannot reconstruct from an empty sample")
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else float("nan")
    return float(np.mean(values)), stderr


def reconstruct(s: StateLike, target: Union[Observable, str], eps: float, N: int, seed: int,
                samples: Optional[np.ndarray] = None) -> ReconstructionResult:
    cv = cv_for(target, eps)
    if samples is None:
        samples = sample_single_step_alpha(s, eps, N, seed)
    estimate, stderr = reconstruct_expectation(samples, cv)
    return ReconstructionResult(
        target=cv.target, N=len(samples), epsilon=eps, estimate=estimate, stderr=stderr,
        truth_if_known=true_expectation(s, cv.target),
    )


def reconstruct_all(s: StateLike, eps: float, N: int, seed: int) -> Dict[str, ReconstructionResult]:
    """Reconstruct sigma_x, sigma_y and sigma_z from one shared sample"""
    samples = sample_single_step_alpha(s, eps, N, seed)
    results = {t.value: reconstruct(s, t, eps, N, seed, samples=samples) for t in PAULI_TARGETS}
    ratio = results[Observable.SIGMA_Z.value].stderr / results[Observable.SIGMA_X.value].stderr
    logger.info(f"Reconstructed Pauli expectations from {N} samples at epsilon={eps}; SE(z)/SE(x) = {ratio:.2f}")
    return results
