"""
Single-step heterodyne measurement of a fluorescing qubit.

Outcome densities are normalized against the coherent-state measure d^2alpha/pi.
Quadratures relate to alpha through Re(alpha) = I*sqrt(dt/2), Im(alpha) = -Q*sqrt(dt/2).
"""

from typing import Optional, Tuple, Union
import logging
import math

import numpy as np

from fluortraj.engines.bloch import StateLike, as_array
from fluortraj.engines.errors import InvalidOutcomeError
from fluortraj.models.bloch import BlochState, PHYSICALITY_TOL
from fluortraj.models.measurement import MeasurementParams

logger = logging.getLogger(__name__)

LINEAR_EPSILON_LIMIT = 0.1
QUADRATURE_RADIUS = 6.0
QUADRATURE_POINTS = 400


def _check_epsilon(eps: float) -> None:
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {eps}")


def alpha_grid(radius: float = QUADRATURE_RADIUS, n: int = QUADRATURE_POINTS) -> Tuple[np.ndarray, float]:
    """
    Uniform square grid over the alpha plane.

    Returns:
        (alpha, weight) where sum(f(alpha)) * weight approximates the integral of f d^2alpha/pi
    """
    axis = np.linspace(-radius, radius, n)
    h = axis[1] - axis[0]
    re, im = np.meshgrid(axis, axis, indexing="ij")
    return re + 1j * im, h * h / math.pi


def alpha_from_quadratures(I, Q, dt: float):
    scale = math.sqrt(dt / 2.0)
    return np.asarray(I) * scale - 1j * np.asarray(Q) * scale


def quadratures_from_alpha(alpha, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    scale = math.sqrt(dt / 2.0)
    alpha = np.asarray(alpha)
    return alpha.real / scale, -alpha.imag / scale


def norm_factor(r: np.ndarray, alpha, eps: float, eta: float = 1.0) -> np.ndarray:
    """
    N(alpha) = 1 - (eps*eta*u/2)(1 - |alpha|^2) + sqrt(eps*eta)(x Re alpha - y Im alpha).

    Broadcasts over the leading axes of r (..., 3) and alpha.
    """
    k = eps * eta
    u, x, y = r[..., 0], r[..., 1], r[..., 2]
    a2 = np.abs(alpha) ** 2
    return 1.0 - 0.5 * k * u * (1.0 - a2) + math.sqrt(k) * (x * np.real(alpha) - y * np.imag(alpha))


def prob_alpha(s: StateLike, eps: float, alpha) -> np.ndarray:
    """
    First-order outcome density P(alpha) for a lossless meter.

    Args:
        s: Physical qubit state
        eps: Relaxation probability gamma1*dt for the step
        alpha: Complex outcome(s)

    Returns:
        Density with respect to d^2alpha/pi

    Raises:
        ValueError: If eps exceeds the range where the linearized density is trusted,
            or the density comes out negative beyond tolerance
    """
    _check_epsilon(eps)
    if eps > LINEAR_EPSILON_LIMIT:
        raise ValueError(
            f"epsilon = {eps} is too large for the linearized density; use kraus_trace_density"
        )
    density = np.exp(-np.abs(alpha) ** 2) * norm_factor(as_array(s), alpha, eps)
    if np.min(density) < -PHYSICALITY_TOL:
        raise ValueError("Outcome density is negative; state or epsilon out of range")
    return density


def kraus_trace_density(s: StateLike, eps: float, alpha, eta: float = 1.0) -> np.ndarray:
    """
    Exact outcome density tr(M rho M^dag) summed over the unobserved loss branch.

    Non-negative for every physical state and eps < 1.
    """
    _check_epsilon(eps)
    return np.exp(-np.abs(alpha) ** 2) * norm_factor(as_array(s), alpha, eps, eta)


def kraus_operators(alpha: complex, eps: float, eta: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Measurement operator for outcome alpha and the unobserved-loss operator.

    Both act on the (|e>, |g>) basis and carry the e^{-|alpha|^2/2} coherent-state factor;
    a lost photon leaves the meter in vacuum.
    """
    _check_epsilon(eps)
    k = eps * eta
    damp = math.exp(-abs(alpha) ** 2 / 2.0)
    observed = damp * np.array([[math.sqrt(1.0 - eps), 0.0], [math.sqrt(k) * complex(alpha).conjugate(), 1.0]], dtype=complex)
    lost = damp * np.array([[0.0, 0.0], [math.sqrt(eps * (1.0 - eta)), 0.0]], dtype=complex)
    return observed, lost


def logp_quadratures(s: StateLike, p: MeasurementParams, I, Q) -> np.ndarray:
    """
    Log density of the quadrature record for one step, up to the I, Q independent constant.

    Reduces to -(dt/2)[I^2 - 2 zeta x I + Q^2 - 2 zeta y Q + eta gamma1 u].
    """
    r = as_array(s)
    zeta = p.zeta
    u, x, y = r[..., 0], r[..., 1], r[..., 2]
    I = np.asarray(I, dtype=float)
    Q = np.asarray(Q, dtype=float)
    return -0.5 * p.dt * (I ** 2 - 2.0 * zeta * x * I + Q ** 2 - 2.0 * zeta * y * Q + p.eta * p.gamma1 * u)


def sample_quadratures(s: StateLike, p: MeasurementParams, rng: np.random.Generator,
                       size: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (I, Q) from independent Gaussians with means zeta*(x, y) and variance 1/dt"""
    r = as_array(s)
    sigma = 1.0 / math.sqrt(p.dt)
    shape = () if size is None else (size,)
    xi = rng.standard_normal(shape + (2,)) * sigma
    I = p.zeta * r[..., 1] + xi[..., 0]
    Q = p.zeta * r[..., 2] + xi[..., 1]
    if size is None:
        return float(I), float(Q)
    return I, Q


def measurement_update(r: np.ndarray, alpha, eps: float, eta: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized exact measurement step on (..., 3) state arrays.

    Returns:
        (updated states, norm factor N)

    Raises:
        InvalidOutcomeError: If N(alpha) is not positive for some member
    """
    r = np.asarray(r, dtype=float)
    n = norm_factor(r, alpha, eps, eta)
    if np.any(n <= 0.0):
        raise InvalidOutcomeError(f"Outcome has non-positive probability (min N = {np.min(n):.3e})")
    k = math.sqrt(eps * eta)
    contraction = math.sqrt(1.0 - eps)
    u, x, y = r[..., 0], r[..., 1], r[..., 2]
    out = np.empty(np.broadcast_shapes(r.shape, np.shape(alpha) + (3,)), dtype=float)
    out[..., 0] = (1.0 - eps) * u / n
    out[..., 1] = contraction * (x + k * u * np.real(alpha)) / n
    out[..., 2] = contraction * (y - k * u * np.imag(alpha)) / n
    return out, n


def kraus_update(s: BlochState, alpha: complex, eps: float) -> BlochState:
    """
    Exact lossless update for outcome alpha.

    Raises:
        InvalidOutcomeError: If the outcome has non-positive probability
    """
    _check_epsilon(eps)
    updated, _ = measurement_update(s.as_array(), complex(alpha), eps)
    return BlochState.from_array(updated)


def phase_flip(r: np.ndarray, p: MeasurementParams) -> np.ndarray:
    """Dephasing channel of strength gamma_phi*dt; shrinks the coherences only"""
    r = np.array(r, dtype=float, copy=True)
    if p.gamma_phi > 0.0:
        factor = math.exp(-p.gamma_phi * p.dt)
        r[..., 1] *= factor
        r[..., 2] *= factor
    return r


def update_with_loss_dephasing(s: BlochState, p: MeasurementParams, alpha: complex) -> BlochState:
    """
    One exact step with collection efficiency eta, followed by phase-flip dephasing.

    Raises:
        InvalidOutcomeError: If the outcome has non-positive probability
    """
    updated, _ = measurement_update(s.as_array(), complex(alpha), p.epsilon, p.eta)
    return BlochState.from_array(phase_flip(updated, p))


def energy_gain_predicate(s: StateLike, alpha, eps: float):
    """
    True where the exact update raises the excitation u.

    Equivalent to (u/2)(1 - |alpha|^2) - (x Re alpha - y Im alpha)/sqrt(eps) > 1 for u > 0.
    """
    r = as_array(s)
    u, x, y = r[..., 0], r[..., 1], r[..., 2]
    alpha = np.asarray(alpha)
    if eps <= 0.0:
        result = np.zeros(np.broadcast_shapes(u.shape, alpha.shape), dtype=bool)
    else:
        lhs = 0.5 * u * (1.0 - np.abs(alpha) ** 2) - (x * alpha.real - y * alpha.imag) / math.sqrt(eps)
        result = (lhs > 1.0) & (u > 0.0)
    return bool(result) if result.ndim == 0 else result


def no_click_update(a: complex, b: complex, eps: float) -> Tuple[complex, complex]:
    """Photon-counting null result: (a sqrt(1-eps), b) renormalized"""
    _check_epsilon(eps)
    norm_sq = abs(a) ** 2 + abs(b) ** 2
    if not math.isclose(norm_sq, 1.0, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError(f"Amplitudes must be normalized, |a|^2 + |b|^2 = {norm_sq}")
    a_damped = complex(a) * math.sqrt(1.0 - eps)
    scale = math.sqrt(abs(a_damped) ** 2 + abs(b) ** 2)
    return a_damped / scale, complex(b) / scale


def propose_alpha(rng: np.random.Generator, n: int) -> np.ndarray:
    """
    Draw from e^{-|alpha|^2}(1 + |alpha|^2)/pi: an equal mixture of the vacuum
    Gaussian and a Gamma(2, 1) radial law with uniform phase.
    """
    pick = rng.random(n) < 0.5
    gauss = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(0.5)
    radius = np.sqrt(rng.gamma(2.0, 1.0, n))
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.where(pick, gauss, radius * np.exp(1j * phase))


def acceptance_ratio(r: np.ndarray, alpha, eps: float, eta: float = 1.0) -> np.ndarray:
    """N(alpha)/(1 + |alpha|^2); lies in [0, 1] for physical states"""
    return norm_factor(r, alpha, eps, eta) / (1.0 + np.abs(alpha) ** 2)


def sample_alpha_exact(s: StateLike, eps: float, rng: np.random.Generator,
                       size: Optional[int] = None, eta: float = 1.0) -> Union[complex, np.ndarray]:
    """
    Sample outcomes from the exact Kraus-trace density by rejection.

    The mean acceptance rate is 1/2 for every state.
    """
    _check_epsilon(eps)
    r = as_array(s)
    wanted = 1 if size is None else int(size)
    accepted = []
    remaining = wanted
    while remaining > 0:
        batch = max(2 * remaining + 16, 32)
        candidates = propose_alpha(rng, batch)
        keep = rng.random(batch) < acceptance_ratio(r, candidates, eps, eta)
        chosen = candidates[keep][:remaining]
        accepted.append(chosen)
        remaining -= len(chosen)
    samples = np.concatenate(accepted)
    return complex(samples[0]) if size is None else samples
