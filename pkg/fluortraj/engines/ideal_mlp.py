"""
Analytic most-likely paths for the ideal channel (eta = 1, no extra dephasing).

States stay pure on the x-z great circle, u = 1 + cos(theta), x = sin(theta),
and the readout-optimized Hamiltonian is gamma1 (a p^2 + b p + c) with
a = -c = cos^4(theta/2) and b = sin(theta)(2 + cos(theta))/2.
"""

from typing import Dict, List, Sequence
import logging
import math

import numpy as np
from scipy import integrate, optimize

from fluortraj.engines.errors import BVPConvergenceError
from fluortraj.models.phase import Branch, IdealPath, StochasticEnergy

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEGENERATE_TOL = 1e-14


def ideal_coefficients(theta):
    """(a, b, c) of the readout-optimized Hamiltonian"""
    theta = np.asarray(theta, dtype=float)
    a = np.cos(theta / 2.0) ** 4
    b = 0.5 * np.sin(theta) * (2.0 + np.cos(theta))
    return a, b, -a


def ideal_h_prime(theta, p_theta, gamma1: float = 1.0):
    a, b, c = ideal_coefficients(theta)
    p_theta = np.asarray(p_theta, dtype=float)
    return gamma1 * (a * p_theta ** 2 + b * p_theta + c)


def _sign(branch) -> float:
    return Branch(branch).sign


def p_minus_asymptote(theta):
    """Leading divergence 8/(theta - pi)^3 of the minus zero-energy line"""
    return 8.0 / (np.asarray(theta, dtype=float) - math.pi) ** 3


def p_zero_energy(theta, branch: Branch = Branch.PLUS):
    """
    Zero-energy momentum [± cos(theta/2) sqrt(10 + 6 cos theta) - (2 + cos theta) sin theta] / (1 + cos theta)^2.

    Evaluated in whichever of the two algebraically equal forms avoids cancellation.
    At theta = pi the plus line is 0 and the minus line is -inf.
    """
    sign = _sign(branch)
    theta = np.asarray(theta, dtype=float)
    cos_t = np.cos(theta)
    half = np.cos(theta / 2.0)
    root = np.sqrt(10.0 + 6.0 * cos_t)
    tail = (2.0 + cos_t) * np.sin(theta)
    one_plus = 1.0 + cos_t
    numerator = sign * half * root - tail
    conjugate = half * root + sign * tail
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = numerator / one_plus ** 2
        rationalized = sign * one_plus ** 2 / conjugate
    value = np.where(np.abs(numerator) >= np.abs(conjugate), direct, rationalized)
    value = np.where(one_plus == 0.0, 0.0 if sign > 0 else -np.inf, value)
    return float(value) if value.ndim == 0 else value


def p_at_energy(theta: float, E: float, gamma1: float = 1.0) -> np.ndarray:
    """
    Real roots p of gamma1 (a p^2 + b p + c) = E, sorted ascending.

    At theta = pi the quadratic degenerates; E = 0 then returns the finite plus-line value 0.
    """
    a, b, c = (float(v) for v in ideal_coefficients(theta))
    if a < DEGENERATE_TOL:
        if abs(b) > DEGENERATE_TOL:
            return np.array([(E / gamma1 - c) / b])
        return np.array([0.0]) if E == 0.0 else np.array([])
    shifted = c - E / gamma1
    disc = b * b - 4.0 * a * shifted
    if disc < 0.0:
        return np.array([])
    if disc == 0.0:
        return np.array([-b / (2.0 * a)])
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    return np.sort(np.array([q / a, shifted / q]))


def ideal_discriminant(theta, E: float, gamma1: float = 1.0):
    """b^2 + 4a^2 + 4aE/gamma1; theta-dot on a line of energy E is ±gamma1 sqrt of this"""
    a, b, _ = ideal_coefficients(theta)
    return b * b + 4.0 * a * a + 4.0 * a * E / gamma1


def branch_momentum(theta: float, E: float, direction: float, gamma1: float = 1.0) -> float:
    """
    Root of the energy-E quadratic on which theta moves in the given direction (±1).

    Raises:
        ValueError: If no real root exists at theta
    """
    a, b, _ = (float(v) for v in ideal_coefficients(theta))
    roots = p_at_energy(theta, E, gamma1)
    if roots.size == 0:
        raise ValueError(f"No momentum with energy {E} at theta = {theta}")
    speed = 2.0 * a * roots + b
    pick = np.argmax(direction * speed)
    return float(roots[pick])


def ideal_action_antiderivative(theta, branch: Branch = Branch.PLUS):
    """S(theta) with dS/dtheta = -p_zero_energy(theta, branch)"""
    sign = _sign(branch)
    theta = np.asarray(theta, dtype=float)
    cos_t = np.cos(theta)
    half_sin = np.sin(theta / 2.0)
    root = np.sqrt(10.0 + 6.0 * cos_t)
    ratio = math.sqrt(2.0) * half_sin / np.sqrt(5.0 + 3.0 * cos_t)
    return ((-sign * root * half_sin + 2.0) / (2.0 * (1.0 + cos_t))
            - 2.0 * np.log(np.abs(np.cos(theta / 2.0)))
            - sign * 2.0 * np.arctanh(ratio))


def ideal_action_zero_energy(theta0: float, theta_f: float, branch: Branch = Branch.PLUS) -> float:
    """Action -∫ p dtheta along one zero-energy line between the endpoints"""
    if theta0 == theta_f:
        return 0.0
    if Branch(branch) is Branch.MINUS and _crosses_pi(theta0, theta_f):
        raise ValueError("The minus line diverges at theta = pi and cannot be crossed")
    return float(ideal_action_antiderivative(theta_f, branch) - ideal_action_antiderivative(theta0, branch))


def _crosses_pi(theta0: float, theta_f: float) -> bool:
    lo, hi = sorted((theta0, theta_f))
    return lo <= math.pi <= hi or lo <= -math.pi <= hi


def ideal_time_antiderivative(theta, gamma1: float = 1.0):
    """(2/gamma1) atanh(sqrt(2) sin(theta/2) / sqrt(5 + 3 cos theta)); increasing on (-pi, pi)"""
    theta = np.asarray(theta, dtype=float)
    ratio = math.sqrt(2.0) * np.sin(theta / 2.0) / np.sqrt(5.0 + 3.0 * np.cos(theta))
    return 2.0 / gamma1 * np.arctanh(ratio)


def ideal_time_zero_energy(theta0: float, theta_f: float, gamma1: float = 1.0) -> float:
    """Elapsed time along a zero-energy line between the endpoints"""
    _check_open_interval(theta0, theta_f)
    return float(abs(ideal_time_antiderivative(theta_f, gamma1) - ideal_time_antiderivative(theta0, gamma1)))


def ideal_theta_at_time(theta0: float, t, branch: Branch = Branch.PLUS, gamma1: float = 1.0):
    """
    Angle reached after time t along a zero-energy line from theta0.

    Inverts the time antiderivative through sin^2(theta/2) = 4h^2/(1 + 3h^2),
    h = tanh(gamma1 F / 2).
    """
    _check_open_interval(theta0)
    target = ideal_time_antiderivative(theta0, gamma1) + _sign(branch) * np.asarray(t, dtype=float)
    h = np.tanh(0.5 * gamma1 * target)
    theta = 2.0 * np.arcsin(np.clip(2.0 * h / np.sqrt(1.0 + 3.0 * h * h), -1.0, 1.0))
    return float(theta) if np.ndim(theta) == 0 else theta


def _check_open_interval(*thetas: float) -> None:
    for theta in thetas:
        if not -math.pi < theta < math.pi:
            raise ValueError(f"theta = {theta} must lie in (-pi, pi); the ground state is reached only asymptotically")


def ideal_mlp_readout(theta, p_theta, gamma1: float = 1.0):
    """Most likely I = sqrt(gamma1/2)(sin theta + p_theta (1 + cos theta))"""
    theta = np.asarray(theta, dtype=float)
    return math.sqrt(gamma1 / 2.0) * (np.sin(theta) + np.asarray(p_theta) * (1.0 + np.cos(theta)))


def ideal_rhs(theta, p_theta, gamma1: float = 1.0):
    """Canonical flow (theta-dot, p-dot) of the readout-optimized Hamiltonian"""
    theta = np.asarray(theta, dtype=float)
    p_theta = np.asarray(p_theta, dtype=float)
    a, b, _ = ideal_coefficients(theta)
    half_c, half_s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    da = -2.0 * half_c ** 3 * half_s
    db = 0.5 * (2.0 * np.cos(theta) + np.cos(2.0 * theta))
    theta_dot = gamma1 * (2.0 * a * p_theta + b)
    p_dot = -gamma1 * (da * p_theta ** 2 + db * p_theta - da)
    return theta_dot, p_dot


def integrate_ideal_path(theta0: float, p0: float, T: float, gamma1: float = 1.0,
                         h: float = DEFAULT_STEP) -> IdealPath:
    """RK4 integration of the (theta, p_theta) flow over [0, T]"""
    if T < 0:
        raise ValueError("T must be non-negative")
    n = max(1, int(math.ceil(T / h)))
    step = T / n
    theta = np.empty(n + 1)
    momentum = np.empty(n + 1)
    theta[0], momentum[0] = theta0, p0
    for k in range(n):
        th, pk = theta[k], momentum[k]
        k1 = ideal_rhs(th, pk, gamma1)
        k2 = ideal_rhs(th + 0.5 * step * k1[0], pk + 0.5 * step * k1[1], gamma1)
        k3 = ideal_rhs(th + 0.5 * step * k2[0], pk + 0.5 * step * k2[1], gamma1)
        k4 = ideal_rhs(th + step * k3[0], pk + step * k3[1], gamma1)
        theta[k + 1] = th + step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        momentum[k + 1] = pk + step / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])

    times = np.linspace(0.0, T, n + 1)
    energies = ideal_h_prime(theta, momentum, gamma1)
    E = float(energies[0])
    theta_dot = ideal_rhs(theta, momentum, gamma1)[0]
    action = float(integrate.trapezoid(-momentum * theta_dot + energies, times))
    branch = None
    if abs(E) <= 1e-9 * gamma1:
        branch = Branch.PLUS if theta_dot[0] >= 0 else Branch.MINUS
    return IdealPath(
        times=times,
        theta=theta,
        p_theta=momentum,
        readout=ideal_mlp_readout(theta, momentum, gamma1),
        energy=StochasticEnergy(E=E, drift=float(np.max(np.abs(energies - E)))),
        branch=branch,
        action=action,
    )


def minimum_energy(theta0: float, theta_f: float, gamma1: float = 1.0) -> float:
    """Lowest energy whose lines connect theta0 to theta_f without a turning point"""
    lo, hi = sorted((theta0, theta_f))
    theta_near_zero = 0.0 if lo <= 0.0 <= hi else min((lo, hi), key=abs)
    c2 = math.cos(theta_near_zero / 2.0) ** 2
    return -gamma1 * (3.0 * c2 + 1.0) / (4.0 * c2)


def ideal_transit_time(theta0: float, theta_f: float, E: float, gamma1: float = 1.0) -> float:
    """∫ dtheta / (gamma1 sqrt(D(theta, E))) between the endpoints"""
    lo, hi = sorted((theta0, theta_f))
    if lo == hi:
        return 0.0

    def integrand(theta):
        disc = ideal_discriminant(theta, E, gamma1)
        return 1.0 / (gamma1 * math.sqrt(max(float(disc), 1e-300)))

    value, _ = integrate.quad(integrand, lo, hi, limit=200)
    return float(value)


def solve_ideal_bvp(theta0: float, theta_f: float, T: float, gamma1: float = 1.0,
                    h: float = DEFAULT_STEP, xtol: float = 1e-13) -> IdealPath:
    """
    Path from theta0 to theta_f in time T by shooting on the energy.

    Args:
        theta0: Initial angle in (-pi, pi)
        theta_f: Final angle in (-pi, pi)
        T: Elapsed time
        gamma1: Relaxation rate
        h: RK4 step for the returned path

    Raises:
        ValueError: If T is not positive or an angle is outside (-pi, pi)
        BVPConvergenceError: If T needs a path with a turning point
    """
    if T <= 0:
        raise ValueError("T must be positive")
    _check_open_interval(theta0, theta_f)
    direction = 1.0 if theta_f >= theta0 else -1.0
    if theta0 == theta_f:
        E = gamma1 * float(ideal_coefficients(theta0)[2])
        if abs(math.sin(theta0)) > 1e-12:
            raise BVPConvergenceError("Returning to the start needs a turning point", residual=abs(theta_f - theta0))
    else:
        E_min = minimum_energy(theta0, theta_f, gamma1)
        longest = ideal_transit_time(theta0, theta_f, E_min, gamma1)
        if T > longest:
            logger.error(f"Error solving ideal path: T = {T} exceeds the monotone transit time {longest:.6g}")
            raise BVPConvergenceError(
                "No monotone path; T needs a turning point", residual=T - longest
            )
        E_hi = max(1.0, abs(E_min)) * gamma1
        while ideal_transit_time(theta0, theta_f, E_hi, gamma1) > T:
            E_hi *= 4.0

        def mismatch(E: float) -> float:
            return ideal_transit_time(theta0, theta_f, E, gamma1) - T

        E = optimize.brentq(mismatch, E_min, E_hi, xtol=xtol)
        logger.info(f"Ideal path energy E = {E:.10g} for T = {T}")

    p0 = branch_momentum(theta0, E, direction, gamma1)
    path = integrate_ideal_path(theta0, p0, T, gamma1, h)
    residual = abs(path.theta[-1] - theta_f)
    if residual > 1e-6:
        logger.warning(f"Ideal path endpoint misses theta_f by {residual:.3e}")
    return path


def phase_portrait(energies: Sequence[float], thetas: Sequence[float],
                   gamma1: float = 1.0) -> List[Dict[str, float]]:
    """
    Constant-energy lines in the (theta, p_theta) plane.

    Returns:
        One row per (E, theta) with p_minus/p_plus set to NaN where no real root exists
    """
    rows = []
    for E in energies:
        for theta in thetas:
            roots = p_at_energy(float(theta), float(E), gamma1)
            lower = float(roots[0]) if roots.size else math.nan
            upper = float(roots[-1]) if roots.size else math.nan
            rows.append({"E": float(E), "theta": float(theta), "p_minus": lower, "p_plus": upper})
    return rows


def zero_energy_path(theta0: float, T: float, branch: Branch = Branch.PLUS,
                     gamma1: float = 1.0, n_points: int = 201) -> IdealPath:
    """Closed-form zero-energy path sampled on a uniform grid"""
    times = np.linspace(0.0, T, n_points)
    theta = ideal_theta_at_time(theta0, times, branch, gamma1)
    momentum = p_zero_energy(theta, branch)
    theta_f = float(theta[-1])
    return IdealPath(
        times=times,
        theta=theta,
        p_theta=momentum,
        readout=ideal_mlp_readout(theta, momentum, gamma1),
        energy=StochasticEnergy(E=0.0),
        branch=Branch(branch),
        action=ideal_action_zero_energy(theta0, theta_f, branch),
    )
