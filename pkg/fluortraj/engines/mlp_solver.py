"""
MLP Solver for fluortraj
Stochastic Hamiltonian, optimal readouts and the six-variable canonical flow of
most-likely paths, with a multiple-shooting boundary-value solver.
"""

from typing import Optional, Tuple, Union
import logging
import math

import numpy as np
from scipy import integrate

from fluortraj.engines.bloch import purity_defect, theta_from_state
from fluortraj.engines.errors import BVPConvergenceError
from fluortraj.engines.ideal_mlp import solve_ideal_bvp
from fluortraj.engines.trajectory_engine import stratonovich_rhs
from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams
from fluortraj.models.phase import MLPPath, PhasePoint, StochasticEnergy
from fluortraj.models.trajectory import FinalCondition
from fluortraj.services.rng_service import generator_for_seed

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEFAULT_SEGMENT = 0.25
ENERGY_TOL = 1e-6

PhaseLike = Union[PhasePoint, np.ndarray]


def _as_phase_array(pp: PhaseLike) -> np.ndarray:
    if isinstance(pp, PhasePoint):
        return pp.as_array()
    z = np.asarray(pp, dtype=float)
    if z.shape[-1] != 6:
        raise ValueError(f"Phase points need a trailing dimension of 6, got shape {z.shape}")
    return z


def optimal_readout(pp: PhaseLike, p: MeasurementParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Readout (I, Q) that makes the stochastic Hamiltonian stationary.

    I/zeta = x + p_x(u - x^2) - p_u u x - p_y x y, and Q likewise with x and y swapped.
    """
    u, x, y, pu, px, py = np.moveaxis(_as_phase_array(pp), -1, 0)
    zeta = p.zeta
    I = zeta * (x + px * (u - x * x) - pu * u * x - py * x * y)
    Q = zeta * (y + py * (u - y * y) - pu * u * y - px * x * y)
    return I, Q


def stochastic_hamiltonian(pp: PhaseLike, I, Q, p: MeasurementParams):
    """
    H = p . F(r; I, Q) - I^2/2 + zeta x I - Q^2/2 + zeta y Q - eta gamma1 u / 2,
    with F the physical-form equations of motion.
    """
    z = _as_phase_array(pp)
    I = np.asarray(I, dtype=float)
    Q = np.asarray(Q, dtype=float)
    flow = stratonovich_rhs(z[..., :3], I, Q, p)
    u, x, y = z[..., 0], z[..., 1], z[..., 2]
    value = (np.sum(z[..., 3:] * flow, axis=-1) - 0.5 * I * I + p.zeta * x * I
             - 0.5 * Q * Q + p.zeta * y * Q - 0.5 * p.eta * p.gamma1 * u)
    return float(value) if np.ndim(value) == 0 else value


def optimal_hamiltonian(pp: PhaseLike, p: MeasurementParams):
    """Stochastic Hamiltonian at the optimal readout"""
    I, Q = optimal_readout(pp, p)
    return stochastic_hamiltonian(pp, I, Q, p)


def mlp_rhs(pp: PhaseLike, p: MeasurementParams) -> np.ndarray:
    """
    Canonical flow (dH/dp, -dH/dr) with the optimal readout substituted.

    Returns:
        (..., 6) array
    """
    z = _as_phase_array(pp)
    u, x, y, pu, px, py = np.moveaxis(z, -1, 0)
    I, Q = optimal_readout(z, p)
    g1, gphi, zeta, eta = p.gamma1, p.gamma_phi, p.zeta, p.eta
    state = stratonovich_rhs(z[..., :3], I, Q, p)
    back = x * I + y * Q
    coherence = 0.5 * g1 * (1.0 - eta * u) + gphi
    dpu = (pu * (g1 * (1.0 - eta * u) + zeta * back)
           - px * (0.5 * g1 * eta * x + zeta * I)
           - py * (0.5 * g1 * eta * y + zeta * Q)
           + 0.5 * eta * g1)
    dpx = (zeta * pu * u * I + px * (coherence + zeta * (2.0 * x * I + y * Q))
           + zeta * py * y * I - zeta * I)
    dpy = (zeta * pu * u * Q + py * (coherence + zeta * (x * I + 2.0 * y * Q))
           + zeta * px * x * Q - zeta * Q)
    momenta = np.stack(np.broadcast_arrays(dpu, dpx, dpy), axis=-1)
    return np.concatenate([state, momenta], axis=-1)


def _rk4(z0: np.ndarray, duration: float, n: int, p: MeasurementParams, keep_path: bool = False):
    step = duration / n
    z = np.array(z0, dtype=float, copy=True)
    path = [z.copy()] if keep_path else None
    for _ in range(n):
        k1 = mlp_rhs(z, p)
        k2 = mlp_rhs(z + 0.5 * step * k1, p)
        k3 = mlp_rhs(z + 0.5 * step * k2, p)
        k4 = mlp_rhs(z + step * k3, p)
        z = z + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep_path:
            path.append(z.copy())
    return np.array(path) if keep_path else z


def integrate_mlp(z0: PhaseLike, T: float, p: MeasurementParams,
                  h: float = DEFAULT_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fixed-step RK4 integration of the canonical flow.

    Returns:
        (times, points) with points of shape (n+1, 6)
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    n = max(1, int(math.ceil(T / h)))
    points = _rk4(_as_phase_array(z0), T, n, p, keep_path=True)
    return np.linspace(0.0, T, n + 1), points


def _boundary_residual(end: np.ndarray, target: FinalCondition) -> np.ndarray:
    """Conditioned components hit their targets; free components get p_i(T) = 0"""
    out = np.empty(end.shape[:-1] + (3,))
    fixed = dict(target.conditioned())
    for i in range(3):
        out[..., i] = end[..., i] - fixed[i] if i in fixed else end[..., 3 + i]
    return out


class _MultipleShooting:
    """Unknowns: the initial momenta plus full phase points at interior nodes"""

    def __init__(self, s0: np.ndarray, target: FinalCondition, T: float, p: MeasurementParams,
                 n_segments: int, h: float):
        self.s0 = s0
        self.target = target
        self.p = p
        self.m = n_segments
        self.duration = T / n_segments
        self.steps = max(1, int(math.ceil(self.duration / h)))

    @property
    def size(self) -> int:
        return 3 + 6 * (self.m - 1)

    def starts(self, w: np.ndarray) -> np.ndarray:
        nodes = np.empty((self.m, 6))
        nodes[0, :3] = self.s0
        nodes[0, 3:] = w[:3]
        nodes[1:] = w[3:].reshape(self.m - 1, 6)
        return nodes

    def unknowns(self, nodes: np.ndarray) -> np.ndarray:
        return np.concatenate([nodes[0, 3:], nodes[1:].ravel()])

    def _residual_from(self, nodes: np.ndarray, ends: np.ndarray) -> np.ndarray:
        continuity = nodes[1:] - ends[:-1]
        return np.concatenate([continuity.ravel(), _boundary_residual(ends[-1], self.target)])

    def residual(self, w: np.ndarray) -> np.ndarray:
        nodes = self.starts(w)
        with np.errstate(over="ignore", invalid="ignore"):
            ends = _rk4(nodes, self.duration, self.steps, self.p)
        res = self._residual_from(nodes, ends)
        return res if np.all(np.isfinite(res)) else np.full_like(res, np.inf)

    def jacobian(self, w: np.ndarray) -> np.ndarray:
        """Central differences, every perturbed segment integrated in one batch"""
        nodes = self.starts(w)
        delta = 1e-6 * (1.0 + np.abs(w))
        batch = [nodes]
        owners = []
        for j in range(self.size):
            segment = 0 if j < 3 else 1 + (j - 3) // 6
            col = 3 + j if j < 3 else (j - 3) % 6
            for sign in (1.0, -1.0):
                moved = nodes[segment].copy()
                moved[col] += sign * delta[j]
                batch.append(moved[None, :])
            owners.append((segment, col))
        with np.errstate(over="ignore", invalid="ignore"):
            ends = _rk4(np.concatenate(batch), self.duration, self.steps, self.p)
        base_ends = ends[:self.m]
        perturbed = ends[self.m:].reshape(self.size, 2, 6)

        J = np.zeros((self.size, self.size))
        n_cont = 6 * (self.m - 1)
        for j, (segment, col) in enumerate(owners):
            d_end = (perturbed[j, 0] - perturbed[j, 1]) / (2.0 * delta[j])
            if segment < self.m - 1:
                J[6 * segment:6 * segment + 6, j] -= d_end
            else:
                # boundary residual is affine in the end point
                J[n_cont:, j] = (_boundary_residual(base_ends[-1] + d_end, self.target)
                                 - _boundary_residual(base_ends[-1], self.target))
            if segment > 0:
                J[6 * (segment - 1) + col, j] += 1.0
        return J

    def assemble(self, w: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
        nodes = self.starts(w)
        pieces = [_rk4(node, self.duration, self.steps, self.p, keep_path=True) for node in nodes]
        points = np.concatenate([pieces[0]] + [piece[1:] for piece in pieces[1:]])
        times = np.linspace(0.0, self.duration * self.m, len(points))
        return times, points


def _newton(problem: _MultipleShooting, w: np.ndarray, tol: float, max_iter: int) -> Tuple[np.ndarray, float, int]:
    """Damped Newton with least-squares steps; returns (w, residual, iterations)"""
    F = problem.residual(w)
    norm = float(np.linalg.norm(F))
    iterations = 0
    while np.max(np.abs(F)) > tol:
        if iterations >= max_iter or not np.isfinite(norm):
            break
        iterations += 1
        step = np.linalg.lstsq(problem.jacobian(w), -F, rcond=None)[0]
        lam = 1.0
        while lam >= 1.0 / 64.0:
            trial = w + lam * step
            F_trial = problem.residual(trial)
            trial_norm = float(np.linalg.norm(F_trial))
            if np.isfinite(trial_norm) and trial_norm < (1.0 - 1e-4 * lam) * norm:
                w, F, norm = trial, F_trial, trial_norm
                break
            lam *= 0.5
        else:
            break
    residual = float(np.max(np.abs(F))) if np.all(np.isfinite(F)) else math.inf
    return w, residual, iterations


def ideal_initial_guess(s0: np.ndarray, target: FinalCondition, T: float, p: MeasurementParams,
                        node_times: np.ndarray) -> Optional[np.ndarray]:
    """
    Phase points at the node times taken from the analytic ideal-channel path,
    or None when the ideal reduction does not apply.
    """
    fixed = dict(target.conditioned())
    if p.eta != 1.0 or p.gamma_phi != 0.0 or abs(s0[2]) > 1e-12 or fixed.get(2, 0.0) != 0.0:
        return None
    if abs(purity_defect(s0)) > 1e-9 or (0 not in fixed and 1 not in fixed):
        return None
    theta0 = float(theta_from_state(s0))
    side = 1.0 if theta0 >= 0.0 else -1.0
    if 0 in fixed:
        theta_f = side * math.acos(min(1.0, max(-1.0, fixed[0] - 1.0)))
    else:
        x_f = min(1.0, max(-1.0, fixed[1]))
        theta_f = math.asin(x_f) if s0[0] >= 1.0 else math.copysign(math.pi, x_f) - math.asin(x_f)
    try:
        ideal = solve_ideal_bvp(theta0, theta_f, T, p.gamma1)
    except (ValueError, BVPConvergenceError) as e:
        logger.info(f"Ideal-channel guess unavailable: {str(e)}")
        return None
    theta = np.interp(node_times, ideal.times, ideal.theta)
    p_theta = np.interp(node_times, ideal.times, ideal.p_theta)
    nodes = np.zeros((len(node_times), 6))
    nodes[:, 0] = 1.0 + np.cos(theta)
    nodes[:, 1] = np.sin(theta)
    nodes[:, 3] = -p_theta * np.sin(theta)
    nodes[:, 4] = p_theta * np.cos(theta)
    return nodes


def solve_mlp_bvp(s0: BlochState, sf: FinalCondition, T: float, p: MeasurementParams,
                  initial_momenta=None, h: float = DEFAULT_STEP, n_segments: Optional[int] = None,
                  tol: float = 1e-9, max_iter: int = 40, max_restarts: int = 3) -> MLPPath:
    """
    Most-likely path from s0 to the final condition sf in time T.

    Args:
        s0: Initial state
        sf: Final condition; free components get natural boundary conditions p_i(T) = 0
        T: Elapsed time
        p: Monitoring channel
        initial_momenta: Optional starting guess for (p_u, p_x, p_y) at t = 0
        h: RK4 step
        n_segments: Shooting segments (default one per 0.25/gamma1)
        tol: Max-norm tolerance on continuity and boundary residuals
        max_iter: Newton iterations per attempt
        max_restarts: Extra attempts from perturbed guesses

    Returns:
        MLPPath with states, momenta, optimal readouts and energies

    Raises:
        ValueError: If T is not positive
        BVPConvergenceError: If no attempt converges
    """
    if T <= 0:
        raise ValueError("T must be positive")
    r0 = s0.as_array()
    m = n_segments or max(1, int(math.ceil(T * p.gamma1 / DEFAULT_SEGMENT)))
    problem = _MultipleShooting(r0, sf, T, p, m, h)
    node_times = np.arange(m) * problem.duration

    guesses = []
    if initial_momenta is not None:
        guesses.append(("given", np.asarray(initial_momenta, dtype=float), None))
    ideal_nodes = ideal_initial_guess(r0, sf, T, p, node_times)
    if ideal_nodes is not None:
        guesses.append(("ideal", ideal_nodes[0, 3:], ideal_nodes))
    guesses.append(("zero", np.zeros(3), None))
    rng = generator_for_seed(0)
    for attempt in range(max_restarts):
        guesses.append((f"restart-{attempt + 1}", rng.normal(scale=0.5 * (attempt + 1), size=3), None))

    best = (None, math.inf, 0)
    for label, momenta, nodes in guesses:
        if nodes is None:
            nodes = _forward_nodes(r0, momenta, problem)
        w, residual, iterations = _newton(problem, problem.unknowns(nodes), tol, max_iter)
        logger.info(f"MLP shooting ({label} guess): residual {residual:.3e} after {iterations} iterations")
        if residual < best[1]:
            best = (w, residual, iterations)
        if residual <= tol:
            break

    w, residual, iterations = best
    if w is None or residual > tol:
        logger.error(f"Error solving MLP boundary-value problem: residual {residual:.3e}")
        raise BVPConvergenceError("Multiple shooting did not converge", residual=residual, iterations=iterations)

    times, points = problem.assemble(w, h)
    I, Q = optimal_readout(points, p)
    energies = optimal_hamiltonian(points, p)
    E = float(energies[0])
    drift = float(np.max(np.abs(energies - E)))
    if not energy_conserved(StochasticEnergy(E=E, drift=drift)):
        logger.warning(f"Stochastic energy drifts by {drift:.3e} along the path")
    return MLPPath(
        times=times,
        points=points,
        readouts=np.column_stack([I, Q]),
        energies=energies,
        energy=StochasticEnergy(E=E, drift=drift),
        residual=residual,
        iterations=iterations,
        method="multiple_shooting",
    )


def energy_conserved(energy: StochasticEnergy) -> bool:
    """True when the energy stays constant along the path to ENERGY_TOL, relative above |E| = 1"""
    return energy.drift <= ENERGY_TOL * max(1.0, abs(energy.E))


def _forward_nodes(r0: np.ndarray, momenta: np.ndarray, problem: _MultipleShooting) -> np.ndarray:
    """Nodes from forward integration of one guess; falls back to constant nodes on blow-up"""
    nodes = np.empty((problem.m, 6))
    nodes[0] = np.concatenate([r0, momenta])
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, problem.m):
            nodes[k] = _rk4(nodes[k - 1], problem.duration, problem.steps, problem.p)
    if not np.all(np.isfinite(nodes)):
        nodes[:] = nodes[0]
    return nodes


def stochastic_action(path: MLPPath, p: MeasurementParams) -> float:
    """∫ (-p . r-dot + H) dt along a solved path"""
    velocity = mlp_rhs(path.points, p)[:, :3]
    integrand = -np.sum(path.momenta * velocity, axis=1) + path.energies
    return float(integrate.trapezoid(integrand, path.times))
