"""
Trajectory Engine for fluortraj
Generates heterodyne-monitored qubit trajectories under the exact Kraus update,
the Stratonovich equations (Heun) or the Ito equations (Euler-Maruyama), and
analyses ensembles of them: moments, post-selection and empirical most-likely paths.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from fluortraj.engines.bloch import StateLike, as_array
from fluortraj.engines.middleware import EngineMiddleware, PhysicalityGuard
from fluortraj.engines.middleware.base import run_after_step
from fluortraj.engines.middleware.guards import STRICT_CLIP_TOLERANCE
from fluortraj.engines.weak_measurement import (
    acceptance_ratio,
    alpha_from_quadratures,
    measurement_update,
    phase_flip,
    propose_alpha,
    quadratures_from_alpha,
)
from fluortraj.models.bloch import BlochState
from fluortraj.models.measurement import MeasurementParams, Sampling, Scheme
from fluortraj.models.trajectory import (
    Ensemble,
    EnsembleStats,
    FinalCondition,
    PostselectionResult,
    Trajectory,
)
from fluortraj.services.rng_service import RNGService, generator_for_seed

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 256


def _split(r: np.ndarray):
    return r[..., 0], r[..., 1], r[..., 2]


def stratonovich_rhs(s: StateLike, I, Q, p: MeasurementParams) -> np.ndarray:
    """
    Physical-form (Stratonovich) equations of motion for a given readout (I, Q).

    Returns:
        (..., 3) array of (du/dt, dx/dt, dy/dt)
    """
    u, x, y = _split(as_array(s))
    I = np.asarray(I, dtype=float)
    Q = np.asarray(Q, dtype=float)
    g1, zeta, eta = p.gamma1, p.zeta, p.eta
    back = x * I + y * Q
    du = -g1 * u * (1.0 - 0.5 * eta * u) - zeta * u * back
    dx = -0.5 * g1 * x * (1.0 - eta * u) - p.gamma_phi * x + zeta * (u * I - x * back)
    dy = -0.5 * g1 * y * (1.0 - eta * u) - p.gamma_phi * y + zeta * (u * Q - y * back)
    return np.stack(np.broadcast_arrays(du, dx, dy), axis=-1)


def ito_drift(s: StateLike, p: MeasurementParams) -> np.ndarray:
    r = as_array(s)
    return r * np.array([-p.gamma1, -p.gamma2, -p.gamma2])


def diffusion_matrix(s: StateLike, p: MeasurementParams) -> np.ndarray:
    """
    Noise matrix multiplying (xi_I, xi_Q) in the Ito equations.

    Returns:
        (..., 3, 2) array
    """
    u, x, y = _split(as_array(s))
    zeta = p.zeta
    out = np.empty(u.shape + (3, 2), dtype=float)
    out[..., 0, 0] = -zeta * u * x
    out[..., 0, 1] = -zeta * u * y
    out[..., 1, 0] = zeta * (u - x * x)
    out[..., 1, 1] = -zeta * x * y
    out[..., 2, 0] = -zeta * x * y
    out[..., 2, 1] = zeta * (u - y * y)
    return out


def ito_rhs(s: StateLike, xi_I, xi_Q, p: MeasurementParams) -> np.ndarray:
    """Ito equations of motion: exponential drift plus the state-dependent noise"""
    r = as_array(s)
    L = diffusion_matrix(r, p)
    xi = np.stack(np.broadcast_arrays(np.asarray(xi_I, dtype=float), np.asarray(xi_Q, dtype=float)), axis=-1)
    return ito_drift(r, p) + np.einsum("...ij,...j->...i", L, xi)


def ito_drift_correction(s: StateLike, p: MeasurementParams) -> np.ndarray:
    """
    Ito drift minus Stratonovich drift, (1/2) sum_jk L_kj dL_ij/dr_k.

    Returns:
        (..., 3) array
    """
    u, x, y = _split(as_array(s))
    z2 = p.zeta ** 2
    rho2 = x * x + y * y
    return np.stack([z2 * u * (rho2 - u), z2 * x * (rho2 - 2.0 * u), z2 * y * (rho2 - 2.0 * u)], axis=-1)


def _heun(r: np.ndarray, xi: np.ndarray, p: MeasurementParams) -> np.ndarray:
    """Heun step of the Stratonovich equations with the readout I = zeta*x + xi re-evaluated at the predictor"""
    zeta, dt = p.zeta, p.dt
    f0 = stratonovich_rhs(r, zeta * r[..., 1] + xi[..., 0], zeta * r[..., 2] + xi[..., 1], p)
    guess = r + f0 * dt
    f1 = stratonovich_rhs(guess, zeta * guess[..., 1] + xi[..., 0], zeta * guess[..., 2] + xi[..., 1], p)
    return r + 0.5 * (f0 + f1) * dt


def _heun_fixed_readout(r: np.ndarray, I, Q, p: MeasurementParams) -> np.ndarray:
    f0 = stratonovich_rhs(r, I, Q, p)
    f1 = stratonovich_rhs(r + f0 * p.dt, I, Q, p)
    return r + 0.5 * (f0 + f1) * p.dt


def theta_rhs(theta, I, p: MeasurementParams):
    """Pure-state angle dynamics for eta = 1 and no extra dephasing"""
    theta = np.asarray(theta, dtype=float)
    return 0.5 * p.gamma1 * np.sin(theta) + math.sqrt(p.gamma1 / 2.0) * (1.0 + np.cos(theta)) * I


def theta_sde_step(theta, I, p: MeasurementParams):
    """
    One Heun step of the angle equation with the readout I held over the step.

    Raises:
        ValueError: If the channel is lossy or dephased
    """
    if p.eta != 1.0 or p.gamma_phi != 0.0:
        raise ValueError("The angle equation needs eta = 1 and gamma_phi = 0")
    k0 = theta_rhs(theta, I, p)
    k1 = theta_rhs(np.asarray(theta) + k0 * p.dt, I, p)
    return np.asarray(theta) + 0.5 * (k0 + k1) * p.dt


def exponential_averages(times, s0: StateLike, p: MeasurementParams) -> np.ndarray:
    """Unconditional means u0 e^{-gamma1 t}, x0 e^{-gamma2 t}, y0 e^{-gamma2 t} as a (T, 3) array"""
    t = np.asarray(times, dtype=float)[:, None]
    r0 = as_array(s0)
    return r0 * np.exp(-t * np.array([p.gamma1, p.gamma2, p.gamma2]))


class _CandidatePool:
    """
    Rejection-sampling candidates drawn from each member's own stream, consumed
    in order, so a member's outcomes never depend on how members are grouped.
    """

    def __init__(self, generators: Sequence[np.random.Generator], n_steps: int):
        self.generators = list(generators)
        self.chunk = 2 * n_steps + 32
        self.refill = n_steps // 4 + 32
        n = len(self.generators)
        self.alpha = np.empty((n, self.chunk), dtype=complex)
        self.unif = np.empty((n, self.chunk), dtype=float)
        for m, gen in enumerate(self.generators):
            self.alpha[m], self.unif[m] = self._draw(gen, self.chunk)
        self.filled = np.full(n, self.chunk, dtype=int)
        self.pointer = np.zeros(n, dtype=int)

    @staticmethod
    def _draw(gen: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        alpha = propose_alpha(gen, n)
        return alpha, gen.random(n)

    def _ensure(self, rows: np.ndarray) -> None:
        for m in rows[self.pointer[rows] >= self.filled[rows]]:
            end = self.filled[m] + self.refill
            if end > self.alpha.shape[1]:
                width = max(end, 2 * self.alpha.shape[1]) - self.alpha.shape[1]
                self.alpha = np.pad(self.alpha, ((0, 0), (0, width)))
                self.unif = np.pad(self.unif, ((0, 0), (0, width)), constant_values=1.0)
            alpha, unif = self._draw(self.generators[m], self.refill)
            self.alpha[m, self.filled[m]:end] = alpha
            self.unif[m, self.filled[m]:end] = unif
            self.filled[m] = end

    def draw(self, r: np.ndarray, eps: float, eta: float) -> np.ndarray:
        """One exact outcome per member for the states r (N, 3)"""
        chosen = np.empty(len(self.generators), dtype=complex)
        active = np.arange(len(self.generators))
        while active.size:
            self._ensure(active)
            cols = self.pointer[active]
            alpha = self.alpha[active, cols]
            accept = self.unif[active, cols] < acceptance_ratio(r[active], alpha, eps, eta)
            chosen[active[accept]] = alpha[accept]
            self.pointer[active] += 1
            active = active[~accept]
        return chosen


def default_clip_tolerance(params: MeasurementParams, scheme: Scheme) -> float:
    """
    Largest overshoot an SDE step may have before it counts as an integration failure.

    The exact update stays in the ball up to rounding and keeps the strict 1e-6.
    SDE schemes allow one step of measurement strength, eta * gamma1 * dt.
    """
    if Scheme(scheme) is Scheme.EXACT:
        return STRICT_CLIP_TOLERANCE
    return max(STRICT_CLIP_TOLERANCE, params.eta * params.epsilon)


class TrajectoryEngine:
    """
    Engine that integrates trajectories for one monitoring channel and scheme.

    Ensemble members are stepped together in chunks; member k always uses the
    stream keyed by its own seed, so results do not depend on chunking or threads.
    """

    def __init__(self,
                 params: MeasurementParams,
                 scheme: Scheme = Scheme.EXACT,
                 sampling: Sampling = Sampling.GAUSSIAN,
                 middleware: Optional[List[EngineMiddleware]] = None,
                 clip_tolerance: Optional[float] = None,
                 max_workers: Optional[int] = None,
                 chunk_size: int = DEFAULT_CHUNK_SIZE):
        """
        Args:
            params: Monitoring channel
            scheme: Integration scheme
            sampling: Outcome law for the exact scheme
            middleware: Hooks run around each step; a PhysicalityGuard is added if absent
            clip_tolerance: Overshoot the default guard projects back onto the Bloch ball;
                defaults to default_clip_tolerance(params, scheme)
            max_workers: Threads for ensemble generation
            chunk_size: Members stepped together per task
        """
        if chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        self.params = params
        self.scheme = Scheme(scheme)
        self.sampling = Sampling(sampling)
        self.middleware = list(middleware or [])
        if not any(isinstance(m, PhysicalityGuard) for m in self.middleware):
            if clip_tolerance is None:
                clip_tolerance = default_clip_tolerance(params, self.scheme)
            self.middleware.append(PhysicalityGuard(clip_tolerance=clip_tolerance))
        self.max_workers = max_workers or 1
        self.chunk_size = chunk_size

    @property
    def physicality_guard(self) -> PhysicalityGuard:
        return next(m for m in self.middleware if isinstance(m, PhysicalityGuard))

    def times(self, n_steps: int) -> np.ndarray:
        return np.arange(n_steps + 1) * self.params.dt

    def _run_chunk(self, r0: np.ndarray, seeds: Sequence[int], n_steps: int,
                   noise_free: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.params
        n = len(seeds)
        generators = [generator_for_seed(seed) for seed in seeds]
        kraus = self.scheme is Scheme.EXACT and self.sampling is Sampling.KRAUS and not noise_free
        pool = _CandidatePool(generators, n_steps) if kraus else None
        if noise_free or kraus:
            noise = np.zeros((n, n_steps, 2))
        else:
            noise = np.stack([g.standard_normal((n_steps, 2)) for g in generators]) / math.sqrt(p.dt)

        states = np.empty((n, n_steps + 1, 3))
        readouts = np.empty((n, n_steps, 2))
        states[:, 0] = r0
        r = np.tile(r0, (n, 1))
        for k in range(n_steps):
            mean = p.zeta * r[:, 1:]
            if kraus:
                alpha = pool.draw(r, p.epsilon, p.eta)
                I, Q = quadratures_from_alpha(alpha, p.dt)
                readouts[:, k, 0], readouts[:, k, 1] = I, Q
                noise[:, k] = readouts[:, k] - mean
            else:
                readouts[:, k] = mean + noise[:, k]

            if self.scheme is Scheme.EXACT:
                if not kraus:
                    alpha = alpha_from_quadratures(readouts[:, k, 0], readouts[:, k, 1], p.dt)
                updated, _ = measurement_update(r, alpha, p.epsilon, p.eta)
                updated = phase_flip(updated, p)
            elif self.scheme is Scheme.ITO:
                updated = r + ito_rhs(r, noise[:, k, 0], noise[:, k, 1], p) * p.dt
            else:
                updated = _heun(r, noise[:, k], p)

            r = run_after_step(self.middleware, updated, k + 1)
            states[:, k + 1] = r
        return states, readouts, noise

    def _context(self, s0: np.ndarray, n_steps: int, n_trajectories: int) -> dict:
        return {
            "params": self.params,
            "scheme": self.scheme.value,
            "sampling": self.sampling.value,
            "initial": s0.tolist(),
            "n_steps": n_steps,
            "n_trajectories": n_trajectories,
        }

    def simulate_trajectory(self, s0: StateLike, n_steps: int, seed: int,
                            noise_free: bool = False) -> Trajectory:
        """
        Integrate one trajectory.

        Args:
            s0: Physical initial state
            n_steps: Number of steps of size params.dt
            seed: Stream key; identical inputs give bit-identical output
            noise_free: Force xi = 0 on every step

        Raises:
            ValueError: If s0 is not physical or n_steps is negative
            IntegrationFailure: If an SDE scheme leaves the Bloch ball beyond tolerance
        """
        r0 = self._initial(s0, n_steps)
        for hook in self.middleware:
            hook.before_run(self._context(r0, n_steps, 1))
        states, readouts, noise = self._run_chunk(r0, [seed], n_steps, noise_free)
        for hook in self.middleware:
            hook.after_run({"n_trajectories": 1, "seed": seed})
        return Trajectory(
            times=self.times(n_steps),
            states=states[0],
            readouts=readouts[0],
            noises=noise[0],
            seed=seed,
            scheme=self.scheme,
        )

    def simulate_ensemble(self, s0: StateLike, n_steps: int, n_trajectories: int,
                          base_seed: int = 0) -> Ensemble:
        """
        Integrate n_trajectories members with seeds base_seed + k.

        Raises:
            ValueError: If the ensemble would be empty
            IntegrationFailure: If any member leaves the Bloch ball beyond tolerance
        """
        if n_trajectories < 1:
            raise ValueError("An ensemble needs at least one trajectory")
        r0 = self._initial(s0, n_steps)
        seeds = np.asarray(RNGService(base_seed).member_seeds(n_trajectories), dtype=np.int64)
        logger.info(
            f"Simulating {n_trajectories} trajectories ({self.scheme.value}, {n_steps} steps, "
            f"{self.max_workers} workers)"
        )
        for hook in self.middleware:
            hook.before_run(self._context(r0, n_steps, n_trajectories))

        states = np.empty((n_trajectories, n_steps + 1, 3))
        readouts = np.empty((n_trajectories, n_steps, 2))
        noises = np.empty((n_trajectories, n_steps, 2))
        slices = [slice(i, min(i + self.chunk_size, n_trajectories))
                  for i in range(0, n_trajectories, self.chunk_size)]

        def work(sl: slice) -> None:
            chunk = self._run_chunk(r0, seeds[sl].tolist(), n_steps, False)
            states[sl], readouts[sl], noises[sl] = chunk

        try:
            if self.max_workers > 1 and len(slices) > 1:
                with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                    list(executor.map(work, slices))
            else:
                for sl in slices:
                    work(sl)
        except Exception as e:
            logger.error(f"Error simulating ensemble: {str(e)}")
            raise

        summary = {"n_trajectories": n_trajectories, "base_seed": base_seed}
        for hook in self.middleware:
            hook.after_run(summary)
        return Ensemble(
            times=self.times(n_steps),
            states=states,
            readouts=readouts,
            noises=noises,
            seeds=seeds,
            params=self.params,
            initial=BlochState.from_array(r0),
            scheme=self.scheme,
        )

    @staticmethod
    def _initial(s0: StateLike, n_steps: int) -> np.ndarray:
        if n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        r0 = np.array(as_array(s0), dtype=float)
        if not BlochState.from_array(r0).is_physical():
            raise ValueError(f"Initial state {r0.tolist()} is not physical")
        return r0


def simulate_trajectory(s0: StateLike, p: MeasurementParams, scheme: Scheme, n_steps: int, seed: int,
                        sampling: Sampling = Sampling.GAUSSIAN, noise_free: bool = False,
                        middleware: Optional[List[EngineMiddleware]] = None) -> Trajectory:
    engine = TrajectoryEngine(p, scheme=scheme, sampling=sampling, middleware=middleware)
    return engine.simulate_trajectory(s0, n_steps, seed, noise_free=noise_free)


def simulate_ensemble(s0: StateLike, p: MeasurementParams, scheme: Scheme, n_steps: int,
                      n_trajectories: int, base_seed: int = 0,
                      sampling: Sampling = Sampling.GAUSSIAN, threads: Optional[int] = None,
                      middleware: Optional[List[EngineMiddleware]] = None) -> Ensemble:
    engine = TrajectoryEngine(p, scheme=scheme, sampling=sampling, middleware=middleware, max_workers=threads)
    return engine.simulate_ensemble(s0, n_steps, n_trajectories, base_seed)


def filter_record(s0: StateLike, readouts, p: MeasurementParams,
                  method: Scheme = Scheme.EXACT, seed: int = 0) -> Trajectory:
    """
    Reconstruct the conditional state from a measured (I, Q) record.

    Args:
        s0: Initial state
        readouts: (n_steps, 2) record
        p: Monitoring channel
        method: EXACT (Kraus update plus dephasing) or STRATONOVICH (Heun, record held per step)
        seed: Label stored on the returned trajectory

    Raises:
        InvalidOutcomeError: If a recorded outcome has zero probability for the filtered state
    """
    method = Scheme(method)
    if method is Scheme.ITO:
        raise ValueError("Records are filtered with the exact or Stratonovich update")
    record = np.asarray(readouts, dtype=float)
    if record.ndim != 2 or record.shape[1] != 2:
        raise ValueError("readouts must have shape (n_steps, 2)")
    n_steps = len(record)
    states = np.empty((n_steps + 1, 3))
    states[0] = as_array(s0)
    for k in range(n_steps):
        I, Q = record[k]
        if method is Scheme.EXACT:
            updated, _ = measurement_update(states[k], complex(alpha_from_quadratures(I, Q, p.dt)), p.epsilon, p.eta)
            states[k + 1] = phase_flip(updated, p)
        else:
            states[k + 1] = _heun_fixed_readout(states[k], I, Q, p)
    noises = record - p.zeta * states[:-1, 1:]
    return Trajectory(
        times=np.arange(n_steps + 1) * p.dt,
        states=states,
        readouts=record,
        noises=noises,
        seed=seed,
        scheme=method,
    )


def ensemble_stats(e: Ensemble) -> EnsembleStats:
    """Pointwise sample mean, variance (ddof=1) and standard error of (u, x, y)"""
    n = len(e)
    mean = e.states.mean(axis=0)
    variance = e.states.var(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    return EnsembleStats(
        times=e.times,
        mean=mean,
        variance=variance,
        stderr=np.sqrt(variance / n),
        n_trajectories=n,
    )


def postselect(e: Ensemble, target: FinalCondition, tolerance: float) -> PostselectionResult:
    """
    Keep members whose final state matches every conditioned component within tolerance.

    An empty selection is reported through the result status.
    """
    if not tolerance > 0.0:
        raise ValueError("tolerance must be positive")
    keep = np.ones(len(e), dtype=bool)
    final = e.final_states
    for index, value in target.conditioned():
        keep &= np.abs(final[:, index] - value) <= tolerance
    indices = np.flatnonzero(keep)
    fraction = len(indices) / len(e)
    logger.info(f"Post-selection kept {len(indices)} of {len(e)} trajectories")
    if len(indices) == 0:
        return PostselectionResult(status="empty", indices=indices, fraction=0.0)
    return PostselectionResult(status="ok", ensemble=e.subset(indices), indices=indices, fraction=fraction)


def mean_trace_distances(states: np.ndarray, block_bytes: int = 32 * 2 ** 20) -> np.ndarray:
    """
    Time-averaged trace distance from each member to every other member.

    Args:
        states: (N, T, 3) array

    Returns:
        (N,) array of mean distances over the other N-1 members
    """
    n, t, _ = states.shape
    block = max(1, block_bytes // (8 * n * t * 3))
    score = np.empty(n)
    for start in range(0, n, block):
        rows = states[start:start + block]
        diff = rows[:, None, :, :] - states[None, :, :, :]
        distance = 0.5 * np.sqrt(np.sum(diff ** 2, axis=-1))
        score[start:start + block] = distance.mean(axis=-1).sum(axis=-1) / (n - 1)
    return score


def empirical_mlp(sub: Ensemble) -> Trajectory:
    """
    Member with the smallest time-averaged trace distance to the rest (uniform weights,
    lowest seed on ties).
    """
    if len(sub) < 2:
        raise ValueError("empirical_mlp needs at least two trajectories")
    score = mean_trace_distances(sub.states)
    tied = np.flatnonzero(score == score.min())
    best = int(tied[np.argmin(sub.seeds[tied])])
    return sub.trajectory(best)


def band_coverage(reference, stats: EnsembleStats, component: int = 0, width: float = 1.0,
                  center=None) -> float:
    """
    Fraction of grid times where a reference curve lies within width standard
    deviations of the band center (the ensemble mean unless given) for one state component.
    """
    reference = np.asarray(reference, dtype=float)
    if reference.ndim == 2:
        reference = reference[:, component]
    middle = stats.mean[:, component] if center is None else np.asarray(center, dtype=float)
    if middle.ndim == 2:
        middle = middle[:, component]
    sd = np.sqrt(stats.variance[:, component])
    inside = np.abs(reference - middle) <= width * sd + 1e-12
    return float(np.mean(inside))
