"""
SME Engine for fluortraj
Diffusive stochastic master equations for an n-level system with m monitored
channels: positivity-preserving discrete stepping, outcome sampling, the
first-order superoperators and the adjoint most-likely-path equations.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from fluortraj.engines.bloch import StateLike, as_array
from fluortraj.engines.errors import InvalidOutcomeError, IntegrationFailure
from fluortraj.engines.middleware import EngineMiddleware, RegimeGuard
from fluortraj.models.bloch import PHYSICALITY_TOL
from fluortraj.models.operators import (
    AdjointState,
    Channel,
    GeneralState,
    OperatorSet,
    SMEEnsemble,
    SMETrajectory,
)
from fluortraj.services.rng_service import RNGService, generator_for_seed

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
DEFAULT_CHUNK_SIZE = 256


def _dag(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.conj(m), -1, -2)


def _tr(m: np.ndarray):
    return np.trace(m, axis1=-2, axis2=-1)


def _matrix(value) -> np.ndarray:
    if isinstance(value, GeneralState):
        return value.rho
    if isinstance(value, AdjointState):
        return value.xi
    return np.asarray(value, dtype=complex)


def _readout_vector(r, ops: OperatorSet) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-1:] != (ops.n_channels,):
        raise ValueError(f"Expected {ops.n_channels} outcomes, got shape {r.shape}")
    return r


class RouchonStepper:
    """
    Normalized Kraus map for one step of size dt.

    M_r = I - (iH + sum L^dag L / 2) dt + sum sqrt(eta) r L dt, and
    R = I + A^dag A dt^2 with A = iH + sum L^dag L / 2; both M_r and the
    unobserved-loss operators are right-multiplied by R^{-1/2}, which makes
    the outcome density integrate to one for every dt.
    """

    def __init__(self, ops: OperatorSet, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.ops = ops
        self.dt = dt
        n = ops.dim
        eye = np.eye(n, dtype=complex)
        ls = np.array([c.L for c in ops.channels], dtype=complex).reshape(-1, n, n)
        etas = ops.etas
        A = 1j * ops.H + 0.5 * np.einsum("kji,kjl->il", ls.conj(), ls)
        R = eye + _dag(A) @ A * dt ** 2
        w, V = np.linalg.eigh(0.5 * (R + _dag(R)))
        if w.min() <= 0.0:
            raise ValueError("Normalization operator R is singular")
        self.r_inv_sqrt = (V / np.sqrt(w)) @ _dag(V)
        self.m0 = (eye - A * dt) @ self.r_inv_sqrt
        self.m_r = np.sqrt(etas)[:, None, None] * ls * dt @ self.r_inv_sqrt
        self.lost = np.sqrt((1.0 - etas) * dt)[:, None, None] * ls @ self.r_inv_sqrt
        self.sqrt_eta = np.sqrt(etas)
        self.ls = ls

    @property
    def n_channels(self) -> int:
        return self.ls.shape[0]

    def unnormalized(self, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
        """M~ rho M~^dag + sum (1 - eta) L~ rho L~^dag dt, batched over leading axes"""
        K = self.m0 + np.einsum("...k,kij->...ij", r, self.m_r)
        out = K @ rho @ _dag(K)
        if self.n_channels:
            out = out + np.einsum("kij,...jl,kml->...im", self.lost, rho, self.lost.conj())
        return out

    def step(self, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
        """
        Raises:
            InvalidOutcomeError: If the unnormalized trace is not positive
        """
        out = self.unnormalized(rho, r)
        trace = _tr(out).real
        if np.any(~np.isfinite(trace)) or np.any(trace <= 0.0):
            raise InvalidOutcomeError("Outcome leaves a non-positive trace")
        out = out / trace[..., None, None]
        return 0.5 * (out + _dag(out))

    def quadratic_form(self, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Coefficients of the trace weight q(r) = a + b.r + r^T C r.

        Returns:
            (a, b, C) with shapes (...), (..., m), (..., m, m)
        """
        a = _tr(self.m0 @ rho @ _dag(self.m0)).real
        if self.n_channels:
            a = a + np.einsum("kij,...jl,kil->...", self.lost, rho, self.lost.conj()).real
        b = 2.0 * np.einsum("kij,...jl,il->...k", self.m_r, rho, self.m0.conj()).real
        C = np.einsum("kij,...jl,qil->...kq", self.m_r, rho, self.m_r.conj()).real
        return a, b, C

    def weight(self, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
        return _tr(self.unnormalized(rho, r)).real

    def density(self, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Outcome density with respect to dr"""
        r = np.asarray(r, dtype=float)
        gauss = np.prod(np.sqrt(self.dt / (2.0 * math.pi)) * np.exp(-0.5 * r ** 2 * self.dt), axis=-1)
        return self.weight(rho, r) * gauss

    def mean_signal(self, rho: np.ndarray) -> np.ndarray:
        """sqrt(eta) tr((L + L^dag) rho) per channel"""
        return self.sqrt_eta * 2.0 * np.einsum("kij,...ji->...k", self.ls, rho).real

    def envelope(self, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Constants with q(r) <= c0 + c2 |r|^2, built from |b| |r| <= |b| (s + |r|^2 / s) / 2
        at the noise scale s = dt^{-1/2}.
        """
        a, b, C = self.quadratic_form(rho)
        s = 1.0 / math.sqrt(self.dt)
        nb = np.linalg.norm(b, axis=-1)
        top = np.maximum(np.linalg.eigvalsh(C)[..., -1], 0.0) if self.n_channels else np.zeros_like(a)
        return a + 0.5 * nb * s, 0.5 * nb / s + top


def rouchon_step(rho, r, dt: float, ops: OperatorSet) -> np.ndarray:
    """
    One positivity-preserving step for outcome vector r.

    Raises:
        ValueError: If r has the wrong length or R is singular
        InvalidOutcomeError: If the unnormalized trace is not positive
    """
    return RouchonStepper(ops, dt).step(_matrix(rho), _readout_vector(r, ops))


def outcome_density(rho, r, dt: float, ops: OperatorSet) -> np.ndarray:
    """Exact density of the outcome vector r, vectorized over leading axes of r"""
    return RouchonStepper(ops, dt).density(_matrix(rho), _readout_vector(r, ops))


def _mixture_draw(stepper: RouchonStepper, rho: np.ndarray, gauss: np.ndarray, chi2: np.ndarray,
                  pick: np.ndarray) -> np.ndarray:
    """
    Map raw randomness onto a proposal from g(r)(c0 + c2 |r|^2), g the N(0, 1/dt) law.

    The |r|^2 component has radius^2 dt ~ chi^2 with m + 2 degrees of freedom.
    """
    m = stepper.n_channels
    dt = stepper.dt
    c0, c2 = stepper.envelope(rho)
    w0 = c0
    w2 = c2 * m / dt
    plain = gauss / math.sqrt(dt)
    norm = np.linalg.norm(gauss, axis=-1, keepdims=True)
    direction = gauss / np.where(norm > 0.0, norm, 1.0)
    shell = direction * np.asarray(np.sqrt(chi2 / dt))[..., None]
    first = np.asarray(pick < w0 / (w0 + w2))
    return np.where(first[..., None], plain, shell)


def _acceptance(stepper: RouchonStepper, rho: np.ndarray, r: np.ndarray) -> np.ndarray:
    c0, c2 = stepper.envelope(rho)
    return stepper.weight(rho, r) / (c0 + c2 * np.sum(r ** 2, axis=-1))


def sample_outcomes(rho, dt: float, ops: OperatorSet, rng: np.random.Generator,
                    exact: bool = True) -> np.ndarray:
    """
    Draw the outcome vector for one step.

    Args:
        rho: Valid density matrix
        exact: Rejection sampling from the exact density; False draws
            r ~ Normal(sqrt(eta) tr((L + L^dag) rho), 1/dt), which is correct to O(dt)

    Returns:
        Length-m outcome vector
    """
    stepper = RouchonStepper(ops, dt)
    return _draw_one(stepper, _matrix(rho), rng, exact)


def _draw_one(stepper: RouchonStepper, rho: np.ndarray, rng: np.random.Generator, exact: bool) -> np.ndarray:
    m = stepper.n_channels
    if m == 0:
        return np.zeros(0)
    if not exact:
        return stepper.mean_signal(rho) + rng.standard_normal(m) / math.sqrt(stepper.dt)
    while True:
        gauss = rng.standard_normal(m)
        chi2 = rng.chisquare(m + 2)
        pick, u = rng.random(2)
        r = _mixture_draw(stepper, rho, gauss, np.asarray(chi2), np.asarray(pick))
        if u < _acceptance(stepper, rho, r):
            return r


class _OutcomePool:
    """
    Raw proposal randomness per member, drawn from the member's own stream and
    consumed in order, so outcomes never depend on how members are grouped.
    """

    def __init__(self, generators: Sequence[np.random.Generator], m: int, n_steps: int):
        self.generators = list(generators)
        self.m = m
        self.refill = n_steps // 4 + 32
        n = len(self.generators)
        size = n_steps + n_steps // 2 + 32
        self.gauss = np.empty((n, size, m))
        self.chi2 = np.empty((n, size))
        self.pick = np.empty((n, size))
        self.unif = np.empty((n, size))
        for k, gen in enumerate(self.generators):
            self._fill(k, 0, size)
        self.filled = np.full(n, size, dtype=int)
        self.pointer = np.zeros(n, dtype=int)

    def _fill(self, k: int, start: int, count: int) -> None:
        gen = self.generators[k]
        self.gauss[k, start:start + count] = gen.standard_normal((count, self.m))
        self.chi2[k, start:start + count] = gen.chisquare(self.m + 2, count)
        self.pick[k, start:start + count] = gen.random(count)
        self.unif[k, start:start + count] = gen.random(count)

    def _ensure(self, rows: np.ndarray) -> None:
        for k in rows[self.pointer[rows] >= self.filled[rows]]:
            end = self.filled[k] + self.refill
            if end > self.gauss.shape[1]:
                width = max(end, 2 * self.gauss.shape[1]) - self.gauss.shape[1]
                self.gauss = np.pad(self.gauss, ((0, 0), (0, width), (0, 0)))
                self.chi2 = np.pad(self.chi2, ((0, 0), (0, width)))
                self.pick = np.pad(self.pick, ((0, 0), (0, width)))
                self.unif = np.pad(self.unif, ((0, 0), (0, width)), constant_values=1.0)
            self._fill(k, self.filled[k], self.refill)
            self.filled[k] = end

    def draw(self, stepper: RouchonStepper, rho: np.ndarray) -> np.ndarray:
        """One exact outcome vector per member for the states rho (N, n, n)"""
        chosen = np.empty((len(self.generators), self.m))
        active = np.arange(len(self.generators))
        while active.size:
            self._ensure(active)
            cols = self.pointer[active]
            r = _mixture_draw(stepper, rho[active], self.gauss[active, cols], self.chi2[active, cols],
                              self.pick[active, cols])
            accept = self.unif[active, cols] < _acceptance(stepper, rho[active], r)
            chosen[active[accept]] = r[accept]
            self.pointer[active] += 1
            active = active[~accept]
        return chosen


class SMEEngine:
    """
    Engine that steps density matrices under one operator set.

    Member k of an ensemble always draws from the stream keyed by its own seed.
    """

    def __init__(self,
                 ops: OperatorSet,
                 dt: float,
                 exact_sampling: bool = True,
                 middleware: Optional[List[EngineMiddleware]] = None,
                 max_workers: Optional[int] = None,
                 chunk_size: int = DEFAULT_CHUNK_SIZE):
        """
        Args:
            ops: Hamiltonian and monitored channels
            dt: Step size
            exact_sampling: Rejection sampling from the exact outcome density
            middleware: Hooks run before and after each run; a RegimeGuard is added if absent
            max_workers: Threads for ensemble generation
            chunk_size: Members stepped together per task
        """
        if chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        self.ops = ops
        self.dt = dt
        self.stepper = RouchonStepper(ops, dt)
        self.exact_sampling = exact_sampling
        self.middleware = list(middleware or [])
        if not any(isinstance(m, RegimeGuard) for m in self.middleware):
            self.middleware.append(RegimeGuard())
        self.max_workers = max_workers or 1
        self.chunk_size = chunk_size

    def times(self, n_steps: int) -> np.ndarray:
        return np.arange(n_steps + 1) * self.dt

    def _initial(self, rho0, n_steps: int) -> np.ndarray:
        if n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        rho = GeneralState(rho=_matrix(rho0)).rho
        if rho.shape != (self.ops.dim, self.ops.dim):
            raise ValueError(f"rho0 has shape {rho.shape}, operators act on dimension {self.ops.dim}")
        return rho

    def _run_chunk(self, rho0: np.ndarray, seeds: Sequence[int], n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
        n = len(seeds)
        m = self.stepper.n_channels
        generators = [generator_for_seed(seed) for seed in seeds]
        pool = _OutcomePool(generators, m, n_steps) if self.exact_sampling and m else None
        if pool is None:
            noise = np.stack([g.standard_normal((n_steps, m)) for g in generators]) / math.sqrt(self.dt)

        rhos = np.empty((n, n_steps + 1) + rho0.shape, dtype=complex)
        readouts = np.empty((n, n_steps, m))
        rho = np.broadcast_to(rho0, (n,) + rho0.shape).copy()
        rhos[:, 0] = rho
        for k in range(n_steps):
            if pool is not None:
                r = pool.draw(self.stepper, rho)
            else:
                r = self.stepper.mean_signal(rho) + noise[:, k]
            readouts[:, k] = r
            try:
                rho = self.stepper.step(rho, r)
            except InvalidOutcomeError as e:
                logger.error(f"Error stepping density matrices: {str(e)}")
                raise IntegrationFailure(str(e), step=k + 1) from e
            floor = np.linalg.eigvalsh(rho)[:, 0].min()
            if floor < -PHYSICALITY_TOL:
                raise IntegrationFailure(f"Eigenvalue {floor:.3e} below the positivity floor", step=k + 1)
            rhos[:, k + 1] = rho
        return rhos, readouts

    def _context(self, n_steps: int, n_trajectories: int) -> dict:
        return {
            "operators": self.ops,
            "dt": self.dt,
            "dim": self.ops.dim,
            "n_channels": self.ops.n_channels,
            "exact_sampling": self.exact_sampling,
            "n_steps": n_steps,
            "n_trajectories": n_trajectories,
        }

    def simulate(self, rho0, n_steps: int, seed: int) -> SMETrajectory:
        """
        Generate one trajectory with seed as its stream key.

        Raises:
            ValueError: If rho0 is not a valid density matrix of the right dimension
            IntegrationFailure: If a step produces a non-positive trace
        """
        rho = self._initial(rho0, n_steps)
        for hook in self.middleware:
            hook.before_run(self._context(n_steps, 1))
        rhos, readouts = self._run_chunk(rho, [seed], n_steps)
        for hook in self.middleware:
            hook.after_run({"n_trajectories": 1, "seed": seed})
        return SMETrajectory(times=self.times(n_steps), rhos=rhos[0], readouts=readouts[0],
                             seed=seed, exact_sampling=self.exact_sampling)

    def simulate_ensemble(self, rho0, n_steps: int, n_trajectories: int, base_seed: int = 0) -> SMEEnsemble:
        """Generate members with seeds base_seed + k; bit-identical for any thread count"""
        if n_trajectories < 1:
            raise ValueError("An ensemble needs at least one trajectory")
        rho = self._initial(rho0, n_steps)
        seeds = np.asarray(RNGService(base_seed).member_seeds(n_trajectories), dtype=np.int64)
        logger.info(
            f"Simulating {n_trajectories} density-matrix trajectories (dim {self.ops.dim}, "
            f"{self.ops.n_channels} channels, {n_steps} steps)"
        )
        for hook in self.middleware:
            hook.before_run(self._context(n_steps, n_trajectories))

        m = self.stepper.n_channels
        rhos = np.empty((n_trajectories, n_steps + 1) + rho.shape, dtype=complex)
        readouts = np.empty((n_trajectories, n_steps, m))
        slices = [slice(i, min(i + self.chunk_size, n_trajectories))
                  for i in range(0, n_trajectories, self.chunk_size)]

        def work(sl: slice) -> None:
            rhos[sl], readouts[sl] = self._run_chunk(rho, seeds[sl].tolist(), n_steps)

        try:
            if self.max_workers > 1 and len(slices) > 1:
                with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                    list(executor.map(work, slices))
            else:
                for sl in slices:
                    work(sl)
        except Exception as e:
            logger.error(f"Error simulating density-matrix ensemble: {str(e)}")
            raise

        for hook in self.middleware:
            hook.after_run({"n_trajectories": n_trajectories, "base_seed": base_seed})
        return SMEEnsemble(times=self.times(n_steps), rhos=rhos, readouts=readouts, seeds=seeds,
                           exact_sampling=self.exact_sampling)


def simulate_sme(rho0, ops: OperatorSet, dt: float, n_steps: int, seed: int,
                 exact_sampling: bool = True,
                 middleware: Optional[List[EngineMiddleware]] = None) -> SMETrajectory:
    return SMEEngine(ops, dt, exact_sampling=exact_sampling, middleware=middleware).simulate(rho0, n_steps, seed)


def lindblad(rho, ops: OperatorSet) -> np.ndarray:
    """-i[H, rho] + sum (L rho L^dag - {L^dag L, rho} / 2)"""
    rho = _matrix(rho)
    out = -1j * (ops.H @ rho - rho @ ops.H)
    for c in ops.channels:
        L = c.L
        LdL = _dag(L) @ L
        out = out + L @ rho @ _dag(L) - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def _innovation(rho: np.ndarray, L: np.ndarray) -> np.ndarray:
    """L rho + rho L^dag - tr(L rho + rho L^dag) rho"""
    kick = L @ rho + rho @ _dag(L)
    return kick - _tr(kick)[..., None, None] * rho


def drift_superop(rho, r, ops: OperatorSet) -> np.ndarray:
    """First-order increment (rho_{t+dt} - rho_t)/dt for outcome vector r"""
    rho = _matrix(rho)
    r = _readout_vector(r, ops)
    out = lindblad(rho, ops)
    for nu, c in enumerate(ops.channels):
        if c.eta == 0.0:
            continue
        L = c.L
        LrL = L @ rho @ _dag(L)
        out = out + c.eta * (_tr(LrL) * rho - LrL)
        out = out + r[nu] * math.sqrt(c.eta) * _innovation(rho, L)
    return out


def ito_coefficients(rho, ops: OperatorSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    Drift and per-channel diffusion of the Ito form
    d rho = drift dt + sum_nu diffusion_nu dW_nu.

    Returns:
        (drift (n, n), diffusion (m, n, n))
    """
    rho = _matrix(rho)
    diffusion = np.array([math.sqrt(c.eta) * _innovation(rho, c.L) for c in ops.channels], dtype=complex)
    return lindblad(rho, ops), diffusion.reshape((-1,) + rho.shape)


def log_likelihood_rate(rho, r, ops: OperatorSet) -> float:
    """Per-unit-time log weight sum(-r^2/2 + r sqrt(eta) tr(L rho + rho L^dag) - eta tr(L rho L^dag))"""
    rho = _matrix(rho)
    r = _readout_vector(r, ops)
    total = 0.0
    for nu, c in enumerate(ops.channels):
        L = c.L
        signal = _tr(L @ rho + rho @ _dag(L)).real
        total += -0.5 * r[nu] ** 2 + r[nu] * math.sqrt(c.eta) * signal - c.eta * _tr(L @ rho @ _dag(L)).real
    return float(total)


def log_likelihood(rho, r, ops: OperatorSet, dt: float) -> float:
    """First-order log of the outcome weight for one step of size dt"""
    return log_likelihood_rate(rho, r, ops) * dt


def general_stochastic_hamiltonian(xi, rho, r, ops: OperatorSet) -> float:
    """tr(xi L(rho, r)) plus the per-unit-time log weight"""
    xi = _matrix(xi)
    flow = _tr(xi @ drift_superop(rho, r, ops)).real
    return float(flow + log_likelihood_rate(rho, r, ops))


def stationary_readout(xi, rho, ops: OperatorSet) -> np.ndarray:
    """r_nu = sqrt(eta_nu)[tr(xi (L rho + rho L^dag)) - tr(L rho + rho L^dag)(tr(xi rho) - 1)]"""
    xi = _matrix(xi)
    rho = _matrix(rho)
    overlap = _tr(xi @ rho).real - 1.0
    out = np.empty(ops.n_channels)
    for nu, c in enumerate(ops.channels):
        kick = c.L @ rho + rho @ _dag(c.L)
        out[nu] = math.sqrt(c.eta) * (_tr(xi @ kick).real - _tr(kick).real * overlap)
    return out


def adjoint_rhs(xi, rho, r, ops: OperatorSet) -> np.ndarray:
    """
    d xi/dt = -dH/d rho for the stochastic Hamiltonian at fixed r.

    The loss term pairs (tr(xi rho) - 1) with L^dag L of the same channel.
    """
    xi = _matrix(xi)
    rho = _matrix(rho)
    r = _readout_vector(r, ops)
    overlap = _tr(xi @ rho).real - 1.0
    out = -1j * (ops.H @ xi - xi @ ops.H)
    for nu, c in enumerate(ops.channels):
        L = c.L
        Ld = _dag(L)
        LdL = Ld @ L
        out = out - (Ld @ xi @ L - 0.5 * (LdL @ xi + xi @ LdL))
        if c.eta == 0.0:
            continue
        out = out - c.eta * (_tr(L @ rho @ Ld).real * xi + overlap * LdL - Ld @ xi @ L)
        signal = _tr(L @ rho + rho @ Ld).real
        out = out - r[nu] * math.sqrt(c.eta) * (xi @ L + Ld @ xi - signal * xi - overlap * (L + Ld))
    return 0.5 * (out + _dag(out))


def _coupled_rhs(rho: np.ndarray, xi: np.ndarray, ops: OperatorSet) -> Tuple[np.ndarray, np.ndarray]:
    r = stationary_readout(xi, rho, ops)
    return drift_superop(rho, r, ops), adjoint_rhs(xi, rho, r, ops)


def integrate_adjoint_path(rho0, xi0, T: float, ops: OperatorSet, h: float = 1e-3) -> Dict[str, np.ndarray]:
    """
    RK4 co-integration of (rho, xi) with the stationary readout.

    Returns:
        dict with times, rhos, xis, readouts and energies; the energy column
        is the conserved value of the stochastic Hamiltonian
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rho = np.array(_matrix(rho0), dtype=complex)
    xi = np.array(AdjointState(xi=_matrix(xi0)).xi, dtype=complex)
    n = max(1, int(math.ceil(T / h))) if T > 0 else 0
    step = T / n if n else 0.0
    rhos, xis = [rho.copy()], [xi.copy()]
    for _ in range(n):
        k1 = _coupled_rhs(rho, xi, ops)
        k2 = _coupled_rhs(rho + 0.5 * step * k1[0], xi + 0.5 * step * k1[1], ops)
        k3 = _coupled_rhs(rho + 0.5 * step * k2[0], xi + 0.5 * step * k2[1], ops)
        k4 = _coupled_rhs(rho + step * k3[0], xi + step * k3[1], ops)
        rho = rho + step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        xi = xi + step / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        rhos.append(rho.copy())
        xis.append(xi.copy())
    readouts = np.array([stationary_readout(x, p, ops) for x, p in zip(xis, rhos)])
    energies = np.array([general_stochastic_hamiltonian(x, p, r, ops) for x, p, r in zip(xis, rhos, readouts)])
    drift = float(np.max(np.abs(energies - energies[0])))
    logger.info(f"Adjoint path over T={T}: energy {energies[0]:.6g}, drift {drift:.3e}")
    return {
        "times": np.linspace(0.0, T, n + 1),
        "rhos": np.array(rhos),
        "xis": np.array(xis),
        "readouts": readouts,
        "energies": energies,
    }


def fluorescence_operator_set(gamma1: float = 1.0, gamma_phi: float = 0.0, eta: float = 1.0) -> OperatorSet:
    """
    Heterodyne fluorescence as three channels: the two quadratures of
    sqrt(gamma1/2) sigma_- with efficiency eta, and unmonitored dephasing.
    """
    if gamma1 <= 0 or gamma_phi < 0:
        raise ValueError("Rates must satisfy gamma1 > 0 and gamma_phi >= 0")
    L1 = math.sqrt(gamma1 / 2.0) * SIGMA_MINUS
    return OperatorSet(
        H=np.zeros((2, 2), dtype=complex),
        channels=[
            Channel(L=L1, eta=eta),
            Channel(L=1j * L1, eta=eta),
            Channel(L=math.sqrt(gamma_phi / 2.0) * SIGMA_Z, eta=0.0),
        ],
    )


def rho_from_bloch(s: StateLike) -> np.ndarray:
    """(..., 2, 2) density matrices in the (|e>, |g>) basis"""
    r = as_array(s)
    u, x, y = r[..., 0], r[..., 1], r[..., 2]
    rho = np.empty(r.shape[:-1] + (2, 2), dtype=complex)
    rho[..., 0, 0] = u / 2.0
    rho[..., 1, 1] = 1.0 - u / 2.0
    rho[..., 0, 1] = (x - 1j * y) / 2.0
    rho[..., 1, 0] = (x + 1j * y) / 2.0
    return rho


def bloch_from_rho(rho) -> np.ndarray:
    rho = _matrix(rho)
    return np.stack([2.0 * rho[..., 0, 0].real, 2.0 * rho[..., 0, 1].real, -2.0 * rho[..., 0, 1].imag], axis=-1)


def xi_from_momenta(momenta, gauge: float = 0.0) -> np.ndarray:
    """
    Adjoint state with tr(xi d rho) = p_u du + p_x dx + p_y dy.

    Adding a multiple of the identity (gauge) leaves every physical quantity unchanged.
    """
    m = np.asarray(momenta, dtype=float)
    pu, px, py = m[..., 0], m[..., 1], m[..., 2]
    xi = np.empty(m.shape[:-1] + (2, 2), dtype=complex)
    xi[..., 0, 0] = pu + gauge
    xi[..., 1, 1] = -pu + gauge
    xi[..., 0, 1] = px - 1j * py
    xi[..., 1, 0] = px + 1j * py
    return xi


def momenta_from_xi(xi) -> np.ndarray:
    xi = _matrix(xi)
    return np.stack([0.5 * (xi[..., 0, 0] - xi[..., 1, 1]).real, xi[..., 0, 1].real, -xi[..., 0, 1].imag], axis=-1)
