"""
Leading-order covariance and state-noise correlation functions from a fixed
initial state, their empirical counterparts from simulated ensembles, and the
comparison between the two.

All closed forms take t1, t2 as scalars or broadcastable arrays.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from fluortraj.engines.bloch import StateLike, as_array
from fluortraj.models.bloch import BlochState
from fluortraj.models.correlator import (
    CORRELATOR_VARIABLES,
    NOISE_VARIABLES,
    READOUT_VARIABLES,
    STATE_VARIABLES,
    CorrelatorSpec,
    CovarianceGrid,
)
from fluortraj.models.measurement import MeasurementParams
from fluortraj.models.trajectory import Ensemble

logger = logging.getLogger(__name__)

DEGENERATE_RATE_TOL = 1e-8
EQUAL_TIME_TOL = 1e-12
DEFAULT_JACKKNIFE_BLOCKS = 100


def _times(t1, t2) -> Tuple[np.ndarray, np.ndarray]:
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if np.any(t1 < 0) or np.any(t2 < 0):
        raise ValueError("Correlator times must be non-negative")
    return t1, t2


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def _relax(rate: float, m):
    """(1 - e^{-rate m}) / rate, with the rate -> 0 limit m"""
    if abs(rate) < 1e-300:
        return np.asarray(m, dtype=float)
    return -np.expm1(-rate * m) / rate


def green_state(var: str, t, t_prime, p: MeasurementParams):
    """Theta(t - t') e^{-gamma_i (t - t')} with Theta(0) = 0"""
    if var not in STATE_VARIABLES:
        raise ValueError(f"Green functions exist for {STATE_VARIABLES}, got {var!r}")
    rate = p.gamma1 if var == "u" else p.gamma2
    lag = np.asarray(t, dtype=float) - np.asarray(t_prime, dtype=float)
    value = np.where(lag > 0.0, np.exp(-rate * np.maximum(lag, 0.0)), 0.0)
    return _out(value)


def cov_uu(t1, t2, s0: StateLike, p: MeasurementParams):
    t1, t2 = _times(t1, t2)
    u0, x0, y0 = as_array(s0)
    m = np.minimum(t1, t2)
    z2, g1, g2 = p.zeta ** 2, p.gamma1, p.gamma2
    value = z2 * u0 ** 2 * (x0 ** 2 + y0 ** 2) * np.exp(-g1 * (t1 + t2)) * _relax(2.0 * g2, m)
    return _out(value)


def _cov_coherence(a0: float, b0: float, u0: float, t1, t2, p: MeasurementParams):
    """Autocovariance of the coherence whose initial value is a0 (b0 the other one)"""
    t1, t2 = _times(t1, t2)
    m = np.minimum(t1, t2)
    z2, g1, g2 = p.zeta ** 2, p.gamma1, p.gamma2
    gap = g1 - g2
    if abs(gap) < DEGENERATE_RATE_TOL * g1:
        first = u0 ** 2 * m
    else:
        first = u0 ** 2 * _relax(2.0 * gap, m)
    bracket = (first
               - 2.0 * u0 * a0 ** 2 * _relax(g1, m)
               + a0 ** 2 * (a0 ** 2 + b0 ** 2) * _relax(2.0 * g2, m))
    return _out(z2 * np.exp(-g2 * (t1 + t2)) * bracket)


def cov_xx(t1, t2, s0: StateLike, p: MeasurementParams):
    """Leading-order Cov[x(t1) x(t2)], with the series limit when gamma1 = gamma2"""
    u0, x0, y0 = as_array(s0)
    return _cov_coherence(x0, y0, u0, t1, t2, p)


def cov_yy(t1, t2, s0: StateLike, p: MeasurementParams):
    """cov_xx with x0 and y0 exchanged"""
    u0, x0, y0 = as_array(s0)
    return _cov_coherence(y0, x0, u0, t1, t2, p)


def cov_xy(t1, t2, s0: StateLike, p: MeasurementParams):
    t1, t2 = _times(t1, t2)
    u0, x0, y0 = as_array(s0)
    m = np.minimum(t1, t2)
    z2, g1, g2 = p.zeta ** 2, p.gamma1, p.gamma2
    bracket = (x0 * y0 * (x0 ** 2 + y0 ** 2) * _relax(2.0 * g2, m)
               - 2.0 * u0 * x0 * y0 * _relax(g1, m))
    return _out(z2 * np.exp(-g2 * (t1 + t2)) * bracket)


def _cov_u_coherence(a0: float, u0: float, x0: float, y0: float, t1, t2, p: MeasurementParams):
    t1, t2 = _times(t1, t2)
    m = np.minimum(t1, t2)
    z2, g1, g2 = p.zeta ** 2, p.gamma1, p.gamma2
    bracket = (u0 * a0 * (x0 ** 2 + y0 ** 2) * _relax(2.0 * g2, m)
               - u0 ** 2 * a0 * _relax(g1, m))
    return _out(z2 * np.exp(-g1 * t1 - g2 * t2) * bracket)


def cov_ux(t1, t2, s0: StateLike, p: MeasurementParams):
    """Cov[u(t1) x(t2)]; u decays with gamma1 and x with gamma2"""
    u0, x0, y0 = as_array(s0)
    return _cov_u_coherence(x0, u0, x0, y0, t1, t2, p)


def cov_uy(t1, t2, s0: StateLike, p: MeasurementParams):
    u0, x0, y0 = as_array(s0)
    return _cov_u_coherence(y0, u0, x0, y0, t1, t2, p)


def corr_state_noise(var: str, noise: str, t1, t2, s0: StateLike, p: MeasurementParams):
    """
    <r(t1) xi(t2)> at leading order; zero unless t1 > t2.
    """
    if var not in STATE_VARIABLES or noise not in NOISE_VARIABLES:
        raise ValueError(f"Expected a state variable and a noise variable, got {var!r}, {noise!r}")
    t1, t2 = _times(t1, t2)
    u0, x0, y0 = as_array(s0)
    zeta, g1, g2 = p.zeta, p.gamma1, p.gamma2
    coherence_decay = np.exp(-g2 * (t1 + t2))
    if var == "u":
        value = -zeta * u0 * (x0 if noise == "xi_I" else y0) * np.exp(-g1 * t1 - g2 * t2)
    elif (var, noise) in (("x", "xi_I"), ("y", "xi_Q")):
        a0 = x0 if var == "x" else y0
        value = zeta * u0 * np.exp(-g2 * t1 - (g1 - g2) * t2) - zeta * a0 ** 2 * coherence_decay
    else:
        value = -zeta * x0 * y0 * coherence_decay
    return _out(np.where(t1 > t2, value, 0.0))


def corr_u_xiI_higher_order(t1, t2, s0: StateLike, p: MeasurementParams):
    """Next correction to <u(t1) xi_I(t2)>; zero unless t1 > t2"""
    t1, t2 = _times(t1, t2)
    u0, x0, _ = as_array(s0)
    zeta, g1, g2 = p.zeta, p.gamma1, p.gamma2
    value = -zeta ** 3 * u0 * x0 ** 3 * np.exp(-g1 * t1 - g2 * t2) * _relax(2.0 * g2, t2)
    return _out(np.where(t1 > t2, value, 0.0))


_STATE_PAIRS = {
    ("u", "u"): cov_uu,
    ("x", "x"): cov_xx,
    ("y", "y"): cov_yy,
    ("x", "y"): cov_xy,
    ("u", "x"): cov_ux,
    ("u", "y"): cov_uy,
}


def _linear_parts(var: str, p: MeasurementParams) -> List[Tuple[float, str]]:
    """Readouts split as I = zeta x + xi_I and Q = zeta y + xi_Q"""
    if var == "I":
        return [(p.zeta, "x"), (1.0, "xi_I")]
    if var == "Q":
        return [(p.zeta, "y"), (1.0, "xi_Q")]
    if var not in CORRELATOR_VARIABLES:
        raise ValueError(f"Unknown correlator variable {var!r}")
    return [(1.0, var)]


def _base_cov(a: str, b: str, t1, t2, s0: StateLike, p: MeasurementParams,
              higher_order: bool) -> np.ndarray:
    t1, t2 = _times(t1, t2)
    if a in STATE_VARIABLES and b in STATE_VARIABLES:
        if (a, b) in _STATE_PAIRS:
            return np.asarray(_STATE_PAIRS[(a, b)](t1, t2, s0, p))
        return np.asarray(_STATE_PAIRS[(b, a)](t2, t1, s0, p))
    if a in STATE_VARIABLES:
        value = np.asarray(corr_state_noise(a, b, t1, t2, s0, p))
        if higher_order and (a, b) == ("u", "xi_I"):
            value = value + corr_u_xiI_higher_order(t1, t2, s0, p)
        return value
    if b in STATE_VARIABLES:
        return _base_cov(b, a, t2, t1, s0, p, higher_order)
    equal = np.abs(t1 - t2) <= EQUAL_TIME_TOL * np.maximum(1.0, np.maximum(t1, t2))
    return np.where(equal & (a == b), 1.0 / p.dt, 0.0)


def cov_io(a: str, b: str, t1, t2, s0: StateLike, p: MeasurementParams, higher_order: bool = False):
    """
    Leading-order Cov[a(t1) b(t2)] for any pair of state, noise or readout variables.

    White noise contributes 1/dt at equal times on the discrete grid.
    """
    total = 0.0
    for wa, va in _linear_parts(a, p):
        for wb, vb in _linear_parts(b, p):
            total = total + wa * wb * _base_cov(va, vb, t1, t2, s0, p, higher_order)
    return _out(np.asarray(total))


def analytic_cov(spec: CorrelatorSpec, higher_order: bool = False) -> float:
    a, b = spec.pair
    return float(cov_io(a, b, spec.t1, spec.t2, spec.initial, spec.params, higher_order))


def covariance_grid(pair: Tuple[str, str], t1_grid: Sequence[float], t2_grid: Sequence[float],
                    s0: BlochState, p: MeasurementParams, higher_order: bool = False) -> CovarianceGrid:
    """Closed-form Cov[a(t1) b(t2)] on the outer product of two time grids"""
    t1 = np.asarray(t1_grid, dtype=float)
    t2 = np.asarray(t2_grid, dtype=float)
    values = np.asarray(cov_io(pair[0], pair[1], t1[:, None], t2[None, :], s0, p, higher_order))
    return CovarianceGrid(
        pair=tuple(pair), t1=t1, t2=t2, values=np.broadcast_to(values, (len(t1), len(t2))).copy(),
        initial=s0, params=p, kind="analytic",
    )


def _grid_index(e: Ensemble, t, limit: int) -> np.ndarray:
    """Nearest grid index for each requested time"""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    index = np.clip(np.rint(t / e.params.dt).astype(int), 0, len(e.times) - 1)
    off = np.abs(e.times[index] - t) > 1e-9 * max(1.0, float(e.times[-1]))
    if np.any(off):
        logger.warning(f"{int(np.count_nonzero(off))} requested times are off-grid; using nearest grid points")
    if np.any(index > limit):
        raise ValueError(f"Requested time beyond the last stored sample (index {limit})")
    return index


def _series(e: Ensemble, var: str, t) -> np.ndarray:
    """(N, len(t)) samples of one variable at the grid points nearest t"""
    if var in STATE_VARIABLES:
        idx = _grid_index(e, t, len(e.times) - 1)
        return e.states[:, idx, STATE_VARIABLES.index(var)]
    idx = _grid_index(e, t, len(e.times) - 2)
    if var in NOISE_VARIABLES:
        return e.noises[:, idx, NOISE_VARIABLES.index(var)]
    if var in READOUT_VARIABLES:
        return e.readouts[:, idx, READOUT_VARIABLES.index(var)]
    raise ValueError(f"Unknown correlator variable {var!r}")


def _jackknife_cov(A: np.ndarray, B: np.ndarray, n_blocks: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Covariance mean(ab) - mean(a)mean(b) on every (i, j) cell with a
    leave-one-block-out jackknife standard error over trajectories.

    Args:
        A: (N, n1) samples
        B: (N, n2) samples
    """
    n = A.shape[0]
    mean_a, mean_b = A.mean(axis=0), B.mean(axis=0)
    values = A.T @ B / n - np.outer(mean_a, mean_b)
    blocks = min(n_blocks, n)
    if blocks < 2:
        return values, np.full(values.shape, np.nan)
    groups = np.array_split(np.arange(n), blocks)
    sum_a, sum_b, sum_ab = A.sum(axis=0), B.sum(axis=0), A.T @ B
    replicas = np.empty((blocks,) + values.shape)
    for k, rows in enumerate(groups):
        kept = n - len(rows)
        ra = (sum_a - A[rows].sum(axis=0)) / kept
        rb = (sum_b - B[rows].sum(axis=0)) / kept
        replicas[k] = (sum_ab - A[rows].T @ B[rows]) / kept - np.outer(ra, rb)
    spread = replicas - replicas.mean(axis=0)
    stderr = np.sqrt((blocks - 1) / blocks * np.sum(spread ** 2, axis=0))
    return values, stderr


def empirical_cov(e: Ensemble, spec: CorrelatorSpec,
                  n_blocks: int = DEFAULT_JACKKNIFE_BLOCKS) -> Tuple[float, float]:
    """
    Sample Cov[a(t1) b(t2)] over trajectories with its jackknife standard error.

    Returns:
        (value, stderr)
    """
    a, b = spec.pair
    values, stderr = _jackknife_cov(_series(e, a, spec.t1), _series(e, b, spec.t2), n_blocks)
    return float(values[0, 0]), float(stderr[0, 0])


def empirical_covariance_grid(e: Ensemble, pair: Tuple[str, str], t1_grid: Sequence[float],
                              t2_grid: Sequence[float], n_blocks: int = DEFAULT_JACKKNIFE_BLOCKS) -> CovarianceGrid:
    """Ensemble estimate of Cov[a(t1) b(t2)] on a grid, with a jackknife standard-error grid"""
    t1 = np.asarray(t1_grid, dtype=float)
    t2 = np.asarray(t2_grid, dtype=float)
    values, stderr = _jackknife_cov(_series(e, pair[0], t1), _series(e, pair[1], t2), n_blocks)
    logger.info(f"Estimated Cov[{pair[0]}, {pair[1]}] on a {len(t1)}x{len(t2)} grid from {len(e)} trajectories")
    return CovarianceGrid(
        pair=tuple(pair), t1=t1, t2=t2, values=values, stderr=stderr,
        initial=e.initial, params=e.params, kind="empirical",
        n_trajectories=len(e), scheme=e.scheme.value,
    )


def magic_points(pair: Tuple[str, str]) -> List[Dict[str, object]]:
    """Initial states at which the leading-order correlator of a pair vanishes identically"""
    points = [{"state": BlochState.ground(), "condition": "always"}]
    key = tuple(pair)
    if key == ("u", "u"):
        points.append({"state": BlochState.excited(), "condition": "always"})
    elif key == ("x", "x"):
        points.append({"state": BlochState(u=1.0, x=1.0, y=0.0), "condition": "gamma_phi = 0"})
    elif key == ("y", "y"):
        points.append({"state": BlochState(u=1.0, x=0.0, y=1.0), "condition": "gamma_phi = 0"})
    return points


def is_magic_point(pair: Tuple[str, str], s0: BlochState, p: MeasurementParams, tol: float = 1e-12) -> bool:
    for point in magic_points(pair):
        if point["condition"] == "gamma_phi = 0" and p.gamma_phi != 0.0:
            continue
        if np.max(np.abs(point["state"].as_array() - s0.as_array())) <= tol:
            return True
    return False


def agreement_report(analytic: CovarianceGrid, empirical: CovarianceGrid, k: float = 3.0) -> Dict[str, object]:
    """
    Compare closed-form and Monte Carlo grids cell by cell.

    Returns:
        dict with the largest |analytic - MC| / SE, the fraction of cells within k SE,
        the largest absolute difference and the magic-point flag
    """
    if analytic.values.shape != empirical.values.shape:
        raise ValueError("Grids must share their shape")
    if empirical.stderr is None:
        raise ValueError("The empirical grid carries no standard errors")
    diff = np.abs(analytic.values - empirical.values)
    se = empirical.stderr
    resolved = se > 0.0
    z = np.where(resolved, diff / np.where(resolved, se, 1.0), 0.0)
    within = np.where(resolved, z <= k, diff <= 1e-12)
    report = {
        "pair": list(analytic.pair),
        "n_cells": int(diff.size),
        "n_trajectories": empirical.n_trajectories,
        "max_abs_diff": float(diff.max()) if diff.size else 0.0,
        "max_abs_z": float(z.max()) if diff.size else 0.0,
        "fraction_within": float(np.mean(within)) if diff.size else 1.0,
        "k": k,
        "magic_point": is_magic_point(analytic.pair, analytic.initial, analytic.params),
    }
    logger.info(
        f"Cov[{analytic.pair[0]}, {analytic.pair[1]}]: {report['fraction_within']:.3f} of cells within {k} SE"
    )
    return report
