"""Positive-P Ito stochastic simulation.

Each trajectory is stepped with Euler-Maruyama; every one of the six
variables has its own real Wiener channel. Trajectory ``k`` of an ensemble
draws its noise from a Philox stream keyed by ``(master_seed, k)``, and
trajectories are simulated in fixed-size blocks, so results do not depend on
how blocks are spread over workers.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .core_model import (
    OBSERVABLE_NAMES,
    ModeAmplitudes,
    ModelParams,
    TimeGrid,
    moments,
)
from .errors import DivergenceError, ParameterError
from .meanfield import DEFAULT_GUARD_FACTOR, drift, drift_coefficients, drift_terms, guard_threshold

log = logging.getLogger(__name__)

BLOCK_SIZE = 1024
UNRELIABLE_FRACTION = 0.01
# Upper bound on noise rows (fine steps) drawn per trajectory at once.
_MAX_CHUNK_ROWS = 512


@dataclass(frozen=True)
class NoiseIncrement:
    """Wiener increments for one step, each with variance ``dt``."""

    eta: tuple

    def __post_init__(self):
        if len(self.eta) != 6:
            raise ParameterError("a noise increment has exactly six channels")


def diffusion_terms(a1, a1p, a2, a2p, b, bp, la, lb, pa):
    """Noise amplitudes of the six channels (principal square roots)."""
    return (
        np.sqrt(-2j * la * a1 * a1),
        np.sqrt(2j * la * a1p * a1p),
        np.sqrt(-2j * pa * b - 2j * la * a2 * a2),
        np.sqrt(2j * pa * bp + 2j * la * a2p * a2p),
        np.sqrt(-2j * lb * b * b),
        np.sqrt(2j * lb * bp * bp),
    )


def diffusion(y, params: ModelParams):
    return diffusion_terms(*y, float(params.lambda_a), float(params.lambda_b), params.pa)


def noise_amplitudes(state: ModeAmplitudes, params: ModelParams) -> tuple:
    return tuple(complex(s) for s in diffusion(state.as_array().tolist(), params))


def pp_step(state: ModeAmplitudes, params: ModelParams, dt: float, noise: NoiseIncrement) -> ModeAmplitudes:
    """One Euler-Maruyama step; ``noise.eta`` are already scaled by sqrt(dt)."""
    y = [complex(v) for v in state.as_array()]
    out = _em_update(y, params, dt, noise.eta)
    return ModeAmplitudes(*(complex(v) for v in out))


def _em_update(y, params, dt, eta, noiseless=False):
    f = drift(y, params)
    if noiseless:
        return [u + d * dt for u, d in zip(y, f)]
    s = diffusion(y, params)
    return [u + d * dt + sk * ek for u, d, sk, ek in zip(y, f, s, eta)]


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trajectory ``index``, a hash of the pair."""
    words = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def noise_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class TrajectoryResult:
    """Raw per-sample moments of a single trajectory.

    ``moment_samples`` has one row per recorded sample (columns ordered as
    ``OBSERVABLE_NAMES``); rows stop at the last sample before divergence.
    """

    taus: np.ndarray
    moment_samples: np.ndarray
    amplitude_samples: np.ndarray
    diverged: bool = False
    divergence_tau: float | None = None


@dataclass
class EnsembleStats:
    taus: np.ndarray
    mean: np.ndarray  # (n_samples, 5)
    stderr: np.ndarray  # (n_samples, 5)
    n_surviving: np.ndarray  # (n_samples,)
    amp_mean: np.ndarray  # (n_samples, 6) complex
    amp_stderr: np.ndarray  # (n_samples, 6) complex: re/im stderr packed
    n_trajectories: int
    n_diverged: int
    master_seed: int
    extrapolated: bool = False

    @property
    def divergence_fraction(self) -> float:
        return self.n_diverged / self.n_trajectories

    @property
    def unreliable(self) -> bool:
        return self.divergence_fraction > UNRELIABLE_FRACTION

    def series(self, name: str):
        i = OBSERVABLE_NAMES.index(name)
        return self.mean[:, i], self.stderr[:, i]


_drift_nb = numba.njit(cache=True)(drift_terms)
_diffusion_nb = numba.njit(cache=True)(diffusion_terms)


@numba.njit(cache=True, nogil=True)
def _advance(y, eta, dt, coeffs, step0, stride, guard2, noiseless, alive, div_tau, n_valid, mom, amps):
    """Euler-Maruyama over ``eta.shape[1]`` steps for every live lane, in place."""
    g, la, lb, pa, mol = coeffs
    n_lanes = y.shape[1]
    n_chunk = eta.shape[1]
    for i in range(n_lanes):
        if not alive[i]:
            continue
        a1, a1p, a2, a2p, b, bp = y[0, i], y[1, i], y[2, i], y[3, i], y[4, i], y[5, i]
        for j in range(n_chunk):
            step = step0 + j + 1
            f1, f2, f3, f4, f5, f6 = _drift_nb(a1, a1p, a2, a2p, b, bp, g, la, lb, pa, mol)
            if noiseless:
                a1 = a1 + f1 * dt
                a1p = a1p + f2 * dt
                a2 = a2 + f3 * dt
                a2p = a2p + f4 * dt
                b = b + f5 * dt
                bp = bp + f6 * dt
            else:
                s1, s2, s3, s4, s5, s6 = _diffusion_nb(a1, a1p, a2, a2p, b, bp, la, lb, pa)
                e = eta[i, j]
                a1 = a1 + f1 * dt + s1 * e[0]
                a1p = a1p + f2 * dt + s2 * e[1]
                a2 = a2 + f3 * dt + s3 * e[2]
                a2p = a2p + f4 * dt + s4 * e[3]
                b = b + f5 * dt + s5 * e[4]
                bp = bp + f6 * dt + s6 * e[5]
            size2 = 0.0
            for u in (a1, a1p, a2, a2p, b, bp):
                size2 = max(size2, u.real * u.real + u.imag * u.imag)
            if not size2 <= guard2:
                alive[i] = False
                div_tau[i] = step * dt
                break
            if step % stride == 0:
                k = step // stride
                n1 = (a1p * a1).real
                n2 = (a2p * a2).real
                nb = (bp * b).real
                mom[k, 0, i] = n1
                mom[k, 1, i] = n2
                mom[k, 2, i] = nb
                mom[k, 3, i] = n1 + n2 + 2 * nb
                mom[k, 4, i] = (bp * bp * b * b).real
                amps[k, 0, i] = a1
                amps[k, 1, i] = a1p
                amps[k, 2, i] = a2
                amps[k, 3, i] = a2p
                amps[k, 4, i] = b
                amps[k, 5, i] = bp
                n_valid[i] = k + 1
        y[0, i], y[1, i], y[2, i], y[3, i], y[4, i], y[5, i] = a1, a1p, a2, a2p, b, bp


def _simulate_block(init_y, params, grid, seeds, guard, refine, noiseless):
    """Run a block of trajectories.

    Returns per-sample moments ``(n_samples, 5, B)``, amplitudes
    ``(n_samples, 6, B)``, the number of valid samples per trajectory and
    divergence taus (``nan`` where the trajectory survived). Lanes are
    independent, so a trajectory's numbers do not depend on its block.
    """
    n = len(seeds)
    n_steps = grid.n_steps
    n_samples = n_steps // grid.sample_stride + 1
    fine_scale = np.sqrt(grid.dt / refine)
    coeffs = drift_coefficients(params)

    y = np.repeat(np.asarray(init_y, dtype=complex)[:, None], n, axis=1)
    mom = np.full((n_samples, 5, n), np.nan)
    amps = np.full((n_samples, 6, n), np.nan + 0j)
    mom[0] = moments(y)
    amps[0] = y
    alive = np.ones(n, dtype=np.bool_)
    div_tau = np.full(n, np.nan)
    n_valid = np.ones(n, dtype=np.int64)

    gens = [noise_generator(s) for s in seeds]
    chunk = max(1, _MAX_CHUNK_ROWS // refine)
    raw = np.zeros((n, chunk * refine, 6))
    step = 0
    while step < n_steps:
        c = min(chunk, n_steps - step)
        if noiseless:
            eta = raw[:, :c]
        else:
            for g, out in zip(gens, raw):
                g.standard_normal(out=out[: c * refine])
            rows = raw[:, : c * refine]
            eta = (rows if refine == 1 else rows.reshape(n, c, refine, 6).sum(axis=2)) * fine_scale
        _advance(y, eta, grid.dt, coeffs, step, grid.sample_stride, guard * guard, noiseless,
                 alive, div_tau, n_valid, mom, amps)
        step += c
    return mom, amps, n_valid, div_tau


def _extrapolated_block(init_y, params, grid, seeds, guard, refine, noiseless):
    coarse = _simulate_block(init_y, params, grid, seeds, guard, 2 * refine, noiseless)
    fine = _simulate_block(init_y, params, grid.refined(2), seeds, guard, refine, noiseless)
    n_valid = np.minimum(coarse[2], fine[2])
    div_tau = np.fmin(coarse[3], fine[3])
    mom = 2 * fine[0] - coarse[0]
    amps = 2 * fine[1] - coarse[1]
    return mom, amps, n_valid, div_tau


def _check_grid_refine(refine):
    if not isinstance(refine, (int, np.integer)) or refine < 1:
        raise ParameterError(f"noise refinement must be a positive integer, got {refine!r}")


def run_trajectory(
    init: ModeAmplitudes,
    params: ModelParams,
    grid: TimeGrid,
    seed: int,
    *,
    guard_factor: float = DEFAULT_GUARD_FACTOR,
    refine: int = 1,
    noiseless: bool = False,
) -> TrajectoryResult:
    """Integrate one stochastic trajectory.

    ``refine > 1`` builds each step's Wiener increment as the sum of
    ``refine`` finer increments; a run at ``dt`` with ``refine=r`` then
    follows the same Brownian path as a run at ``dt / r`` with the same seed.
    """
    _check_grid_refine(refine)
    guard = guard_threshold(init, guard_factor)
    mom, amps, n_valid, div_tau = _simulate_block(init.as_array(), params, grid, [seed], guard, refine, noiseless)
    k = int(n_valid[0])
    diverged = bool(np.isfinite(div_tau[0]))
    return TrajectoryResult(
        taus=grid.taus[:k],
        moment_samples=mom[:k, :, 0].copy(),
        amplitude_samples=amps[:k, :, 0].copy(),
        diverged=diverged,
        divergence_tau=float(div_tau[0]) if diverged else None,
    )


class _Welford:
    """Streaming per-sample mean and variance with a validity prefix."""

    def __init__(self, shape, dtype=float):
        self.count = np.zeros(shape[0], dtype=np.int64)
        self.mean = np.zeros(shape, dtype=dtype)
        self.m2 = np.zeros(shape, dtype=dtype)

    def push(self, x, n_valid):
        # x: (n_samples, m); only rows [:n_valid] are valid.
        c = self.count[:n_valid] = self.count[:n_valid] + 1
        delta = x[:n_valid] - self.mean[:n_valid]
        self.mean[:n_valid] += delta / c[:, None]
        self.m2[:n_valid] += delta * (x[:n_valid] - self.mean[:n_valid])

    def stderr(self):
        n = self.count[:, None].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.where(n > 1, self.m2 / (n - 1), np.nan)
            return np.sqrt(var) / np.sqrt(n)


def simulate_ensemble(
    init: ModeAmplitudes,
    params: ModelParams,
    grid: TimeGrid,
    n_traj: int,
    master_seed: int,
    n_workers: int = 1,
    *,
    guard_factor: float = DEFAULT_GUARD_FACTOR,
    refine: int = 1,
    noiseless: bool = False,
    extrapolate: bool = False,
) -> EnsembleStats:
    """Ensemble means and standard errors of the observables.

    Diverged trajectories contribute only their samples before divergence.
    Aggregation runs over trajectories in index order, so the output is
    bit-identical for any ``n_workers``.

    With ``extrapolate=True`` every trajectory is integrated at ``dt`` and at
    ``dt / 2`` on the same Brownian path and contributes
    ``2 * X(dt/2) - X(dt)`` (Talay-Tubaro extrapolation). This removes the
    first-order weak bias of Euler-Maruyama at three times the cost.
    """
    if not isinstance(n_traj, (int, np.integer)) or n_traj < 2:
        raise ParameterError(f"n_traj must be an integer >= 2, got {n_traj!r}")
    if not isinstance(n_workers, (int, np.integer)) or n_workers < 1:
        raise ParameterError(f"n_workers must be a positive integer, got {n_workers!r}")
    _check_grid_refine(refine)
    guard = guard_threshold(init, guard_factor)
    init_y = init.as_array()
    seeds = [trajectory_seed(master_seed, k) for k in range(n_traj)]
    blocks = [seeds[i : i + BLOCK_SIZE] for i in range(0, n_traj, BLOCK_SIZE)]

    def work(block):
        if not extrapolate:
            return _simulate_block(init_y, params, grid, block, guard, refine, noiseless)
        return _extrapolated_block(init_y, params, grid, block, guard, refine, noiseless)

    if n_workers == 1 or len(blocks) == 1:
        results = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, blocks))

    n_samples = len(grid.taus)
    obs = _Welford((n_samples, 5))
    amp_re = _Welford((n_samples, 6))
    amp_im = _Welford((n_samples, 6))
    n_diverged = 0
    for mom, amps, n_valid, div_tau in results:
        n_diverged += int(np.isfinite(div_tau).sum())
        for j in range(mom.shape[-1]):
            k = int(n_valid[j])
            obs.push(mom[:, :, j], k)
            amp_re.push(amps[:, :, j].real, k)
            amp_im.push(amps[:, :, j].imag, k)

    if n_diverged == n_traj:
        raise DivergenceError("every trajectory diverged", tau=float(np.nanmin(np.concatenate([r[3] for r in results]))))
    stats = EnsembleStats(
        taus=grid.taus,
        mean=np.where(obs.count[:, None] > 0, obs.mean, np.nan),
        stderr=obs.stderr(),
        n_surviving=obs.count.copy(),
        amp_mean=amp_re.mean + 1j * amp_im.mean,
        amp_stderr=amp_re.stderr() + 1j * amp_im.stderr(),
        n_trajectories=int(n_traj),
        n_diverged=n_diverged,
        master_seed=int(master_seed),
        extrapolated=bool(extrapolate),
    )
    if stats.unreliable:
        log.warning(
            "%d of %d trajectories diverged (%.2f%%); results flagged unreliable",
            n_diverged, n_traj, 100 * stats.divergence_fraction,
        )
    return stats
