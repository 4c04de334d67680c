"""Exact evolution in the truncated number basis.

The Hamiltonian conserves ``N = n1 + n2 + 2 nb``, so each sector of fixed N
is evolved on its own. A coherent initial state is a Poisson mixture of
sectors; since every reported observable is diagonal in the number basis,
the sectors can be stacked into one block-diagonal system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.stats import poisson

from .core_model import ModelParams, ObservableSample, TimeGrid
from .errors import AccuracyError, CapacityError, ParameterError

MAX_SECTOR = 40
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FockBasis:
    """All ``(n1, n2, nb)`` with ``n1 + n2 + 2 nb == sector_n``.

    Ordered by ``nb`` ascending, then ``n2`` ascending.
    """

    sector_n: int
    states: tuple

    def __len__(self):
        return len(self.states)

    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    def occupations(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(-1, 3)


def sector_dimension(n: int) -> int:
    return sum(n - 2 * nb + 1 for nb in range(n // 2 + 1))


def enumerate_basis(n: int, max_n: int = MAX_SECTOR) -> FockBasis:
    if not isinstance(n, (int, np.integer)) or n < 0:
        raise ParameterError(f"sector number must be a non-negative integer, got {n!r}")
    if n > max_n:
        raise CapacityError(f"sector N={n} exceeds the basis capacity {max_n}")
    states = tuple(
        (n - 2 * nb - n2, n2, nb) for nb in range(n // 2 + 1) for n2 in range(n - 2 * nb + 1)
    )
    return FockBasis(int(n), states)


def hamiltonian_matrix(params: ModelParams, basis: FockBasis) -> sp.csr_matrix:
    """Sparse matrix of the (possibly non-Hermitian) Hamiltonian in scaled units.

    Molecular loss enters as ``-i gamma_decay / 2`` per molecule on the
    diagonal, so the norm leaks out of the sector. This is no-jump evolution:
    expectations are unnormalized and match the damped phase-space drift only
    while at most one molecule is present.
    """
    idx = basis.index()
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    g = params.g_rf
    pa = params.pa
    for i, (n1, n2, nb) in enumerate(basis.states):
        diag = (
            (-params.delta - 0.5j * params.gamma_decay) * nb
            + params.lambda_a * (n1 * (n1 - 1) + n2 * (n2 - 1))
            + params.lambda_b * nb * (nb - 1)
        )
        if diag != 0:
            add(i, i, diag)
        # a2^dag a1 and its conjugate
        if n1 > 0 and g != 0:
            j = idx[(n1 - 1, n2 + 1, nb)]
            v = g * math.sqrt(n1 * (n2 + 1))
            add(j, i, v)
            add(i, j, v)
        # b^dag a2^2 and its conjugate
        if n2 > 1 and pa != 0:
            j = idx[(n1, n2 - 2, nb + 1)]
            v = pa * math.sqrt(n2 * (n2 - 1) * (nb + 1))
            add(j, i, v)
            add(i, j, v)
    dim = len(basis)
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(dim, dim))


@dataclass(frozen=True)
class SectorWavefunction:
    basis: FockBasis
    amplitudes: np.ndarray

    @classmethod
    def all_trapped(cls, basis: FockBasis, amplitude: complex = 1.0) -> "SectorWavefunction":
        psi = np.zeros(len(basis), dtype=complex)
        psi[basis.index()[(basis.sector_n, 0, 0)]] = amplitude
        return cls(basis, psi)

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass
class SectorEvolution:
    taus: np.ndarray
    expectations: np.ndarray  # (n_samples, 4): n1, n2, nb, g2_b_num
    norms: np.ndarray  # squared norm per sample


def _rk4_schrodinger(h_matrix, psi0, grid: TimeGrid, occ):
    """Integrate ``d psi / d tau = -i H psi`` and record diagonal expectations."""
    a = -1j * h_matrix
    dt = grid.dt
    n1, n2, nb = occ[:, 0], occ[:, 1], occ[:, 2]
    weights = np.stack([n1, n2, nb, nb * (nb - 1)])
    psi = np.array(psi0, dtype=complex)
    exps, norms = [], []

    def record():
        p = (psi.conj() * psi).real
        exps.append(weights @ p)
        norms.append(p.sum())

    record()
    for step in range(1, grid.n_steps + 1):
        k1 = a @ psi
        k2 = a @ (psi + 0.5 * dt * k1)
        k3 = a @ (psi + 0.5 * dt * k2)
        k4 = a @ (psi + dt * k3)
        psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % grid.sample_stride == 0:
            record()
    return np.array(exps), np.array(norms)


def _check_norm(params, norms, reference):
    if params.gamma_decay == 0:
        drift = float(np.max(np.abs(norms - reference)))
        if drift > NORM_TOLERANCE * max(reference, 1e-300):
            raise AccuracyError(f"norm drifted by {drift:.3g}; reduce dt")
    elif np.any(np.diff(norms) > NORM_TOLERANCE * norms[0]):
        raise AccuracyError("norm increased under decay; reduce dt")


def evolve_sector(params: ModelParams, basis: FockBasis, psi0: SectorWavefunction, grid: TimeGrid) -> SectorEvolution:
    if psi0.basis != basis:
        raise ParameterError("wavefunction lives in a different sector")
    exps, norms = _rk4_schrodinger(hamiltonian_matrix(params, basis), psi0.amplitudes, grid, basis.occupations())
    _check_norm(params, norms, psi0.norm2())
    return SectorEvolution(grid.taus, exps, norms)


def poisson_cutoff(n0_mean: float, epsilon_tail: float) -> int:
    """Smallest ``n`` with ``P(N > n) < epsilon_tail`` for ``N ~ Poisson(n0_mean)``."""
    if n0_mean == 0:
        return 0
    n = int(n0_mean)
    while poisson.sf(n, n0_mean) >= epsilon_tail:
        n += 1
    return n


def max_feasible_mean(epsilon_tail: float, max_n: int = MAX_SECTOR) -> float:
    """Largest coherent mean whose Poisson tail beyond ``max_n`` is below ``epsilon_tail``."""
    return brentq(lambda m: poisson.sf(max_n, m) - epsilon_tail, 1e-12, float(max_n))


@dataclass
class CoherentEvolution:
    samples: list
    n_max: int
    dropped_mass: float
    sector_weights: np.ndarray
    n0_mean: float = 0.0

    def tail_bound(self, power: int = 1) -> float:
        """Upper bound on the truncation error of an observable bounded by ``N**power``.

        Equals ``sum_{n > n_max} n**power * P(n)``; populations use
        ``power=1``, the molecular second moment ``power=2``.
        """
        if self.n0_mean == 0:
            return 0.0
        hi = int(self.n_max + 20 * math.sqrt(self.n0_mean) + 100)
        n = np.arange(self.n_max + 1, hi + 1)
        return float(np.sum(n.astype(float) ** power * poisson.pmf(n, self.n0_mean)))

    def table(self) -> np.ndarray:
        return np.array([(s.tau, *s.values()) for s in self.samples])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])


def evolve_coherent(
    params: ModelParams,
    n0_mean: float,
    epsilon_tail: float,
    grid: TimeGrid,
    max_n: int = MAX_SECTOR,
) -> CoherentEvolution:
    """Exact observables for a coherent state of mean ``n0_mean`` in the trapped mode.

    Sectors up to the Poisson cutoff are kept; their dropped probability is
    reported as ``dropped_mass``.
    """
    if not (math.isfinite(n0_mean) and n0_mean >= 0):
        raise ParameterError(f"n0_mean must be finite and non-negative, got {n0_mean!r}")
    if not (0 < epsilon_tail < 1):
        raise ParameterError(f"epsilon_tail must lie in (0, 1), got {epsilon_tail!r}")
    if n0_mean == 0:
        zero = [ObservableSample(float(t), 0.0, 0.0, 0.0, 0.0, 0.0) for t in grid.taus]
        return CoherentEvolution(zero, 0, 0.0, np.ones(1))
    if poisson.sf(max_n, n0_mean) >= epsilon_tail:
        raise CapacityError(
            f"n0_mean={n0_mean} needs sectors beyond N={max_n}; largest feasible n0_mean "
            f"at epsilon_tail={epsilon_tail:g} is {max_feasible_mean(epsilon_tail, max_n):.4f}"
        )
    n_max = poisson_cutoff(n0_mean, epsilon_tail)
    sectors = range(n_max + 1)
    weights = poisson.pmf(np.arange(n_max + 1), n0_mean)
    bases = [enumerate_basis(n, max_n) for n in sectors]
    h_block = sp.block_diag([hamiltonian_matrix(params, b) for b in bases], format="csr")
    psi0 = np.concatenate(
        [SectorWavefunction.all_trapped(b, math.sqrt(w)).amplitudes for b, w in zip(bases, weights)]
    )
    occ = np.concatenate([b.occupations() for b in bases])
    exps, norms = _rk4_schrodinger(h_block, psi0, grid, occ)
    _check_norm(params, norms, float(weights.sum()))
    samples = [
        ObservableSample(float(t), e[0], e[1], e[2], e[0] + e[1] + 2 * e[2], e[3])
        for t, e in zip(grid.taus, exps)
    ]
    return CoherentEvolution(samples, n_max, float(poisson.sf(n_max, n0_mean)), weights, float(n0_mean))
