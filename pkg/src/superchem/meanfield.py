"""Noiseless (mean-field) limit of the phase-space equations, RK4-integrated."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_model import ModeAmplitudes, ModelParams, ObservableSample, TimeGrid, observables
from .errors import DivergenceError

DEFAULT_GUARD_FACTOR = 1e6


def drift_coefficients(params: ModelParams) -> tuple:
    """Flat coefficient tuple consumed by :func:`drift_terms`."""
    return (
        float(params.g_rf),
        float(params.lambda_a),
        float(params.lambda_b),
        params.pa,
        1j * params.delta - 0.5 * params.gamma_decay,
    )


def drift_terms(a1, a1p, a2, a2p, b, bp, g, la, lb, pa, mol):
    """Right-hand side of the noiseless equations in scaled units.

    Plain arithmetic only, so the same source serves complex scalars, numpy
    arrays and the compiled stochastic kernel. ``mol`` is
    ``i*delta - gamma_decay/2``: the molecular amplitude rotates as
    ``exp(+i delta tau)`` and decays at half the molecular loss rate.
    """
    return (
        -1j * g * a2 - 2j * la * a1p * a1 * a1,
        1j * g * a2p + 2j * la * a1 * a1p * a1p,
        -1j * g * a1 - 2j * pa * a2p * b - 2j * la * a2 * a2 * a2p,
        1j * g * a1p + 2j * pa * a2 * bp + 2j * la * a2p * a2p * a2,
        mol * b - 1j * pa * a2 * a2 - 2j * lb * bp * b * b,
        mol.conjugate() * bp + 1j * pa * a2p * a2p + 2j * lb * b * bp * bp,
    )


def drift(y, params: ModelParams):
    """Time derivative of the six amplitudes ``y`` (scalars or arrays)."""
    return drift_terms(*y, *drift_coefficients(params))


def mf_drift(state: ModeAmplitudes, params: ModelParams) -> ModeAmplitudes:
    if not state.is_finite():
        raise DivergenceError("non-finite amplitudes in drift")
    return ModeAmplitudes(*drift(state.as_array().tolist(), params))


def rk4_step(y, params: ModelParams, h: float):
    k1 = drift(y, params)
    k2 = drift([u + 0.5 * h * k for u, k in zip(y, k1)], params)
    k3 = drift([u + 0.5 * h * k for u, k in zip(y, k2)], params)
    k4 = drift([u + h * k for u, k in zip(y, k3)], params)
    return [u + h / 6.0 * (p + 2 * q + 2 * r + s) for u, p, q, r, s in zip(y, k1, k2, k3, k4)]


def guard_threshold(init: ModeAmplitudes, factor: float = DEFAULT_GUARD_FACTOR) -> float:
    n_total = observables(init, 0.0).n_total
    return factor * math.sqrt(max(abs(n_total), 1.0))


@dataclass
class MfTrajectory:
    samples: list = field(default_factory=list)
    raw_states: list | None = None

    def table(self) -> np.ndarray:
        """Rows of ``(tau, n1, n2, nb, n_total, g2_b_num)``."""
        return np.array([(s.tau, *s.values()) for s in self.samples])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])


def integrate_mf(
    init: ModeAmplitudes,
    params: ModelParams,
    grid: TimeGrid,
    *,
    keep_states: bool = False,
    guard_factor: float = DEFAULT_GUARD_FACTOR,
    backward: bool = False,
) -> MfTrajectory:
    """Fixed-step classical RK4 over the grid.

    ``backward=True`` integrates the sign-flipped drift (used for
    time-reversal checks); reported tau still counts up from 0.
    """
    guard = guard_threshold(init, guard_factor)
    h = -grid.dt if backward else grid.dt
    y = [complex(v) for v in init.as_array()]
    traj = MfTrajectory(raw_states=[] if keep_states else None)
    stride = grid.sample_stride

    def record(step):
        state = ModeAmplitudes(*y)
        traj.samples.append(observables(state, step * grid.dt))
        if keep_states:
            traj.raw_states.append(state)

    record(0)
    for step in range(1, grid.n_steps + 1):
        y = rk4_step(y, params, h)
        biggest = max(abs(v) for v in y)
        if not biggest <= guard:
            raise DivergenceError(
                f"mean-field amplitudes diverged at tau={step * grid.dt:.6g}", tau=step * grid.dt
            )
        if step % stride == 0:
            record(step)
    return traj


def rabi_reference(n0: float, g: float, tau):
    """Two-mode Rabi populations with no photoassociation."""
    c = np.cos(g * tau)
    s = np.sin(g * tau)
    return n0 * c * c, n0 * s * s
