"""Parameters, scaled units, initial conditions and observables.

All dynamics run in units of the photoassociation (PA) strength: time is
``tau = gamma_pa * t`` and every rate is divided by ``gamma_pa``, so the PA
coupling itself is 1 in every equation of motion.
"""
from __future__ import annotations

import math
import numbers
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DivergenceError, ParameterError

# Order of the six phase-space variables in every stacked array.
MODE_NAMES = ("a1", "a1p", "a2", "a2p", "b", "bp")
OBSERVABLE_NAMES = ("n1", "n2", "nb", "n_total", "g2_b_num")


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the three-mode Hamiltonian, scaled by ``gamma_pa``.

    ``gamma_pa`` itself is kept (in rad/s) only to convert scaled time back
    to seconds. ``pa_enabled=False`` switches the atom-molecule coupling off,
    which leaves a plain two-mode Rabi problem; it exists for testing.
    """

    g_rf: float
    lambda_a: float
    lambda_b: float
    delta: float = 0.0
    gamma_decay: float = 0.0
    gamma_pa: float = 1.0
    pa_enabled: bool = True

    def __post_init__(self):
        for f in fields(self):
            if f.name == "pa_enabled":
                continue
            value = getattr(self, f.name)
            if not isinstance(value, numbers.Real) or isinstance(value, bool):
                raise ParameterError(f"{f.name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise ParameterError(f"{f.name} must be finite, got {value!r}")
        if self.gamma_pa <= 0:
            raise ParameterError(f"gamma_pa must be positive, got {self.gamma_pa}")
        if self.gamma_decay < 0:
            raise ParameterError(f"gamma_decay must be non-negative, got {self.gamma_decay}")

    @property
    def pa(self) -> float:
        return 1.0 if self.pa_enabled else 0.0

    def tau_to_seconds(self, tau):
        return tau / self.gamma_pa

    def seconds_to_tau(self, t):
        return t * self.gamma_pa

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModeAmplitudes:
    """The six independent complex variables of the positive-P phase space.

    ``a1p`` is not ``conj(a1)`` on a single stochastic trajectory; conjugacy
    only holds for ensemble means.
    """

    a1: complex = 0j
    a1p: complex = 0j
    a2: complex = 0j
    a2p: complex = 0j
    b: complex = 0j
    bp: complex = 0j

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a1p, self.a2, self.a2p, self.b, self.bp], dtype=complex)

    @classmethod
    def from_array(cls, y) -> "ModeAmplitudes":
        y = np.asarray(y, dtype=complex).reshape(6)
        return cls(*(complex(v) for v in y))

    def is_finite(self) -> bool:
        return all(cmath_isfinite(getattr(self, n)) for n in MODE_NAMES)

    def max_abs(self) -> float:
        return max(abs(getattr(self, n)) for n in MODE_NAMES)


def cmath_isfinite(z) -> bool:
    return math.isfinite(z.real) and math.isfinite(z.imag)


@dataclass(frozen=True)
class ObservableSample:
    tau: float
    n1: float
    n2: float
    nb: float
    n_total: float
    g2_b_num: float

    def values(self) -> tuple:
        return (self.n1, self.n2, self.nb, self.n_total, self.g2_b_num)


@dataclass(frozen=True)
class TimeGrid:
    """Fixed-step grid on ``[0, tau_end]``.

    Samples are taken at steps ``0, stride, 2*stride, ...`` up to ``n_steps``.
    ``tau_end / dt`` must be an integer up to rounding.
    """

    tau_end: float
    dt: float
    sample_stride: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.tau_end) and self.tau_end > 0):
            raise ParameterError(f"tau_end must be positive and finite, got {self.tau_end}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ParameterError(f"dt must be positive and finite, got {self.dt}")
        if not isinstance(self.sample_stride, numbers.Integral) or self.sample_stride < 1:
            raise ParameterError(f"sample_stride must be a positive integer, got {self.sample_stride}")
        ratio = self.tau_end / self.dt
        if ratio < 1 - 1e-9:
            raise ParameterError("tau_end must be at least one step dt")
        if ratio > 2**53:
            raise ParameterError("too many steps")
        if abs(ratio - round(ratio)) > 1e-6:
            raise ParameterError(f"tau_end={self.tau_end} is not a whole number of steps dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.tau_end / self.dt))

    @property
    def sample_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.sample_stride)

    @property
    def taus(self) -> np.ndarray:
        return self.sample_steps * self.dt

    def refined(self, factor: int) -> "TimeGrid":
        """Same time span and sample times with ``dt / factor``."""
        return TimeGrid(self.tau_end, self.dt / factor, self.sample_stride * factor)


def initial_state(n0: float) -> ModeAmplitudes:
    """Coherent state with mean ``n0`` in the trapped mode, vacuum elsewhere."""
    if not isinstance(n0, numbers.Real) or not math.isfinite(n0) or n0 < 0:
        raise ParameterError(f"n0 must be finite and non-negative, got {n0!r}")
    amp = math.sqrt(n0)
    return ModeAmplitudes(a1=complex(amp), a1p=complex(amp))


def moments(y: np.ndarray) -> np.ndarray:
    """Raw normally ordered moments of stacked amplitudes.

    ``y`` has shape ``(6, ...)``; the result has shape ``(5, ...)`` ordered as
    ``OBSERVABLE_NAMES``.
    """
    a1, a1p, a2, a2p, b, bp = y
    n1 = (a1p * a1).real
    n2 = (a2p * a2).real
    nb = (bp * b).real
    g2 = (bp * bp * b * b).real
    return np.stack([n1, n2, nb, n1 + n2 + 2 * nb, g2])


def observables(state: ModeAmplitudes, tau: float) -> ObservableSample:
    if not state.is_finite():
        raise DivergenceError("non-finite amplitudes", tau=tau)
    n1 = (state.a1p * state.a1).real
    n2 = (state.a2p * state.a2).real
    nb = (state.bp * state.b).real
    g2 = (state.bp * state.bp * state.b * state.b).real
    return ObservableSample(float(tau), n1, n2, nb, n1 + n2 + 2 * nb, g2)


def scale_physical(
    g_rf_hz: float,
    gamma_pa_hz: float,
    lambda_a_hz: float = 0.0,
    lambda_b_hz: float = 0.0,
    delta_hz: float = 0.0,
    gamma_decay_hz: float = 0.0,
) -> ModelParams:
    """Divide every rate by the PA strength.

    Inputs share one frequency convention (angular or not); no factor of
    2*pi is applied.
    """
    if not (isinstance(gamma_pa_hz, numbers.Real) and math.isfinite(gamma_pa_hz) and gamma_pa_hz > 0):
        raise ParameterError(f"PA strength must be positive and finite, got {gamma_pa_hz!r}")
    return ModelParams(
        g_rf=g_rf_hz / gamma_pa_hz,
        lambda_a=lambda_a_hz / gamma_pa_hz,
        lambda_b=lambda_b_hz / gamma_pa_hz,
        delta=delta_hz / gamma_pa_hz,
        gamma_decay=gamma_decay_hz / gamma_pa_hz,
        gamma_pa=float(gamma_pa_hz),
    )
