"""Adiabatic elimination of the excited molecular state in two-colour PA.

With a bound-bound coupling ``omega`` to a stable molecular mode and the
intermediate detuning ``delta`` dominating every other rate, the excited
molecule follows ``b = (omega*g + gamma*a2**2) / delta``. Substituting back
gives the same three-mode model with

    gamma    -> chi = gamma * omega / delta
    lambda_a -> lambda_a + gamma**2 / delta
    lambda_b -> lambda_g

All inputs share one frequency unit; no 2*pi conversion is done.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .core_model import ModelParams, scale_physical
from .errors import ParameterError

# Atom-laser shutdown bound on the rf coupling, in Hz.
RF_CEILING_HZ = 4.0 * math.sqrt(6.0) * 1e3


class ReductionValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RamanParams:
    gamma_pa: float
    omega: float
    delta: float
    lambda_a: float = 0.0
    lambda_g: float = 0.0
    g_rf: float = 0.0

    def __post_init__(self):
        for name in ("gamma_pa", "omega", "delta", "lambda_a", "lambda_g", "g_rf"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ParameterError(f"{name} must be a finite real number, got {v!r}")
        if self.delta == 0:
            raise ParameterError("delta must be non-zero for adiabatic elimination")


@dataclass
class ReductionReport:
    chi: float
    lambda_a_eff: float
    lambda_b_eff: float
    g_rf: float
    eta: float  # delta / omega
    scaled_g: float  # eta * g_rf / gamma_pa == g_rf / chi
    delta_over_omega: float
    delta_over_gamma: float
    valid: bool
    rf_over_ceiling: bool
    warnings: list = field(default_factory=list)

    def physical(self) -> dict:
        """Effective rates, ready for :func:`scale_physical`."""
        return dict(
            g_rf_hz=self.g_rf,
            gamma_pa_hz=self.chi,
            lambda_a_hz=self.lambda_a_eff,
            lambda_b_hz=self.lambda_b_eff,
        )

    def params(self) -> ModelParams:
        return scale_physical(**self.physical())


def reduce(raman: RamanParams) -> ReductionReport:
    chi = raman.gamma_pa * raman.omega / raman.delta
    if chi == 0:
        raise ParameterError("effective PA strength vanishes; gamma_pa and omega must be non-zero")
    eta = raman.delta / raman.omega if raman.omega else math.inf
    notes = []
    d_over_o = abs(raman.delta) / abs(raman.omega) if raman.omega else math.inf
    d_over_g = abs(raman.delta) / abs(raman.gamma_pa) if raman.gamma_pa else math.inf
    valid = d_over_o > 1 and d_over_g > 1
    if not valid:
        notes.append(
            f"|delta| is not the dominant frequency (|delta|/omega={d_over_o:.3g}, "
            f"|delta|/gamma={d_over_g:.3g}); elimination is unreliable"
        )
    over = abs(raman.g_rf) >= RF_CEILING_HZ
    if over:
        notes.append(
            f"rf coupling {raman.g_rf:g} Hz is at or above the output shutdown bound "
            f"4*sqrt(6) kHz = {RF_CEILING_HZ:.1f} Hz"
        )
    for note in notes:
        warnings.warn(note, ReductionValidityWarning, stacklevel=2)
    return ReductionReport(
        chi=chi,
        lambda_a_eff=raman.lambda_a + raman.gamma_pa**2 / raman.delta,
        lambda_b_eff=raman.lambda_g,
        g_rf=raman.g_rf,
        eta=eta,
        scaled_g=eta * raman.g_rf / raman.gamma_pa,
        delta_over_omega=d_over_o,
        delta_over_gamma=d_over_g,
        valid=valid,
        rf_over_ceiling=over,
        warnings=notes,
    )
