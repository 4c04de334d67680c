"""Bose-enhanced atom-molecule conversion in an rf output coupler.

Three coupled modes: trapped atoms (a1), output atoms (a2) and molecules (b).
Mean-field, positive-P and exact truncated-Fock dynamics share one parameter
set expressed in units of the photoassociation strength.
"""

__version__ = "0.1.0"

from .errors import (
    AccuracyError,
    CapacityError,
    ConfigError,
    DivergenceError,
    ParameterError,
    SuperchemError,
)
from .core_model import (
    ModelParams,
    ModeAmplitudes,
    ObservableSample,
    TimeGrid,
    initial_state,
    observables,
    scale_physical,
)
