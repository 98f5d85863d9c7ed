"""Nonanticipative rate-distortion functions for sources with memory."""

from .bsms import BinaryMarkovSource
from .errors import (
    ConvergenceError,
    DegenerateChainError,
    DomainError,
    InfeasibleCertificateError,
    ModelError,
    RangeError,
)
from .gauss import GaussMarkovModel, GaussNrdfSolution, solve as solve_gaussian
from .info import WaterfillAllocation, binary_entropy, reverse_waterfill, waterfill_rate
from .iterative import FiniteMarkovSource, solve_for_distortion, solve_stationary

__all__ = [
    "BinaryMarkovSource",
    "ConvergenceError",
    "DegenerateChainError",
    "DomainError",
    "FiniteMarkovSource",
    "GaussMarkovModel",
    "GaussNrdfSolution",
    "InfeasibleCertificateError",
    "ModelError",
    "RangeError",
    "WaterfillAllocation",
    "binary_entropy",
    "reverse_waterfill",
    "solve_for_distortion",
    "solve_gaussian",
    "solve_stationary",
    "waterfill_rate",
]
