"""Closed forms for the binary symmetric Markov source under Hamming distortion.

The source flips its previous symbol with probability ``p``. Rates are in
bits per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RangeError
from .info import binary_entropy
from .iterative import FiniteMarkovSource, evaluate_kernel, hamming_distortion

# slack for D == D_c comparisons after floating-point round trips
_DC_SLACK = 1e-15


@dataclass(frozen=True)
class BinaryMarkovSource:
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"transition probability must lie in (0, 1), got {self.p}")

    @property
    def q(self) -> float:
        """Flip probability after relabeling so that it is at most 1/2."""
        return min(self.p, 1.0 - self.p)

    @property
    def entropy_rate(self) -> float:
        return binary_entropy(self.p)

    @property
    def transition(self) -> np.ndarray:
        return np.array([[1 - self.p, self.p], [self.p, 1 - self.p]])

    def as_finite(self) -> FiniteMarkovSource:
        return FiniteMarkovSource.binary_symmetric(self.p)


def _source(source) -> BinaryMarkovSource:
    return source if isinstance(source, BinaryMarkovSource) else BinaryMarkovSource(float(source))


def _check_D(D, hi=1.0):
    if not 0.0 <= D <= hi or math.isnan(D):
        raise DomainError(f"distortion must lie in [0, {hi}], got {D}")


def reproduction_flip(source, D: float) -> float:
    """``m = 1 - p - D + 2 p D``."""
    p = _source(source).p
    return 1.0 - p - D + 2.0 * p * D


def nrdf(source, D: float) -> float:
    """Nonanticipative RDF ``H(m) - H(D)`` for ``D <= 1/2``, zero beyond."""
    _check_D(D)
    if D >= 0.5:
        return 0.0
    m = reproduction_flip(source, D)
    return max(binary_entropy(m) - binary_entropy(D), 0.0)


@dataclass(frozen=True)
class BsmsKernel:
    """Optimal reproduction ``P(y_i | x_i, y_{i-1})``.

    ``table`` has rows ``y_i = 0, 1`` and columns
    ``(x_i, y_{i-1}) = (0, 0), (0, 1), (1, 0), (1, 1)``.
    """

    alpha: float
    beta: float

    @property
    def table(self) -> np.ndarray:
        a, b = self.alpha, self.beta
        return np.array([[a, b, 1 - b, 1 - a], [1 - a, 1 - b, b, a]])

    def prob(self, y: int, x: int, y_prev: int) -> float:
        return float(self.table[y, 2 * x + y_prev])

    def as_array(self) -> np.ndarray:
        """Kernel as ``q[y_prev, x, y]``, the solver's layout."""
        t = self.table
        q = np.empty((2, 2, 2))
        for x in range(2):
            for yp in range(2):
                q[yp, x, :] = t[:, 2 * x + yp]
        return q


def optimal_kernel(source, D: float) -> BsmsKernel:
    """Optimal stationary reproduction kernel in the positive-rate region ``D < 1/2``."""
    p = _source(source).p
    _check_D(D)
    if D >= 0.5:
        raise DomainError(f"kernel is characterized for D < 1/2 only, got {D}")
    alpha = (1 - p) * (1 - D) / (1 - p - D + 2 * p * D)
    beta = p * (1 - D) / (p + D - 2 * p * D)
    return BsmsKernel(alpha, beta)


@dataclass(frozen=True)
class KernelReport:
    stationary_joint: np.ndarray  # P(x_t, y_t)
    achieved_distortion: float
    achieved_rate: float


def kernel_consistency_check(source, kernel: BsmsKernel, D: float | None = None) -> KernelReport:
    """Operating point of a kernel under the stationary joint law of ``(X_t, Y_t)``.

    The rate is ``H(Y_t | Y_{t-1}) - H(Y_t | X_t, Y_{t-1})``, the output
    process being treated as Markov with the transition induced by the
    stationary joint. When ``D`` is given it is only validated; compare the
    report against ``D`` and ``nrdf(source, D)`` at the call site.
    """
    src = _source(source)
    if D is not None:
        _check_D(D, 0.5)
    q = kernel.as_array()
    J, distortion, rate = evaluate_kernel(src.as_finite(), q, hamming_distortion(2))
    return KernelReport(J.sum(axis=0), distortion, rate)


def critical_distortion(source) -> float:
    """Upper end ``D_c`` of the region where the classical RDF is known exactly."""
    q = _source(source).q
    r = q / (1.0 - q)
    return 0.5 * (1.0 - math.sqrt(1.0 - r * r))


def _check_low_region(src, D):
    _check_D(D, 0.5)
    dc = critical_distortion(src)
    if D > dc + _DC_SLACK:
        raise RangeError(f"classical RDF is known only for D <= D_c = {dc:.6g}, got {D}")


def classical_rdf_low_region(source, D: float) -> float:
    """Classical RDF ``H(q) - H(D)`` valid for ``0 <= D <= D_c``."""
    src = _source(source)
    _check_low_region(src, D)
    return binary_entropy(src.q) - binary_entropy(D)


def shannon_lower_bound(source, D: float) -> float:
    """``max(0, H(p) - H(D))`` on ``0 <= D <= 1/2``."""
    src = _source(source)
    _check_D(D, 0.5)
    return max(0.0, src.entropy_rate - binary_entropy(D))


def causal_rate_loss_bound(source, D: float) -> float:
    """Upper bound ``H(m) - H(q)`` on the rate loss of causal codes, ``D <= D_c``."""
    src = _source(source)
    _check_low_region(src, D)
    m = reproduction_flip(src, D)
    return binary_entropy(m) - binary_entropy(src.q)
