"""Entropy and reverse-waterfilling primitives.

All rates are in bits unless ``unit="nats"`` is passed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_LOG = {"bits": math.log2, "nats": math.log}


def _log_fn(unit):
    try:
        return _LOG[unit]
    except KeyError:
        raise DomainError(f"unknown unit {unit!r}; expected 'bits' or 'nats'") from None


def binary_entropy(p: float, unit: str = "bits") -> float:
    """Binary entropy -p log p - (1-p) log(1-p), with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise DomainError(f"probability must lie in [0, 1], got {p}")
    log = _log_fn(unit)
    h = 0.0
    for v in (p, 1.0 - p):
        if v > 0.0:
            h -= v * log(v)
    return h


def entropy(probs, unit: str = "bits") -> float:
    """Shannon entropy of a probability vector (zeros contribute nothing)."""
    probs = np.asarray(probs, dtype=float).ravel()
    if np.any(probs < 0):
        raise DomainError("probabilities must be nonnegative")
    nz = probs[probs > 0]
    h = -float(np.sum(nz * np.log(nz)))
    return h / math.log(2) if unit == "bits" else h


@dataclass(frozen=True)
class WaterfillAllocation:
    """Reverse-waterfilling distortion allocation over independent components.

    ``allocations[i] == min(water_level, eigenvalues[i])`` and the allocations
    sum to ``target_distortion`` unless the target exceeds the total variance.
    """

    eigenvalues: tuple
    allocations: tuple
    water_level: float
    target_distortion: float

    @property
    def saturated(self) -> bool:
        """True when every component is fully distorted (zero rate)."""
        return all(d >= l for d, l in zip(self.allocations, self.eigenvalues))


def reverse_waterfill(eigenvalues, D: float, tol: float = 1e-12) -> WaterfillAllocation:
    """Split a total distortion ``D`` across components of given variances.

    The water level is located by bisection on the monotone, piecewise-linear
    map ``xi -> sum(min(xi, lam_i))`` and then snapped to the exact value
    implied by the active set, so the allocations sum to ``D`` up to rounding.

    Args:
        eigenvalues: component variances, each >= 0.
        D: total distortion budget, >= 0.
        tol: absolute bisection tolerance on ``sum(delta) - D``.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size == 0:
        raise DomainError("eigenvalues must be nonempty")
    if np.any(lam < 0) or np.any(~np.isfinite(lam)):
        raise DomainError(f"eigenvalues must be finite and nonnegative, got {lam}")
    if not D >= 0 or not math.isfinite(D):
        raise DomainError(f"distortion must be finite and nonnegative, got {D}")

    total = float(lam.sum())
    if D >= total:
        return WaterfillAllocation(tuple(lam), tuple(lam), float(lam.max()), float(D))

    lo, hi = 0.0, float(lam.max())
    while hi - lo > 0:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        excess = np.minimum(mid, lam).sum() - D
        if abs(excess) <= tol:
            lo = hi = mid
            break
        if excess > 0:
            hi = mid
        else:
            lo = mid
    xi = 0.5 * (lo + hi)

    # snap: components with lam_i < xi are saturated, the rest share D equally
    below = lam < xi
    n_active = int((~below).sum())
    if n_active:
        exact = (D - lam[below].sum()) / n_active
        if np.all(lam[below] <= exact) and np.all(lam[~below] >= exact):
            xi = float(exact)
    delta = np.minimum(xi, lam)
    return WaterfillAllocation(tuple(lam), tuple(delta), float(xi), float(D))


def waterfill_rate(alloc: WaterfillAllocation, unit: str = "bits") -> float:
    """Rate ``0.5 * sum(log(lam_i / delta_i))`` of a waterfilling allocation.

    Components with zero variance contribute nothing. A zero allocation on a
    component with positive variance means zero distortion, for which the
    rate is infinite; ``math.inf`` is returned in that case.
    """
    log = _log_fn(unit)
    rate = 0.0
    for lam, delta in zip(alloc.eigenvalues, alloc.allocations):
        if lam <= 0:
            continue
        if delta < 0 or delta > lam * (1 + 1e-12):
            raise DomainError(f"allocation {delta} outside [0, {lam}]")
        if delta == 0:
            return math.inf
        if delta < lam:
            rate += 0.5 * log(lam / delta)
    return rate
