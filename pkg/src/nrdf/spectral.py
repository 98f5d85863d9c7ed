"""Classical (noncausal) RDF of stationary Gaussian sources from their spectrum.

The spectral density of a stable state-space model is sampled on a uniform
grid over ``[0, pi]`` (the density is even in frequency) and reverse
waterfilling is carried out jointly over frequency and eigen-directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, ModelError
from .gauss import GaussMarkovModel, solve

DEFAULT_GRID = 2**14


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Matrix spectral density sampled at ``omega_k = k pi / grid_size``, ``k = 0..grid_size``."""

    evaluator: object  # omega -> (p, p) Hermitian array
    grid_size: int = DEFAULT_GRID
    vectorized: bool = False  # evaluator maps an (n,) array to (n, p, p)

    def __post_init__(self):
        if int(self.grid_size) < 2:
            raise DomainError("grid_size must be at least 2")

    @property
    def omega(self) -> np.ndarray:
        return np.linspace(0.0, math.pi, int(self.grid_size) + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights normalised so that ``sum(w * f) ~ (1/2pi) int_{-pi}^{pi} f``."""
        n = int(self.grid_size)
        w = np.full(n + 1, 1.0 / n)
        w[0] = w[-1] = 0.5 / n
        return w

    def matrices(self) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.evaluator(self.omega))
        return np.stack([np.atleast_2d(self.evaluator(w)) for w in self.omega])

    @cached_property
    def _eigenvalues(self):
        S = self.matrices()
        S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
        return np.clip(np.linalg.eigvalsh(S), 0.0, None)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``S(omega_k)``, shape ``(grid_size + 1, p)``, clipped at zero."""
        return self._eigenvalues

    def total_power(self) -> float:
        """``(1/2pi) int trace S(omega) d omega``."""
        return float(self.weights @ self.eigenvalues().sum(axis=1))

    def refined(self, factor: int = 2) -> "SpectralDensity":
        return SpectralDensity(self.evaluator, int(self.grid_size) * factor, self.vectorized)


def spectrum_from_model(model: GaussMarkovModel, grid_size: int = DEFAULT_GRID) -> SpectralDensity:
    """``S(w) = C (e^{iw} I - A)^{-1} B B' (e^{-iw} I - A')^{-1} C' + N N'``."""
    if not model.is_stable:
        raise ModelError(f"spectrum requires a stable A (spectral radius {model.spectral_radius:.6g})")
    A, B, C, N = model.A, model.B, model.C, model.N
    m = A.shape[0]
    BB, NN = B @ B.T, N @ N.T

    def evaluator(w):
        w = np.asarray(w, dtype=float)
        z = np.exp(1j * w)[..., None, None] * np.eye(m)
        G = C @ np.linalg.solve(z - A, np.broadcast_to(np.eye(m), z.shape))
        return G @ BB @ np.conj(np.swapaxes(G, -1, -2)) + NN

    return SpectralDensity(evaluator, grid_size, vectorized=True)


def _distortion_at(level, eig, weights):
    return float(weights @ np.minimum(level, eig).sum(axis=1))


def classical_rdf(spec: SpectralDensity, D: float, tol: float = 1e-12) -> float:
    """Noncausal Gaussian RDF (bits/sample) at average total distortion ``D``.

    Finds the water level ``theta`` with
    ``(1/2pi) int sum_j min(theta, sigma_j(w)) dw = D`` by bisection, then
    returns ``(1/4pi) int sum_j max(0, log2(sigma_j(w) / theta)) dw``.
    """
    if not D > 0 or not math.isfinite(D):
        raise DomainError(f"distortion must be positive and finite, got {D}")
    eig = spec.eigenvalues()
    w = spec.weights
    total = float(w @ eig.sum(axis=1))
    if D >= total:
        return 0.0
    lo, hi = 0.0, float(eig.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        excess = _distortion_at(mid, eig, w) - D
        if abs(excess) <= tol or mid in (lo, hi):
            break
        if excess > 0:
            hi = mid
        else:
            lo = mid
    theta = mid
    # the active set is settled; solve the now-linear level equation exactly
    above = eig > theta
    mass = float(w @ above.sum(axis=1))
    if mass > 0:
        snapped = (D - float(w @ np.where(above, 0.0, eig).sum(axis=1))) / mass
        if snapped > 0 and np.array_equal(eig > snapped, above):
            theta = snapped
    with np.errstate(divide="ignore"):
        terms = np.where(eig > theta, np.log2(np.where(eig > theta, eig, 1.0) / theta), 0.0)
    return 0.5 * float(w @ terms.sum(axis=1))


def zero_delay_rate_loss(model: GaussMarkovModel, D: float, Q=None, grid_size: int = DEFAULT_GRID,
                         tol: float = 1e-6, **opts) -> float:
    """NRDF minus noncausal RDF at distortion ``D`` (bits/sample).

    Raises:
        DomainError: if the difference is below ``-tol`` (the ordering
            noncausal <= nonanticipative is violated numerically).
    """
    r_na = solve(model, D, Q=Q, **opts).rate
    r_nc = classical_rdf(spectrum_from_model(model, grid_size), D)
    loss = r_na - r_nc
    if loss < -tol:
        raise DomainError(f"rate loss {loss:.3e} is negative beyond tolerance at D={D}")
    return loss
