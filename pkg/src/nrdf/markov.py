"""Finite Markov chain helpers."""

import numpy as np

from .errors import DegenerateChainError, DomainError


def check_stochastic(T, atol=1e-12, name="transition"):
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DomainError(f"{name} matrix must be square, got shape {T.shape}")
    if np.any(T < -atol):
        raise DomainError(f"{name} matrix has negative entries")
    if not np.allclose(T.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise DomainError(f"{name} matrix rows must sum to 1")
    return T


def stationary_distribution(T, tol=1e-10):
    """Unique stationary distribution of a row-stochastic matrix.

    Solves ``pi (T - I) = 0, sum(pi) = 1`` directly. Raises
    DegenerateChainError when the solution is not unique (more than one
    closed communicating class).
    """
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    M = np.vstack([(T - np.eye(n)).T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] < tol * max(1.0, sv[0]):
        raise DegenerateChainError(
            f"stationary distribution is not unique (smallest singular value {sv[-1]:.3e})"
        )
    pi, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
