"""Nonanticipative RDF of partially observed Gauss-Markov sources.

Model::

    Z[t+1] = A Z[t] + B W[t]
    X[t]   = C Z[t] + N V[t]

with ``W, V`` standard white Gaussian noise and squared-error distortion on
``X``. The stationary NRDF couples reverse waterfilling on the innovation
covariance ``Lambda = C Sigma C' + N N'`` with a Kalman filter driven by the
reproduction, whose error covariance ``Sigma`` solves a modified Riccati
equation. :func:`solve` iterates the coupled system to its fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, DomainError, ModelError
from .info import WaterfillAllocation, reverse_waterfill, waterfill_rate

log = logging.getLogger(__name__)


def _as_matrix(value, name):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} must be a finite 2-D array")
    return arr


@dataclass(frozen=True, eq=False)
class GaussMarkovModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        for name in "ABCN":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        m, k, p, d = self.dims
        if self.A.shape != (m, m):
            raise ModelError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != m:
            raise ModelError(f"B must have {m} rows, got {self.B.shape}")
        if self.C.shape[1] != m:
            raise ModelError(f"C must have {m} columns, got {self.C.shape}")
        if self.N.shape[0] != p:
            raise ModelError(f"N must have {p} rows, got {self.N.shape}")

    @property
    def dims(self):
        """``(m, k, p, d)``: state, process noise, source and observation noise sizes."""
        return self.A.shape[0], self.B.shape[1], self.C.shape[0], self.N.shape[1]

    @classmethod
    def from_dict(cls, data) -> "GaussMarkovModel":
        """Build from ``{"A": [[...]], "B": ..., "C": ..., "N": ..., "dims": {...}}``.

        Matrices are nested row-major lists. ``dims`` is optional; when present
        its ``m, k, p, d`` entries (a mapping or a 4-list) must match the matrix shapes.
        """
        try:
            model = cls(*(data[key] for key in "ABCN"))
        except KeyError as exc:
            raise ModelError(f"model is missing matrix {exc.args[0]!r}") from None
        dims = data.get("dims")
        if dims is not None:
            expected = dict(zip("mkpd", model.dims))
            if isinstance(dims, (list, tuple)):
                if len(dims) != 4:
                    raise ModelError(f"dims must list m, k, p, d; got {dims}")
                dims = dict(zip("mkpd", dims))
            elif not isinstance(dims, dict):
                raise ModelError(f"dims must be a mapping or a list, got {type(dims).__name__}")
            for key, val in dims.items():
                if key in expected and int(val) != expected[key]:
                    raise ModelError(f"dims[{key!r}]={val} does not match matrices ({expected[key]})")
        return model

    def to_dict(self):
        m, k, p, d = self.dims
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "N": self.N.tolist(),
            "dims": {"m": m, "k": k, "p": p, "d": d},
        }

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @property
    def is_stable(self) -> bool:
        return self.spectral_radius < 1.0

    def check_assumptions(self, tol: float = 1e-9):
        """PBH tests for detectability of (C, A) and stabilizability of (A, B); N != 0.

        Raises:
            ModelError: naming the violated condition.
        """
        if not np.any(self.N):
            raise ModelError("observation noise gain N must be nonzero")
        m = self.A.shape[0]
        for mu in np.linalg.eigvals(self.A):
            if abs(mu) < 1.0 - tol:
                continue
            shifted = self.A - mu * np.eye(m)
            if np.linalg.matrix_rank(np.vstack([shifted, self.C]), tol=tol) < m:
                raise ModelError(f"(C, A) is not detectable: unobservable mode {mu:.6g}")
            if np.linalg.matrix_rank(np.hstack([shifted, self.B]), tol=tol) < m:
                raise ModelError(f"(A, B) is not stabilizable: unreachable mode {mu:.6g}")

    def stationary_state_covariance(self) -> np.ndarray:
        """Solution of ``S = A S A' + B B'``; requires a stable ``A``."""
        if not self.is_stable:
            raise ModelError("state covariance is unbounded for unstable A")
        return _sym(linalg.solve_discrete_lyapunov(self.A, self.B @ self.B.T))


@dataclass(frozen=True, eq=False)
class GaussNrdfSolution:
    Sigma: np.ndarray
    Lambda: np.ndarray
    E: np.ndarray  # rows are eigenvectors: E Lambda E' = diag(eigs)
    eigs: np.ndarray
    alloc: WaterfillAllocation
    H: np.ndarray
    Bcal: np.ndarray
    M: np.ndarray
    Q: np.ndarray
    rate: float
    D: float
    riccati_residual: float
    iterations: int
    active: np.ndarray  # channels carrying information (eta > 0)

    @property
    def delta(self) -> np.ndarray:
        return np.asarray(self.alloc.allocations)

    @property
    def water_level(self) -> float:
        return self.alloc.water_level

    @property
    def channel_powers(self) -> np.ndarray:
        """Matched channel input powers ``(lam - delta) q / delta``."""
        q = np.diag(self.Q)
        delta = self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            P = np.where(self.active, (self.eigs - delta) * q / delta, 0.0)
        return P

    def M_pinv(self) -> np.ndarray:
        return _m_pinv(self.M, self.E, self.active)


def _sym(S):
    return 0.5 * (S + S.T)


def eig_sorted(S):
    """Descending eigenpairs of a symmetric matrix with deterministic signs.

    Returns ``(E, eigs)`` where the rows of ``E`` are eigenvectors, so that
    ``E S E' = diag(eigs)``; each row's largest-magnitude entry is positive.
    """
    w, V = np.linalg.eigh(_sym(S))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    E = V.T.copy()
    for row in E:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return E, np.clip(w, 0.0, None)


def _default_Q(delta):
    return np.diag(np.where(delta > 0, delta, 1.0))


def _check_Q(Q, p):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape == (1, p) or Q.shape == (p, 1):
        Q = np.diag(Q.ravel())
    if Q.shape != (p, p) or np.any(Q - np.diag(np.diag(Q))):
        raise DomainError(f"Q must be a diagonal {p}x{p} matrix")
    if np.any(np.diag(Q) <= 0):
        raise DomainError("Q must be positive definite")
    return Q


def _m_pinv(M, E, active):
    """Inverse of ``M`` on the active channels, zero on the rest.

    ``E M E'`` is diagonal when ``E`` diagonalizes the current innovation
    covariance; inactive channels (eta = 0) contribute exact zeros to ``M``.
    """
    rot = np.diag(E @ M @ E.T)
    inv = np.where(active, 1.0 / np.where(active, rot, 1.0), 0.0)
    return E.T @ np.diag(inv) @ E


class _Stage:
    """All quantities derived from one filter error covariance."""

    def __init__(self, model, Sigma, D, Q_user):
        A, B, C, N = model.A, model.B, model.C, model.N
        self.Lambda = _sym(C @ Sigma @ C.T + N @ N.T)
        self.E, self.eigs = eig_sorted(self.Lambda)
        self.alloc = reverse_waterfill(self.eigs, D)
        delta = np.asarray(self.alloc.allocations)
        with np.errstate(divide="ignore", invalid="ignore"):
            eta = np.where(self.eigs > 0, 1.0 - delta / self.eigs, 0.0)
        eta = np.clip(eta, 0.0, 1.0)
        self.active = eta > 0
        self.H = np.diag(eta)
        self.Q = _default_Q(delta) if Q_user is None else Q_user
        self.Bcal = np.sqrt(self.H @ np.diag(delta) @ np.linalg.inv(self.Q))
        EHE = self.E.T @ self.H @ self.E
        self.Ceff = EHE @ C
        self.M = _sym(
            self.Ceff @ Sigma @ self.Ceff.T
            + EHE @ N @ N.T @ EHE.T
            + self.E.T @ self.Bcal @ self.Q @ self.Bcal.T @ self.E
        )
        Minv = _m_pinv(self.M, self.E, self.active)
        gain_term = A @ Sigma @ self.Ceff.T @ Minv @ self.Ceff @ Sigma @ A.T
        self.next_Sigma = _sym(A @ Sigma @ A.T - gain_term + B @ B.T)


def _initial_sigma(model):
    A, B, C, N = model.A, model.B, model.C, model.N
    try:
        S = linalg.solve_discrete_are(A.T, C.T, B @ B.T, N @ N.T)
        if np.all(np.isfinite(S)):
            return _sym(S)
    except (np.linalg.LinAlgError, ValueError):
        pass
    log.debug("DARE initialisation failed; starting from B B'")
    return _sym(B @ B.T)


def solve(
    model: GaussMarkovModel,
    D: float,
    Q=None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    Sigma0=None,
) -> GaussNrdfSolution:
    """Stationary NRDF of a Gauss-Markov source at total distortion ``D``.

    Starting from the steady-state Kalman predictor covariance for direct
    observation of ``X``, repeats: innovation covariance, eigendecomposition,
    reverse waterfilling, modified Riccati update, until the covariance moves
    by less than ``tol`` (relative to its norm). If the update residual grows
    twice in a row, the update is averaged with the previous iterate.

    Args:
        model: state-space model satisfying detectability/stabilizability.
        D: total squared-error distortion per sample, > 0.
        Q: diagonal channel-noise covariance; defaults to ``diag(delta)``.
        tol: relative convergence tolerance on ``Sigma``.
        max_iter: iteration cap.
        Sigma0: optional starting covariance (overrides the Kalman start).
    """
    model.check_assumptions()
    if not D > 0 or not math.isfinite(D):
        raise DomainError(f"distortion must be positive and finite, got {D}")
    p = model.dims[2]
    Q_user = None if Q is None else _check_Q(Q, p)

    Sigma = _initial_sigma(model) if Sigma0 is None else _sym(np.asarray(Sigma0, dtype=float))
    prev_res, rising, damp = math.inf, 0, 1.0
    for it in range(1, max_iter + 1):
        stage = _Stage(model, Sigma, D, Q_user)
        new = stage.next_Sigma
        res = float(np.linalg.norm(new - Sigma, 2))
        if not np.isfinite(res) or res > 1e12:
            raise ConvergenceError(f"covariance iteration diverged at step {it}", it, res)
        rising = rising + 1 if res > prev_res else 0
        if rising >= 2 and damp == 1.0:
            log.debug("oscillation detected at step %d; damping covariance updates", it)
            damp = 0.5
        prev_res = res
        Sigma = _sym(damp * new + (1.0 - damp) * Sigma)
        min_eig = float(np.linalg.eigvalsh(Sigma).min())
        if min_eig < -1e-10:
            raise ConvergenceError(f"covariance lost positive semidefiniteness ({min_eig:.3e})", it, res)
        if res <= tol * max(1.0, float(np.linalg.norm(Sigma, 2))):
            break
    else:
        raise ConvergenceError(f"no fixed point within {max_iter} iterations (residual {res:.3e})",
                               max_iter, res)

    stage = _Stage(model, Sigma, D, Q_user)
    residual = float(np.linalg.norm(stage.next_Sigma - Sigma, 2))
    if stage.active.any():
        rot = np.diag(stage.E @ stage.M @ stage.E.T)[stage.active]
        cond = float(rot.max() / rot.min())
        if cond > 1e12:
            log.warning("M is ill-conditioned on the active channels (cond %.3e)", cond)
    return GaussNrdfSolution(
        Sigma=Sigma,
        Lambda=stage.Lambda,
        E=stage.E,
        eigs=stage.eigs,
        alloc=stage.alloc,
        H=stage.H,
        Bcal=stage.Bcal,
        M=stage.M,
        Q=stage.Q,
        rate=waterfill_rate(stage.alloc),
        D=float(D),
        riccati_residual=residual,
        iterations=it,
        active=stage.active,
    )


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Predictor ``Z+ = A Z + G (Y - C Z)`` of the reproduction-driven filter."""

    A: np.ndarray
    C: np.ndarray
    G: np.ndarray
    C_eff: np.ndarray  # E' H E C
    closed_loop: np.ndarray  # A - G C_eff
    spectral_radius: float

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0

    def predict(self, Z_hat, Y):
        """One-step prediction ``E[Z_{t+1} | Y^t]`` from ``E[Z_t | Y^{t-1}]`` and ``Y_t``."""
        return self.A @ Z_hat + self.G @ (Y - self.C @ Z_hat)


def kalman_gain_and_filter(sol: GaussNrdfSolution, model: GaussMarkovModel) -> FilterCoefficients:
    """Steady-state gain ``G = A Sigma (E'HEC)' M^-1`` and the predictor's closed loop."""
    C_eff = sol.E.T @ sol.H @ sol.E @ model.C
    G = model.A @ sol.Sigma @ C_eff.T @ sol.M_pinv()
    closed = model.A - G @ C_eff
    rho = float(np.max(np.abs(np.linalg.eigvals(closed))))
    return FilterCoefficients(model.A, model.C, G, C_eff, closed, rho)


@dataclass(frozen=True)
class RdPoint:
    D: float
    rate: float
    riccati_residual: float
    waterfill_residual: float


def rd_curve(model: GaussMarkovModel, D_grid, Q=None, **opts):
    """Solve at every distortion of an ascending positive grid."""
    grid = np.asarray(D_grid, dtype=float).ravel()
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("distortion grid must be positive and strictly ascending")
    out = []
    for D in grid:
        sol = solve(model, float(D), Q=Q, **opts)
        wf_res = abs(sum(sol.alloc.allocations) - min(D, float(sol.eigs.sum())))
        out.append(RdPoint(float(D), sol.rate, sol.riccati_residual, wf_res))
    return out
