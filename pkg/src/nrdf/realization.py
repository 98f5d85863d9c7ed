"""Monte Carlo realization of the Gaussian NRDF over parallel Gaussian channels.

Encoder, channel and decoder per time step::

    K      = X - C Zhat                       # innovation (pre-encoder)
    Gamma  = E K                              # decorrelated innovation
    A_i    = (eta_i / Bcal_i) Gamma_i         # channel input, power (lam - delta) q / delta
    B_i    = A_i + Vc_i,  Vc ~ N(0, Q)        # parallel AWGN channels
    Gtilde = Bcal B                           # = H Gamma + Bcal Vc
    Y      = C Zhat + E' Gtilde               # reproduction
    Zhat  <- A Zhat + G (Y - C Zhat)          # decoder-side predictor, shared by encoder

so that each coordinate's error is ``(1 - eta) Gamma_i - Bcal_i Vc_i`` with
variance ``delta_i``. Noise is drawn from numpy's PCG64 generator with
standard-normal variates; a seed fixes every draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DomainError, FilterDivergenceError
from .gauss import GaussMarkovModel, GaussNrdfSolution, kalman_gain_and_filter, solve

DEFAULT_BURN_IN = 1000


@dataclass(frozen=True, eq=False)
class RealizationConfig:
    model: GaussMarkovModel
    sol: GaussNrdfSolution
    horizon: int
    seed: int = 0
    burn_in: int = DEFAULT_BURN_IN
    record_trace: bool = False

    def __post_init__(self):
        if int(self.horizon) <= 0:
            raise DomainError("horizon must be positive")
        if not 0 <= int(self.burn_in) < int(self.horizon):
            raise DomainError("burn_in must lie in [0, horizon)")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        p = self.model.dims[2]
        if self.sol.E.shape != (p, p):
            raise DomainError("solution does not match the model's source dimension")


@dataclass(eq=False)
class SimReport:
    empirical_distortion: float
    empirical_powers: np.ndarray
    analytic_rate: float
    capacity_at_power: float
    samples: int
    expected_distortion: float
    distortion_stderr: float
    gamma_lag1: np.ndarray  # lag-1 autocorrelation per coordinate
    gamma_covariance: np.ndarray
    decoder_lag1: np.ndarray = None  # same for E (Y - C Zhat), the channel-output innovation
    channel_noise: np.ndarray = None  # q_i
    trace: dict = field(default=None, repr=False)

    @property
    def distortion_z(self) -> float:
        """Standardised deviation of the empirical distortion from ``sum(delta)``."""
        if self.distortion_stderr == 0:
            return 0.0 if self.empirical_distortion == self.expected_distortion else math.inf
        return (self.empirical_distortion - self.expected_distortion) / self.distortion_stderr

    @property
    def whiteness_band(self) -> float:
        """3-sigma band for a sample autocorrelation of white noise."""
        return 3.0 / math.sqrt(self.samples)

    def to_dict(self):
        return {
            "empirical_distortion": self.empirical_distortion,
            "expected_distortion": self.expected_distortion,
            "distortion_stderr": self.distortion_stderr,
            "empirical_powers": [float(v) for v in self.empirical_powers],
            "analytic_rate": self.analytic_rate,
            "capacity_at_power": self.capacity_at_power,
            "samples": self.samples,
            "gamma_lag1": [float(v) for v in self.gamma_lag1],
            "gamma_covariance": np.asarray(self.gamma_covariance).tolist(),
            "decoder_lag1": [float(v) for v in self.decoder_lag1],
        }


def capacity(P_alloc, Q) -> float:
    """Capacity ``0.5 sum log2(1 + P_i / q_i)`` of parallel Gaussian channels (bits/use)."""
    P = np.asarray(P_alloc, dtype=float).ravel()
    q = np.asarray(Q, dtype=float)
    q = np.diag(q) if q.ndim == 2 else q.ravel()
    if P.shape != q.shape:
        raise DomainError(f"power vector {P.shape} and noise {q.shape} differ in size")
    if np.any(P < 0) or np.any(~np.isfinite(P)):
        raise DomainError("powers must be finite and nonnegative")
    if np.any(q <= 0):
        raise DomainError("noise variances must be positive")
    return float(0.5 * np.sum(np.log2(1.0 + P / q)))


def _channel_gains(sol):
    eta = np.diag(sol.H)
    bcal = np.diag(sol.Bcal)
    with np.errstate(divide="ignore", invalid="ignore"):
        enc = np.where(sol.active, eta / np.where(sol.active, bcal, 1.0), 0.0)
    return enc, bcal


def _psd_sqrt(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _lag1(x):
    xc = x - x.mean(axis=0)
    var = np.sum(xc * xc, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(var > 0, np.sum(xc[1:] * xc[:-1], axis=0) / var, 0.0)


def gamma_lag1_theory(sol: GaussNrdfSolution, model: GaussMarkovModel) -> np.ndarray:
    """Stationary lag-1 autocorrelation of each coordinate of ``Gamma = E K``.

    ``K`` is orthogonal to past reproductions but not to its own past:
    ``E[K_t K_{t-1}'] = C A Sigma C' E' diag(delta / lam) E``, which vanishes
    only when ``A = 0`` or the distortion goes to zero.
    """
    lam = sol.eigs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lam > 0, sol.delta / lam, 0.0)
    cross = model.C @ model.A @ sol.Sigma @ model.C.T @ sol.E.T @ np.diag(ratio) @ sol.E
    rot = sol.E @ cross @ sol.E.T
    return np.where(lam > 0, np.diag(rot) / np.where(lam > 0, lam, 1.0), 0.0)


def simulate(cfg: RealizationConfig) -> SimReport:
    """Run the encoder-channel-decoder loop and accumulate statistics after burn-in."""
    model, sol = cfg.model, cfg.sol
    A, B, C, N = model.A, model.B, model.C, model.N
    m, k, p, d = model.dims
    T = int(cfg.horizon)
    rng = np.random.default_rng(int(cfg.seed))

    filt = kalman_gain_and_filter(sol, model)
    G, C_eff = filt.G, filt.C_eff
    E, Bcal, Q = sol.E, sol.Bcal, sol.Q
    EHE = E.T @ sol.H @ E
    enc, bcal = _channel_gains(sol)
    qsd = np.sqrt(np.diag(Q))

    W = rng.standard_normal((T, k))
    V = rng.standard_normal((T, d))
    Vc = rng.standard_normal((T, p)) * qsd

    # augmented state [Z; Zhat] evolves linearly: s+ = F s + u
    F = np.block([[A, np.zeros((m, m))], [G @ C_eff, A - G @ C_eff]])
    U = np.hstack([W @ B.T, V @ (G @ EHE @ N).T + Vc @ (G @ E.T @ Bcal).T])

    s0 = np.zeros(2 * m)
    if model.is_stable and filt.stable:
        noise_cov = np.zeros((2 * m, 2 * m))
        noise_cov[:m, :m] = B @ B.T
        L = G @ EHE @ N
        R = G @ E.T @ Bcal
        noise_cov[m:, m:] = L @ L.T + R @ Q @ R.T
        P0 = linalg.solve_discrete_lyapunov(F, noise_cov)
        s0 = _psd_sqrt(P0) @ rng.standard_normal(2 * m)

    states = np.empty((T, 2 * m))
    s = s0
    Ft = F.T
    for t in range(T):
        states[t] = s
        s = s @ Ft + U[t]
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise FilterDivergenceError(f"trajectory diverged at step {bad}", bad)

    Z, Zhat = states[:, :m], states[:, m:]
    X = Z @ C.T + V @ N.T
    pred = Zhat @ C.T
    K = X - pred
    Gamma = K @ E.T
    A_ch = Gamma * enc
    B_ch = A_ch + Vc
    Gtilde = B_ch * bcal
    Y = pred + Gtilde @ E
    err = X - Y
    dist = np.sum(err * err, axis=1)

    sl = slice(int(cfg.burn_in), T)
    n = T - int(cfg.burn_in)
    d_mean = float(dist[sl].mean())
    d_se = float(dist[sl].std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    powers = np.mean(A_ch[sl] ** 2, axis=0)
    g = Gamma[sl]
    cov = g.T @ g / n

    trace = None
    if cfg.record_trace:
        trace = {"t": np.arange(T), "x": X, "y": Y, "distortion": dist, "a": A_ch}

    return SimReport(
        empirical_distortion=d_mean,
        empirical_powers=powers,
        analytic_rate=sol.rate,
        capacity_at_power=capacity(powers, Q),
        samples=n,
        expected_distortion=float(np.sum(sol.delta)),
        distortion_stderr=d_se,
        gamma_lag1=_lag1(g),
        gamma_covariance=cov,
        decoder_lag1=_lag1(Gtilde[sl]),
        channel_noise=np.diag(Q).copy(),
        trace=trace,
    )


def merge_reports(reports):
    """Sample-weighted average of independent replications."""
    reports = list(reports)
    if not reports:
        raise DomainError("nothing to merge")
    n = np.array([r.samples for r in reports], dtype=float)
    w = n / n.sum()
    d = float(np.dot(w, [r.empirical_distortion for r in reports]))
    # pooled standard error from per-run standard errors
    var_i = np.array([r.distortion_stderr**2 * r.samples for r in reports])
    se = float(math.sqrt(np.dot(w, var_i) / n.sum()))
    powers = np.tensordot(w, np.stack([r.empirical_powers for r in reports]), axes=1)
    first = reports[0]
    return SimReport(
        empirical_distortion=d,
        empirical_powers=powers,
        analytic_rate=first.analytic_rate,
        capacity_at_power=capacity(powers, first.channel_noise),
        samples=int(n.sum()),
        expected_distortion=first.expected_distortion,
        distortion_stderr=se,
        gamma_lag1=np.tensordot(w, np.stack([r.gamma_lag1 for r in reports]), axes=1),
        gamma_covariance=np.tensordot(w, np.stack([r.gamma_covariance for r in reports]), axes=1),
        decoder_lag1=np.tensordot(w, np.stack([r.decoder_lag1 for r in reports]), axes=1),
        channel_noise=first.channel_noise,
    )


def write_trace(path, report: SimReport):
    """Write the per-step trace as CSV: t, x_i, y_i, distortion, a_i."""
    tr = report.trace
    if tr is None:
        raise DomainError("report carries no trace; simulate with record_trace=True")
    p = tr["x"].shape[1]
    header = (["t"] + [f"x{i}" for i in range(p)] + [f"y{i}" for i in range(p)]
              + ["distortion"] + [f"a{i}" for i in range(p)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(tr["t"].size):
            row = [int(tr["t"][t])]
            row += [f"{v:.12g}" for v in tr["x"][t]]
            row += [f"{v:.12g}" for v in tr["y"][t]]
            row.append(f"{tr['distortion'][t]:.12g}")
            row += [f"{v:.12g}" for v in tr["a"][t]]
            w.writerow(row)


@dataclass(eq=False)
class MatchingReport:
    rate: float
    capacity: float
    gap: float
    powers: np.ndarray
    sim: SimReport = None

    @property
    def distortion_within_3sigma(self) -> bool:
        return self.sim is None or abs(self.sim.distortion_z) <= 3.0


def matching_check(model: GaussMarkovModel, D: float, horizon: int = 0, seed: int = 0,
                   burn_in: int = DEFAULT_BURN_IN, Q=None, sol: GaussNrdfSolution = None,
                   **opts) -> MatchingReport:
    """Check ``C(P) = R_na(D)`` with the matched powers; optionally simulate.

    With ``horizon > 0`` the realization is simulated and its distortion is
    attached to the report.
    """
    if sol is None:
        sol = solve(model, D, Q=Q, **opts)
    powers = sol.channel_powers
    cap = capacity(powers, sol.Q)
    sim = None
    if horizon:
        sim = simulate(RealizationConfig(model, sol, horizon, seed, min(burn_in, horizon - 1)))
    return MatchingReport(sol.rate, cap, cap - sol.rate, powers, sim)
