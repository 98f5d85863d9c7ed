"""Alternating fixed-point solver for the stationary NRDF of finite Markov sources.

The optimal reproduction kernel is an exponential tilt of an output kernel
that depends on the previous ``memory`` reproductions,

    q(y | w, x) = exp(s * rho(x, y)) * nu(y | w) / Z(w, x),

and ``nu`` must equal the output transition induced by ``q`` under the
stationary joint law of source and reproduction. The solver alternates
between the two conditions, Blahut-Arimoto style.

A dual (lower-bound) certificate for the finite-horizon problem is evaluated
by enumerating all histories, which restricts it to small horizons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    ConvergenceError,
    DomainError,
    InfeasibleCertificateError,
)
from .markov import check_stochastic, stationary_distribution

LN2 = math.log(2.0)

# above this many chain states, the stationary law is found by power iteration
_DENSE_STATES = 256


@dataclass(frozen=True, eq=False)
class FiniteMarkovSource:
    """Stationary first-order Markov source on ``{0, ..., alphabet_size-1}``."""

    transition: np.ndarray
    initial: np.ndarray = None

    def __post_init__(self):
        T = check_stochastic(self.transition)
        object.__setattr__(self, "transition", T)
        if self.initial is None:
            pi = stationary_distribution(T)
        else:
            pi = np.asarray(self.initial, dtype=float)
            if pi.shape != (T.shape[0],) or not np.isclose(pi.sum(), 1.0):
                raise DomainError("initial must be a probability vector matching the alphabet")
            if not np.allclose(pi @ T, pi, atol=1e-10):
                raise DomainError("initial distribution is not stationary for the transition")
        object.__setattr__(self, "initial", pi)

    @property
    def alphabet_size(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def binary_symmetric(cls, p: float) -> "FiniteMarkovSource":
        if not 0.0 < p < 1.0:
            raise DomainError(f"flip probability must lie in (0, 1), got {p}")
        return cls(np.array([[1 - p, p], [p, 1 - p]]))

    @classmethod
    def iid(cls, probs) -> "FiniteMarkovSource":
        probs = np.asarray(probs, dtype=float)
        return cls(np.tile(probs, (probs.size, 1)), probs)


def hamming_distortion(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


@dataclass(frozen=True, eq=False)
class FiniteKernelPair:
    """Reproduction kernel ``q[w, x, y]`` and output kernel ``nu[w, y]``.

    ``w`` indexes the window of the last ``memory`` reproductions, encoded
    base ``|Y|`` with the oldest symbol most significant.
    """

    q_kernel: np.ndarray
    nu_kernel: np.ndarray
    s: float
    distortion_matrix: np.ndarray
    memory: int = 1

    @property
    def normalizer(self) -> np.ndarray:
        """``Z[w, x] = sum_y exp(s rho(x, y)) nu(y | w)``."""
        return _tilt(self.nu_kernel, self.distortion_matrix, self.s)[1]


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Converged kernel pair together with its stationary operating point."""

    kernel: FiniteKernelPair
    source: FiniteMarkovSource
    joint: np.ndarray  # J[w_prev, x, y], stationary
    distortion: float
    rate: float  # bits per sample
    iterations: int = 0
    residual: float = 0.0


def _tilt(nu, rho, s):
    """Return ``(q, Z)`` for the exponential tilt of ``nu`` by ``s * rho``."""
    if s == -math.inf:
        weights = (rho == rho.min(axis=1, keepdims=True)).astype(float)
    else:
        # shift by the row minimum so exp never overflows for very negative s
        weights = np.exp(s * (rho - rho.min(axis=1, keepdims=True)))
    unnorm = weights[None, :, :] * nu[:, None, :]
    Z = unnorm.sum(axis=2)
    if np.any(Z <= 0):
        raise DomainError("output kernel puts no mass on any admissible reproduction")
    q = unnorm / Z[:, :, None]
    if s != -math.inf:
        Z = Z * np.exp(s * rho.min(axis=1))[None, :]
    return q, Z


def _chain_transition(P, q, n_y, memory):
    """Transition matrix of the joint chain on states ``(x, w)``."""
    n_x = P.shape[0]
    n_w = n_y**memory
    T = np.zeros((n_x, n_w, n_x, n_w))
    tail = n_w // n_y
    for w in range(n_w):
        shifted = (w % tail) * n_y
        for y in range(n_y):
            T[:, w, :, shifted + y] += P * q[w, :, y][None, :]
    return T.reshape(n_x * n_w, n_x * n_w)


def _power_step(pi, P, q, n_y, memory):
    n_x = P.shape[0]
    n_w = n_y**memory
    tail = n_w // n_y
    # pi[x', a, r] with w' = a * tail + r; new window = r * n_y + y
    pi3 = pi.reshape(n_x, n_y, tail)
    q4 = q.reshape(n_y, tail, n_x, n_y)
    new = np.einsum("uar,ux,arxy->xry", pi3, P, q4)
    return new.reshape(n_x, n_w)


def _stationary(P, q, n_y, memory, warm=None, tol=1e-14, max_iter=100_000):
    n_x = P.shape[0]
    n_w = n_y**memory
    if n_x * n_w <= _DENSE_STATES:
        T = _chain_transition(P, q, n_y, memory)
        return stationary_distribution(T).reshape(n_x, n_w)
    pi = np.full((n_x, n_w), 1.0 / (n_x * n_w)) if warm is None else warm
    for it in range(max_iter):
        new = _power_step(pi, P, q, n_y, memory)
        if np.abs(new - pi).max() < tol:
            return new
        pi = new
    raise ConvergenceError("power iteration for the stationary joint did not converge",
                           max_iter, float(np.abs(new - pi).max()))


def _triple(pi, P, q):
    """Stationary ``J[w_prev, x, y]`` from the state law ``pi[x_prev, w_prev]``."""
    return np.einsum("uw,ux,wxy->wxy", pi, P, q)


def _operating_point(J, q, rho):
    pw_y = J.sum(axis=1)
    pw = pw_y.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu_induced = np.where(pw > 0, pw_y / pw, 0.0)
        ratio = q / nu_induced[:, None, :]
        terms = np.where(J > 0, J * np.log(ratio), 0.0)
    rate = float(terms.sum()) / LN2
    distortion = float(np.einsum("wxy,xy->", J, rho))
    return distortion, max(rate, 0.0), nu_induced, pw.ravel()


def evaluate_kernel(source, q, rho, memory=1):
    """Stationary joint, distortion and rate of a given reproduction kernel.

    The rate is ``H(Y_t | W_{t-1}) - H(Y_t | X_t, W_{t-1})`` in bits, with
    ``W_{t-1}`` the window of previous reproductions.

    Returns:
        (joint, distortion, rate)
    """
    rho = np.asarray(rho, dtype=float)
    q = np.asarray(q, dtype=float)
    n_y = rho.shape[1]
    pi = _stationary(source.transition, q, n_y, memory)
    J = _triple(pi, source.transition, q)
    D, R, _, _ = _operating_point(J, q, rho)
    return J, D, R


def _check_problem(source, rho, memory):
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != source.alphabet_size:
        raise DomainError(
            f"distortion matrix must have {source.alphabet_size} rows, got shape {rho.shape}"
        )
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise DomainError("distortion matrix entries must be finite and nonnegative")
    if not isinstance(memory, int) or memory < 1:
        raise DomainError(f"memory must be a positive integer, got {memory}")
    if source.alphabet_size * rho.shape[1] ** memory > 4096:
        raise DomainError("alphabet too large to enumerate the joint chain")
    return rho


def solve_stationary(
    source: FiniteMarkovSource,
    distortion_matrix,
    s: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    damping: float = 1.0,
    memory: int = 1,
    nu_init=None,
) -> StationarySolution:
    """Fixed point of the tilt / stationary-joint / induced-output iteration.

    Args:
        source: stationary Markov source.
        distortion_matrix: ``rho[x, y] >= 0``.
        s: Lagrange exponent, ``s <= 0`` (``-inf`` selects the zero-distortion limit).
        tol: sup-norm tolerance on successive output kernels.
        max_iter: iteration cap; exceeding it raises ConvergenceError.
        damping: weight of the new output kernel in each update, in (0, 1].
        memory: number of past reproductions the output kernel conditions on.
        nu_init: optional starting output kernel (default uniform).
    """
    rho = _check_problem(source, distortion_matrix, memory)
    if not s <= 0 or math.isnan(s):
        raise DomainError(f"s must be nonpositive, got {s}")
    if not 0.0 < damping <= 1.0:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    n_y = rho.shape[1]
    n_w = n_y**memory
    P = source.transition

    if nu_init is None:
        nu = np.full((n_w, n_y), 1.0 / n_y)
    else:
        nu = np.array(nu_init, dtype=float)
        if nu.shape != (n_w, n_y):
            raise DomainError(f"nu_init must have shape {(n_w, n_y)}")

    residual = math.inf
    pi = None
    for it in range(1, max_iter + 1):
        q, _ = _tilt(nu, rho, s)
        pi = _stationary(P, q, n_y, memory, warm=pi)
        J = _triple(pi, P, q)
        _, _, nu_induced, pw = _operating_point(J, q, rho)
        # unreachable windows keep their previous output law
        nu_new = np.where(pw[:, None] > 0, nu_induced, nu)
        nu_new = damping * nu_new + (1.0 - damping) * nu
        residual = float(np.abs(nu_new - nu).max())
        nu = nu_new
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"output kernel did not converge in {max_iter} iterations (residual {residual:.3e})",
            max_iter,
            residual,
        )

    q, _ = _tilt(nu, rho, s)
    pi = _stationary(P, q, n_y, memory, warm=pi)
    J = _triple(pi, P, q)
    D, R, _, _ = _operating_point(J, q, rho)
    kernel = FiniteKernelPair(q, nu, float(s), rho, memory)
    return StationarySolution(kernel, source, J, D, R, it, residual)


def max_distortion(source: FiniteMarkovSource, distortion_matrix) -> float:
    """Smallest distortion reachable at zero rate (constant reproduction)."""
    rho = np.asarray(distortion_matrix, dtype=float)
    return float((source.initial @ rho).min())


def min_distortion(source: FiniteMarkovSource, distortion_matrix) -> float:
    rho = np.asarray(distortion_matrix, dtype=float)
    return float(source.initial @ rho.min(axis=1))


def _zero_rate_solution(source, rho, memory):
    n_y = rho.shape[1]
    best = int(np.argmin(source.initial @ rho))
    nu = np.zeros((n_y**memory, n_y))
    nu[:, best] = 1.0
    q = np.repeat(nu[:, None, :], source.alphabet_size, axis=1)
    J, D, _ = evaluate_kernel(source, q, rho, memory)
    return StationarySolution(FiniteKernelPair(q, nu, 0.0, rho, memory), source, J, D, 0.0)


def solve_for_distortion(
    source: FiniteMarkovSource,
    distortion_matrix,
    D_target: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    damping: float = 1.0,
    memory: int = 1,
    d_tol: float = 1e-9,
) -> StationarySolution:
    """Stationary NRDF at a prescribed distortion level.

    Root-finds ``s <= 0`` with ``D(s) = D_target``; the bracket's lower end
    starts at -1 and doubles until it undershoots the target. At or above
    the zero-rate distortion the constant reproduction is returned with
    ``s = 0``.
    """
    rho = _check_problem(source, distortion_matrix, memory)
    d_max = max_distortion(source, rho)
    d_min = min_distortion(source, rho)
    if D_target >= d_max:
        return _zero_rate_solution(source, rho, memory)
    if D_target < d_min - d_tol:
        raise DomainError(f"distortion {D_target} below the attainable minimum {d_min}")
    opts = dict(tol=tol, max_iter=max_iter, damping=damping, memory=memory)
    if D_target <= d_min + d_tol:
        return solve_stationary(source, rho, -math.inf, **opts)

    warm = {"nu": None}

    def solve_at(s):
        sol = solve_stationary(source, rho, s, nu_init=warm["nu"], **opts)
        warm["nu"] = sol.kernel.nu_kernel
        return sol

    s_lo, s_hi = -1.0, 0.0
    lo_sol = solve_at(s_lo)
    while lo_sol.distortion >= D_target:
        s_hi = s_lo
        s_lo *= 2.0
        if s_lo < -1e6:
            raise ConvergenceError("could not bracket the target distortion in s", None, None)
        lo_sol = solve_at(s_lo)

    cache = {}

    def gap(s):
        sol = solve_at(s)
        cache[s] = sol
        return sol.distortion - D_target

    if s_hi == 0.0:
        # D(0) may exceed d_max for a non-optimal output law; probe just below 0
        s_hi = -1e-12
    s_root = optimize.brentq(gap, s_lo, s_hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    sol = cache.get(s_root) or solve_at(s_root)
    if abs(sol.distortion - D_target) > d_tol:
        raise ConvergenceError(
            f"distortion root-finding missed the target by {abs(sol.distortion - D_target):.3e}",
            None,
            abs(sol.distortion - D_target),
        )
    return sol


# ---------------------------------------------------------------------------
# Finite-horizon dual certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Feasible multipliers for the horizon ``n`` dual problem.

    ``lam[i]`` has one axis per symbol of ``(y_-1, x_0, y_0, ..., y_{i-1}, x_i)``.
    """

    s: float
    lam: list
    value: float  # bits, for the whole horizon
    n: int
    D: float
    source: FiniteMarkovSource = field(repr=False)
    distortion_matrix: np.ndarray = field(repr=False)


def horizon_joint(source: FiniteMarkovSource, kernel: FiniteKernelPair, n: int) -> np.ndarray:
    """Joint law of ``(y_-1, x_0, y_0, ..., x_n, y_n)`` started in stationarity.

    ``(x_-1, y_-1)`` is drawn from the stationary joint of the chain and
    ``x_-1`` is summed out.
    """
    if kernel.memory != 1:
        raise DomainError("horizon enumeration supports memory-1 kernels only")
    if n < 0:
        raise DomainError("horizon must be nonnegative")
    P, q = source.transition, kernel.q_kernel
    n_x, n_y = P.shape[0], q.shape[2]
    if (n_x * n_y) ** (n + 1) * n_y > 2**24:
        raise DomainError(f"horizon n={n} too long to enumerate")
    pi = _stationary(P, q, n_y, 1)
    joint = np.einsum("uw,ux,wxy->wxy", pi, P, q)
    # last two axes are (x_{i-1}, y_{i-1}); append (x_i, y_i)
    step = P[:, None, :, None] * q[None, :, :, :]
    for _ in range(n):
        joint = joint[..., None, None] * step
    return joint


def _stage_marginals(joint, n):
    """Marginals over ``(y_-1, x_0, ..., y_{i-1}, x_i, y_i)`` for each stage i."""
    out = []
    for i in range(n + 1):
        keep = 2 * i + 3
        axes = tuple(range(keep, joint.ndim))
        out.append(joint.sum(axis=axes) if axes else joint)
    return out


def directed_information(source: FiniteMarkovSource, kernel: FiniteKernelPair, n: int) -> float:
    """Exact directed information (bits) from ``x^n`` to ``y^n`` over ``n+1`` stages.

    Uses the true output predictive law ``P(y_i | y^{i-1})`` obtained by
    enumeration, not the kernel's ``nu``.
    """
    joint = horizon_joint(source, kernel, n)
    total = 0.0
    q = kernel.q_kernel
    for i, M in enumerate(_stage_marginals(joint, n)):
        # M axes: y_-1, x_0, y_0, ..., y_{i-1}, x_i, y_i
        x_axes = tuple(range(1, M.ndim, 2))
        py = M.sum(axis=x_axes, keepdims=True)
        py_prev = py.sum(axis=M.ndim - 1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            pred = py / py_prev
        qi = _broadcast_q(q, M.ndim)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(M > 0, M * np.log(qi / pred), 0.0)
        total += float(terms.sum())
    return total / LN2


def _broadcast_q(q, ndim):
    """View ``q[y_{i-1}, x_i, y_i]`` against the last three axes of an ndim array."""
    shape = [1] * (ndim - 3) + list(q.shape)
    return q.reshape(shape)


def _constraint_values(joint, n, s, lam, rho):
    """Left-hand sides of the dual feasibility constraints, one array per stage.

    Entry ``[y_-1, y_0, ..., y_{i-1}, y_i]`` of stage i is
    ``sum_{x^i} exp(s rho(x_i, y_i)) lam_i(x^i, y^{i-1}) P(x^i | y^{i-1})``.
    Histories of probability zero get value 0.
    """
    out = []
    for i, M in enumerate(_stage_marginals(joint, n)):
        prefix = M.sum(axis=M.ndim - 1)  # drop y_i: axes y_-1, x_0, ..., x_i
        x_axes = tuple(range(1, prefix.ndim, 2))
        py = prefix.sum(axis=x_axes, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(py > 0, prefix / py, 0.0)
        weighted = cond * np.asarray(lam[i], dtype=float)
        tilt = np.exp(s * rho) if s != -math.inf else (rho == 0).astype(float)
        tilt = tilt.reshape([1] * (prefix.ndim - 1) + list(rho.shape))
        lhs = (weighted[..., None] * tilt).sum(axis=tuple(a for a in x_axes))
        out.append(lhs)
    return out


def dual_certificate_value(
    source: FiniteMarkovSource,
    distortion_matrix,
    D: float,
    n: int,
    s: float,
    lam,
    reference: FiniteKernelPair,
    feas_tol: float = 1e-12,
) -> DualCertificate:
    """Evaluate a dual certificate and check its feasibility.

    The value is ``s D (n+1) + sum_i E[log lam_i(X^i, Y^{i-1})]`` in bits,
    with expectations and the conditionals ``P(x^i | y^{i-1})`` taken under
    the joint induced by ``reference``. When every constraint holds the value
    lower-bounds the horizon-n NRDF.

    Raises:
        InfeasibleCertificateError: some constraint exceeds 1 by more than ``feas_tol``.
    """
    rho = np.asarray(distortion_matrix, dtype=float)
    if not s <= 0:
        raise DomainError(f"s must be nonpositive, got {s}")
    if len(lam) != n + 1:
        raise DomainError(f"need {n + 1} multiplier arrays, got {len(lam)}")
    joint = horizon_joint(source, reference, n)
    for i, L in enumerate(lam):
        L = np.asarray(L)
        if np.any(L < 0):
            raise DomainError(f"multipliers of stage {i} must be nonnegative")

    lhs = _constraint_values(joint, n, s, lam, rho)
    for i, arr in enumerate(lhs):
        worst = int(np.argmax(arr))
        excess = float(arr.flat[worst]) - 1.0
        if excess > feas_tol:
            idx = np.unravel_index(worst, arr.shape)
            raise InfeasibleCertificateError(
                f"constraint of stage {i} violated at y-history {idx} by {excess:.3e}",
                stage=i,
                index=tuple(int(k) for k in idx),
                excess=excess,
            )

    value = s * D * (n + 1) if s != 0 else 0.0
    for i, M in enumerate(_stage_marginals(joint, n)):
        prefix = M.sum(axis=M.ndim - 1)
        L = np.broadcast_to(np.asarray(lam[i], dtype=float), prefix.shape)
        if np.any((L == 0) & (prefix > 0)):
            value = -math.inf
            break
        with np.errstate(divide="ignore"):
            value += float(np.where(prefix > 0, prefix * np.log(np.where(L > 0, L, 1.0)), 0.0).sum())
    return DualCertificate(float(s), [np.asarray(L, dtype=float) for L in lam],
                           value / LN2, n, float(D), source, rho)


def primal_multipliers(solution: StationarySolution, n: int):
    """Multipliers ``lam_i = 1 / Z(y_{i-1}, x_i)`` read off a converged kernel.

    Each stage is rescaled by its largest constraint value so the result is
    feasible exactly; the rescaling is ~1 when the output process of the
    kernel is Markov with transition ``nu``.
    """
    kernel = solution.kernel
    if kernel.memory != 1:
        raise DomainError("multipliers are built for memory-1 kernels only")
    Z = kernel.normalizer  # Z[y_prev, x]
    lam = []
    for i in range(n + 1):
        shape = [solution.source.alphabet_size if k % 2 else kernel.q_kernel.shape[2]
                 for k in range(2 * i + 2)]
        base = (1.0 / Z).reshape([1] * (2 * i) + list(Z.shape))
        lam.append(np.broadcast_to(base, shape).copy())
    joint = horizon_joint(solution.source, kernel, n)
    lhs = _constraint_values(joint, n, kernel.s, lam, kernel.distortion_matrix)
    return [L / max(float(arr.max()), 1e-300) for L, arr in zip(lam, lhs)]


@dataclass(frozen=True)
class GapReport:
    primal_value: float
    dual_value: float
    gap: float
    optimal: bool
    n: int


def certify(primal: StationarySolution, dual: DualCertificate, tol: float = 1e-6) -> GapReport:
    """Compare the primal directed information with a dual certificate.

    Both values refer to the whole horizon ``n + 1`` stages, in bits.
    """
    same_source = np.array_equal(primal.source.transition, dual.source.transition)
    same_rho = np.array_equal(primal.kernel.distortion_matrix, dual.distortion_matrix)
    if not (same_source and same_rho):
        raise DomainError("primal and dual refer to different problem instances")
    # with s = 0 the dual value carries no dependence on D
    if primal.rate > 0 and dual.s != 0 and abs(primal.distortion - dual.D) > 1e-6:
        raise DomainError(
            f"primal distortion {primal.distortion} does not match dual target {dual.D}"
        )
    if primal.rate == 0:
        pv = 0.0
    else:
        pv = directed_information(primal.source, primal.kernel, dual.n)
    gap = pv - dual.value
    if gap < -1e-9:
        raise ConvergenceError(f"dual value exceeds primal by {-gap:.3e}", None, gap)
    return GapReport(pv, dual.value, gap, gap <= tol, dual.n)


def trivial_certificate(source, distortion_matrix, n, reference):
    """The always-feasible certificate ``s = 0, lam = 1`` (value 0)."""
    shapes = []
    n_x, n_y = source.alphabet_size, reference.q_kernel.shape[2]
    for i in range(n + 1):
        shapes.append(np.ones([n_x if k % 2 else n_y for k in range(2 * i + 2)]))
    return dual_certificate_value(source, distortion_matrix, 0.0, n, 0.0, shapes, reference)

