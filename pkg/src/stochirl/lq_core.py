"""Ground-truth stochastic LQ machinery.

The controlled system is the Ito SDE

    dX = (A X + B u) ds + (C X + D u) dW,     u = K X,

driven by a scalar Brownian motion.  Everything here assumes the model is
known; the functions double as the verification oracle for the data-driven
code in :mod:`stochirl.irl_model_free`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve

from .errors import (
    DefinitenessError,
    DimensionError,
    IterationError,
    StabilityError,
)
from .matops import kron, symmetrize

__all__ = [
    "SystemDynamics",
    "CostWeights",
    "as_gain",
    "second_moment_generator",
    "spectral_abscissa",
    "is_ms_stabilizing",
    "LyapunovSolver",
    "solve_lyapunov",
    "optimal_gain",
    "solve_sare",
    "sare_residual",
    "lyapunov_residual",
    "theorem1_residuals",
    "moment_horizon",
    "CostEstimate",
    "evaluate_cost_mc",
]


def _mat(x, name):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} has non-finite entries")
    return a


def _column(x, rows, name):
    """Coerce to a 2-D matrix with ``rows`` rows; 1-D input is a column."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and a.size == rows:
        a = a.reshape(rows, 1)
    return _mat(a, name)


@dataclass(frozen=True)
class SystemDynamics:
    """Coefficients ``A, C (n x n)`` and ``B, D (n x m)`` of the linear Ito system."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = _column(self.B, n, "B")
        C = _mat(self.C, "C")
        D = _column(self.D, n, "D")
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        if C.shape != (n, n):
            raise DimensionError(f"C must be {n}x{n}, got {C.shape}")
        if D.shape != B.shape:
            raise DimensionError(f"D must match B's shape {B.shape}, got {D.shape}")
        for name, val in zip("ABCD", (A, B, C, D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def closed_loop(self, K):
        K = as_gain(K, self)
        return self.A + self.B @ K, self.C + self.D @ K

    @property
    def is_deterministic(self):
        return not (np.any(self.C) or np.any(self.D))


def _check_pd(M, name, strict=True):
    M = _mat(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise DefinitenessError(f"{name} is not symmetric")
    M = symmetrize(M)
    lam = np.linalg.eigvalsh(M).min()
    if (strict and lam <= 0.0) or (not strict and lam < -1e-12 * max(1.0, np.abs(M).max())):
        kind = "positive definite" if strict else "positive semidefinite"
        raise DefinitenessError(f"{name} is not {kind} (min eigenvalue {lam:.3e})")
    return M


@dataclass(frozen=True)
class CostWeights:
    """State weight ``Q`` and control weight ``R``, both symmetric positive definite."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _check_pd(self.Q, "Q")
        R = _check_pd(self.R, "R")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


def as_gain(K, sys):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (sys.m, sys.n):
        raise DimensionError(f"gain must be {sys.m}x{sys.n}, got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise DimensionError("gain has non-finite entries")
    return K


def second_moment_generator(sys, K):
    """Matrix acting on ``vec(E[X X^T])`` for the closed loop ``u = K X``."""
    Acl, Ccl = sys.closed_loop(K)
    eye = np.eye(sys.n)
    return kron(eye, Acl) + kron(Acl, eye) + kron(Ccl, Ccl)


def spectral_abscissa(M):
    return float(np.max(np.linalg.eigvals(M).real))


def is_ms_stabilizing(sys, K):
    """True iff ``E[X^T X] -> 0`` under ``u = K X``."""
    return spectral_abscissa(second_moment_generator(sys, K)) < 0.0


def _lyapunov_operator(sys, K):
    Acl, Ccl = sys.closed_loop(K)
    eye = np.eye(sys.n)
    return kron(Acl.T, eye) + kron(eye, Acl.T) + kron(Ccl.T, Ccl.T)


class LyapunovSolver:
    """Factorized generalized Lyapunov operator for a fixed gain.

    Solves ``P Acl + Acl^T P + Ccl^T P Ccl = -M`` for any right-hand side
    ``M`` with one LU factorization, which pays off when the same gain is
    evaluated against many weights.
    """

    def __init__(self, sys, K):
        self.sys = sys
        self.K = as_gain(K, sys)
        if not is_ms_stabilizing(sys, self.K):
            raise StabilityError("gain is not mean-square stabilizing; Lyapunov solve undefined")
        self._lu = lu_factor(_lyapunov_operator(sys, self.K))

    def __call__(self, M):
        n = self.sys.n
        M = _mat(M, "M")
        if M.shape != (n, n):
            raise DimensionError(f"M must be {n}x{n}, got {M.shape}")
        return self.solve_unchecked(M)

    def solve_unchecked(self, M):
        """Same as calling the solver, without validating ``M`` (hot loops)."""
        n = self.sys.n
        p = lu_solve(self._lu, -M.reshape(-1, order="F"), check_finite=False)
        return symmetrize(p.reshape(n, n, order="F"))


def solve_lyapunov(sys, K, M):
    """Solve ``P Acl + Acl^T P + Ccl^T P Ccl = -M`` for symmetric ``P``.

    ``Acl = A + B K`` and ``Ccl = C + D K``.  The linear system is formed
    explicitly through Kronecker products, which is exact and cheap at the
    dimensions this package targets.

    Raises
    ------
    StabilityError
        If ``K`` is not mean-square stabilizing.
    """
    return LyapunovSolver(sys, K)(M)


def lyapunov_residual(sys, K, P, M):
    Acl, Ccl = sys.closed_loop(K)
    return float(np.linalg.norm(P @ Acl + Acl.T @ P + Ccl.T @ P @ Ccl + M))


def optimal_gain(sys, P, R):
    """``K = -(R + D^T P D)^{-1} (B^T P + D^T P C)``."""
    P = _mat(P, "P")
    R = _mat(R, "R")
    if R.shape != (sys.m, sys.m):
        raise DimensionError(f"R must be {sys.m}x{sys.m}, got {R.shape}")
    H = symmetrize(R + sys.D.T @ P @ sys.D)
    _require_pd(H)
    return -np.linalg.solve(H, sys.B.T @ P + sys.D.T @ P @ sys.C)


def _require_pd(H):
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise DefinitenessError("R + D^T P D is not positive definite") from None


def solve_sare(sys, weights, K_init, tol=1e-10, max_iter=200, return_iterates=False):
    """Stabilizing solution of the stochastic algebraic Riccati equation.

    Kleinman-type policy iteration: evaluate the current gain with a
    Lyapunov solve, then improve it with :func:`optimal_gain`.

    Returns ``(P, K)``; with ``return_iterates`` a third element lists the
    ``(P_j, K_j)`` pairs visited.
    """
    K = as_gain(K_init, sys)
    if not is_ms_stabilizing(sys, K):
        raise StabilityError("initial gain for the SARE iteration is not mean-square stabilizing")
    Q, R = weights.Q, weights.R
    iterates = []
    P_prev = None
    delta = np.inf
    for _ in range(max_iter):
        P = solve_lyapunov(sys, K, Q + K.T @ R @ K)
        K = optimal_gain(sys, P, R)
        iterates.append((P, K))
        if P_prev is not None:
            delta = np.linalg.norm(P - P_prev)
            if delta < tol * max(1.0, np.linalg.norm(P)):
                break
        P_prev = P
    else:
        raise IterationError(
            f"SARE policy iteration did not converge in {max_iter} steps "
            f"(last change {delta:.3e})",
            residual=sare_residual(sys, weights, P),
        )
    if return_iterates:
        return P, K, iterates
    return P, K


def sare_residual(sys, weights, P):
    """Frobenius norm of the SARE left-hand side at ``P``."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    Q, R = weights.Q, weights.R
    G = B.T @ P + D.T @ P @ C
    H = R + D.T @ P @ D
    _require_pd(symmetrize(H))
    lhs = P @ A + A.T @ P + C.T @ P @ C + Q - G.T @ np.linalg.solve(H, G)
    return float(np.linalg.norm(lhs))


def theorem1_residuals(sys, weights, P, K_T):
    """Residuals of the learner SARE and of the Lyapunov equation under ``K_T``.

    Both vanishing certifies that ``optimal_gain(sys, P, R) == K_T``.
    """
    K_T = as_gain(K_T, sys)
    r_sare = sare_residual(sys, weights, P)
    r_lyap = lyapunov_residual(sys, K_T, P, weights.Q + K_T.T @ weights.R @ K_T)
    return r_sare, r_lyap


def moment_horizon(sys, K, x0, decay=1e-6, step=0.05, t_max=1e4):
    """First time at which ``E[X^T X]`` falls below ``decay`` of its start value.

    The second moment is propagated exactly with the matrix exponential of
    :func:`second_moment_generator`.
    """
    x0 = np.asarray(x0, dtype=float)
    s = np.outer(x0, x0).reshape(-1, order="F")
    tr0 = float(x0 @ x0)
    if tr0 == 0.0:
        return 0.0
    if not is_ms_stabilizing(sys, K):
        raise StabilityError("gain is not mean-square stabilizing")
    E = expm(second_moment_generator(sys, K) * step)
    diag = np.arange(sys.n) * (sys.n + 1)
    t = 0.0
    while t < t_max:
        s = E @ s
        t += step
        if s[diag].sum() <= decay * tr0:
            return t
    raise IterationError(f"second moment did not decay below {decay} by t={t_max}")


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    horizon: float
    paths: int


def evaluate_cost_mc(sys, weights, K, x0, horizon=None, paths=1000, step_h=1e-3,
                     seed=0, antithetic=True):
    """Monte Carlo estimate of the infinite-horizon quadratic cost of ``u = K X``.

    The horizon defaults to :func:`moment_horizon`, so truncation error is
    below ``1e-6`` of the initial second moment.  With antithetic sampling the
    standard error is computed over independent path pairs.
    """
    from .sde_sim import LinearPolicy, SimConfig, collect_window_functionals

    K = as_gain(K, sys)
    if not is_ms_stabilizing(sys, K):
        raise StabilityError("cannot evaluate the cost of a non-stabilizing gain")
    if horizon is None:
        horizon = moment_horizon(sys, K, x0)
    steps = max(1, int(np.ceil(horizon / step_h)))
    cfg = SimConfig(
        step_h=step_h,
        window_dt=steps * step_h,
        windows_l=1,
        paths_M=paths,
        seed=seed,
        x0=x0,
        antithetic=antithetic,
    )
    wf = collect_window_functionals(sys, LinearPolicy(K), cfg, keep_paths=True)
    from .matops import svec

    per_path = wf.per_path
    cost = per_path.i_xx[:, 0, :] @ weights.Q.reshape(-1) + per_path.delta_uu[:, 0, :] @ svec(weights.R)
    if antithetic and paths % 2 == 0:
        units = 0.5 * (cost[0::2] + cost[1::2])
    else:
        units = cost
    se = float(np.std(units, ddof=1) / np.sqrt(units.size)) if units.size > 1 else np.inf
    return CostEstimate(float(np.mean(cost)), se, steps * step_h, paths)
