"""Model-based inverse RL: recover a state weight ``Q`` that makes ``K_T`` optimal.

Each iteration, with the learner's ``R`` fixed and the expert gain ``K_T``:

1. policy correction: ``P_i`` solves the Lyapunov equation of the closed
   loop under ``K_T`` with weight ``Q_i + K_T^T R K_T``;
2. policy update: ``K_{i+1} = -(R + D^T P_i D)^{-1} (B^T P_i + D^T P_i C)``;
3. weight reconstruction:
   ``Q_{i+1} = -A^T P_i - P_i A - C^T P_i C + K_{i+1}^T (R + D^T P_i D) K_{i+1}``.

Since ``P_i`` satisfies the Lyapunov equation exactly, the learner Riccati
residual of ``(Q_i, P_i)`` equals ``Q_{i+1} - Q_i``.  The run therefore
stops on ``||Q_{i+1} - Q_i|| <= eps1`` and returns ``(Q_i, P_i, K_{i+1})``,
a triple whose Riccati residual is bounded by ``eps1``.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import DefinitenessError, IterationError, MonotonicityError, StabilityError
from .lq_core import (
    LyapunovSolver,
    as_gain,
    solve_sare,
)
from .matops import kron, svec, symmetrize, vec

__all__ = [
    "IrlIterate",
    "IrlResult",
    "NonuniquenessReport",
    "STOP_MODES",
    "run_model_based_irl",
    "verify_nonuniqueness",
    "write_history_csv",
]

STOP_MODES = ("q", "gain", "either")
# a weight step this many times larger than the initial weight counts as divergence
_GROWTH_CAP = 1e10


@dataclass
class IrlIterate:
    """State of one iteration ``i``.

    ``q_change`` is ``||Q_i - Q_{i-1}||`` (NaN for ``i = 0``) and
    ``q_step`` is ``||Q_{i+1} - Q_i||``; ``gain_gap`` is
    ``||K_{i+1} - K_T||``.  All norms are Frobenius.
    """

    index: int
    Q: np.ndarray
    P: np.ndarray
    K_next: np.ndarray
    Q_next: np.ndarray
    residual_eq13: float
    stabilizing: bool
    q_change: float
    q_step: float
    gain_gap: float
    min_eig_dq: float


@dataclass
class IrlResult:
    history: List[IrlIterate]
    Q_star: np.ndarray
    P_star: np.ndarray
    K_star: np.ndarray
    K_target: np.ndarray
    R: np.ndarray
    iterations: int
    converged: bool
    stop_reason: str
    extras: dict = field(default_factory=dict)

    @property
    def gain_error(self):
        return float(np.linalg.norm(self.K_star - self.K_target))


def _check_stop(stop):
    if stop not in STOP_MODES:
        raise ValueError(f"stop must be one of {STOP_MODES}, got {stop!r}")


def _require_spd(M, name):
    lam = float(np.linalg.eigvalsh(M).min())
    if not lam > 0.0:
        raise DefinitenessError(f"{name} is not positive definite (min eigenvalue {lam:.3e})")


def _fro(M):
    v = M.ravel()
    return math.sqrt(float(v @ v))


class _StabilityProbe:
    """Mean-square stability test specialized to one system (no re-validation)."""

    def __init__(self, sys):
        self.sys = sys
        self.eye = np.eye(sys.n)

    def __call__(self, K):
        Acl = self.sys.A + self.sys.B @ K
        Ccl = self.sys.C + self.sys.D @ K
        G = kron(self.eye, Acl) + kron(Acl, self.eye) + kron(Ccl, Ccl)
        return bool(np.linalg.eigvals(G).real.max() < 0.0)


def stop_decision(stop, q_step, gain_gap, eps1, gain_tol):
    """Return the stop reason or ``None``; shared by both IRL variants."""
    if stop in ("q", "either") and q_step <= eps1:
        return "q_change"
    if stop in ("gain", "either") and gain_gap < gain_tol:
        return "gain"
    return None


def run_model_based_irl(sys, R, Q0, K_T, eps1=1e-6, max_iter=10000, stop="q",
                        gain_tol=0.01, mono_tol=1e-8):
    """Model-based IRL iteration with full history.

    Parameters
    ----------
    sys : SystemDynamics
    R, Q0 : learner control weight and initial state weight, both SPD
    K_T : expert gain, must be mean-square stabilizing
    eps1 : tolerance on ``||Q_{i+1} - Q_i||_F``
    max_iter : iteration budget; exhausting it returns ``converged=False``
    stop : ``"q"`` (weight change), ``"gain"`` (``||K_{i+1} - K_T|| < gain_tol``)
        or ``"either"``
    mono_tol : allowed negative eigenvalue of ``Q_{i+1} - Q_i``, relative
        to ``max(1, ||Q_i||)``

    Raises
    ------
    IterationError
        When the weights grow without bound (or ``P`` stops being finite).
    MonotonicityError
        When ``Q_{i+1} - Q_i`` has an eigenvalue below ``-mono_tol`` or
        ``Q_{i+1}`` is not positive definite.
    StabilityError
        When an updated gain is not mean-square stabilizing.
    """
    _check_stop(stop)
    K_T = as_gain(K_T, sys)
    R = symmetrize(np.atleast_2d(np.asarray(R, dtype=float)))
    Q = symmetrize(np.atleast_2d(np.asarray(Q0, dtype=float)))
    _require_spd(R, "R")
    _require_spd(Q, "Q0")
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    lyap = LyapunovSolver(sys, K_T)
    KRK = K_T.T @ R @ K_T
    Acl, Ccl = sys.closed_loop(K_T)
    stable = _StabilityProbe(sys)
    history = []
    reason = "max_iter"
    growth_cap = _GROWTH_CAP * max(1.0, _fro(Q))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(max_iter):
            M = Q + KRK
            P = lyap.solve_unchecked(M)
            if not np.isfinite(P).all():
                raise IterationError(
                    f"weight iteration diverged at iteration {i}",
                    residual=history[-1].gain_gap if history else None,
                    history=history,
                )
            DtP = D.T @ P
            H = symmetrize(R + DtP @ D)
            if not np.linalg.eigvalsh(H)[0] > 0.0:
                raise DefinitenessError(f"R + D^T P D is not positive definite at iteration {i}")
            K_next = -np.linalg.solve(H, B.T @ P + DtP @ C)
            PA = P @ A
            Q_next = symmetrize(K_next.T @ H @ K_next - C.T @ P @ C) - PA - PA.T
            dQ = Q_next - Q
            # Lyapunov certificate: with K' computed from P, the closed-loop
            # operator gives L_{K'}(P) = -(Q_next + K'^T R K'), so P > 0 and
            # W > 0 prove K' mean-square stabilizing.  If the certificate
            # fails, the spectral test decides.
            W = Q_next + K_next.T @ R @ K_next
            lam_P, lam_W, lam_dQ = np.linalg.eigvalsh(np.stack([P, W, dQ]))[:, 0]
            it = IrlIterate(
                index=i,
                Q=Q,
                P=P,
                K_next=K_next,
                Q_next=Q_next,
                residual_eq13=_fro(P @ Acl + Acl.T @ P + Ccl.T @ P @ Ccl + M),
                stabilizing=bool(lam_P > 0.0 and lam_W > 0.0) or stable(K_next),
                q_change=history[-1].q_step if history else float("nan"),
                q_step=_fro(dQ),
                gain_gap=_fro(K_next - K_T),
                min_eig_dq=float(lam_dQ),
            )
            history.append(it)
            if not it.stabilizing:
                err = StabilityError(f"updated gain at iteration {i} is not mean-square stabilizing")
                err.history = history
                raise err
            if not it.q_step <= growth_cap:
                raise IterationError(
                    f"weight iteration diverged at iteration {i} (|Q_next - Q| = {it.q_step:.3e}); "
                    "the initial weight may exceed every equivalent weight",
                    residual=it.gain_gap,
                    history=history,
                )
            if it.min_eig_dq < -mono_tol * max(1.0, _fro(Q)):
                raise MonotonicityError(
                    f"Q_{i + 1} - Q_{i} has eigenvalue {it.min_eig_dq:.3e}", history
                )
            reason = stop_decision(stop, it.q_step, it.gain_gap, eps1, gain_tol)
            if reason:
                break
            if it.min_eig_dq < 0.0 and not np.linalg.eigvalsh(Q_next)[0] > 0.0:
                raise MonotonicityError(f"Q_{i + 1} lost positive definiteness", history)
            Q = Q_next
    last = history[-1]
    return IrlResult(
        history=history,
        Q_star=last.Q,
        P_star=last.P,
        K_star=last.K_next,
        K_target=K_T,
        R=R,
        iterations=len(history),
        converged=bool(reason),
        stop_reason=reason or "max_iter",
    )


@dataclass(frozen=True)
class NonuniquenessReport:
    """Relative residuals of the two non-uniqueness identities.

    ``gain_identity`` compares ``B^T P_o + D^T P_o C`` with
    ``(R_o + D^T P_o D)(R_T + D^T P_T D)^{-1}(B^T P_T + D^T P_T C)`` and is
    scaled by ``||(R_T + D^T P_T D) K_T||``; ``riccati_identity`` is the
    offset Riccati equation scaled by ``||Q_T||``.
    """

    gain_identity: float
    riccati_identity: float
    P_offset: np.ndarray
    Q_offset: np.ndarray
    R_offset: np.ndarray

    @property
    def worst(self):
        return max(self.gain_identity, self.riccati_identity)


def verify_nonuniqueness(sys, weights_T, R_alt, result: IrlResult, K_init=None):
    """Check that the learned ``(Q*, P*)`` differ from ``(Q_T, P_T)`` by a valid offset.

    ``K_init`` seeds the ground-truth Riccati solve and defaults to the
    learned gain.
    """
    K_init = result.K_star if K_init is None else K_init
    P_T, _ = solve_sare(sys, weights_T, K_init)
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R_alt = np.atleast_2d(np.asarray(R_alt, dtype=float))
    K_T = result.K_target
    R_o = weights_T.R - R_alt
    P_o = P_T - result.P_star
    Q_o = weights_T.Q - result.Q_star
    H_T = weights_T.R + D.T @ P_T @ D
    G_T = B.T @ P_T + D.T @ P_T @ C
    lhs = B.T @ P_o + D.T @ P_o @ C
    rhs = (R_o + D.T @ P_o @ D) @ np.linalg.solve(H_T, G_T)
    r25 = np.linalg.norm(lhs - rhs) / np.linalg.norm(H_T @ K_T)
    ric = P_o @ A + A.T @ P_o + C.T @ P_o @ C + Q_o - K_T.T @ (R_o + D.T @ P_o @ D) @ K_T
    r26 = np.linalg.norm(ric) / np.linalg.norm(weights_T.Q)
    return NonuniquenessReport(float(r25), float(r26), P_o, Q_o, R_o)


def history_header(n, m):
    iu, ju = np.triu_indices(n)
    cols = ["i"]
    cols += [f"svecQ_{a + 1}{b + 1}" for a, b in zip(iu, ju)]
    cols += [f"svecP_{a + 1}{b + 1}" for a, b in zip(iu, ju)]
    cols += [f"K_{a + 1}{b + 1}" for b in range(n) for a in range(m)]
    cols += ["q_change", "gain_gap"]
    return cols


def _fmt(v):
    return format(float(v), ".17g")


def write_history_csv(result: IrlResult, fh, extra_columns=None):
    """Iterate history as CSV.

    Columns: ``i``, ``svec(Q_i)``, ``svec(P_i)``, ``vec(K_{i+1})`` (column
    major), ``||Q_i - Q_{i-1}||`` and ``||K_{i+1} - K_T||``.
    ``extra_columns`` maps a column name to a per-iterate attribute name.
    """
    first = result.history[0]
    n, m = first.Q.shape[0], first.K_next.shape[0]
    extra_columns = extra_columns or {}
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(history_header(n, m) + list(extra_columns))
    for it in result.history:
        row = [str(it.index)]
        row += [_fmt(v) for v in svec(it.Q)]
        row += [_fmt(v) for v in svec(it.P)]
        row += [_fmt(v) for v in vec(it.K_next)]
        row += [_fmt(it.q_change), _fmt(it.gain_gap)]
        row += [_fmt(getattr(it, attr)) for attr in extra_columns.values()]
        writer.writerow(row)
