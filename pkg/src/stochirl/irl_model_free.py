"""Model-free, off-policy inverse RL from one batch of behavior data.

Behavior data come from ``u = K0 x + e`` with a probing signal ``e``.
Applying Ito's formula to ``X^T P_i X`` over each window and using the
Lyapunov equation of ``P_i`` under the expert gain ``K_T`` gives, row by
row over the ``l`` windows,

    delta_xx svec(P_i)
      + [2 I_xx (I_n kron K_T^T) - 2 I_xu] vec(Bt_i)
      + [I_xx lbar(K_T) - delta_uu] svec(Dt_i)   = -I_xx vec(Q_i + K_T^T R K_T)

with ``Bt_i = B^T P_i + D^T P_i C`` (``m x n``, column-major ``vec``) and
``Dt_i = D^T P_i D``.  This is the P-step.  The gain update is
``K_{i+1} = -(R + Dt_i)^{-1} Bt_i`` and the weight update (Q-step) solves

    I_xx T svec(Q_{i+1}) = -delta_xx svec(P_i) + 2 I_xu vec(Bt_i)
                           + delta_uu svec(Dt_i) + I_xx lbar(K_{i+1}) svec(R + Dt_i).

The integral term ``int u^T Dt u`` enters the Q-step with coefficient one,
as Ito's formula dictates.

Two Q-step variants are offered.  ``"raw"`` uses the measured
``delta_xx svec(P_i)`` exactly as written above.  ``"projected"`` (the
default) replaces it by the value fitted in the P-step, i.e. it drops the
P-step least-squares residual from the Q-step right-hand side.  On exact
data both coincide.  On Monte Carlo data the raw variant feeds the
P-step residual back into ``Q`` every iteration, and the accumulated
noise drifts the weight along directions the gain does not see.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import tomli_w

from .errors import (
    DefinitenessError,
    DimensionError,
    ExcitationError,
    SingularSystemError,
    StabilityError,
)
from .irl_model_based import (
    IrlIterate,
    IrlResult,
    _StabilityProbe,
    _check_stop,
    _fro,
    stop_decision,
)
from .lq_core import as_gain, is_ms_stabilizing
from .matops import (
    duplication,
    kron,
    lbar,
    least_squares,
    numeric_rank,
    smat,
    svec,
    sym_dim,
    symmetrize,
    unvec,
)
from .sde_sim import (
    LinearPolicy,
    WindowFunctionals,
    collect_window_functionals,
    expected_window_functionals,
)

__all__ = [
    "Q_MODES",
    "RegressionData",
    "ModelFreeIterate",
    "PStepResult",
    "required_windows",
    "collect_behavior_data",
    "solve_p_step",
    "solve_q_step",
    "run_model_free_irl",
    "save_regression_data",
    "load_regression_data",
]

Q_MODES = ("projected", "raw")
BUNDLE_VERSION = 1
_BLOCKS = ("delta_xx", "delta_uu", "i_xx", "i_xu")


def required_windows(n, m):
    """Minimum window count ``n(n+1)/2 + m n + m(m+1)/2``."""
    return sym_dim(n) + m * n + sym_dim(m)


@dataclass
class RegressionData:
    """Regression blocks assembled once from behavior data.

    ``Phi_p`` columns are ordered ``[svec(P); vec(Bt) column-major; svec(Dt)]``.
    ``ranks`` holds the numeric ranks of ``[I_xx T, I_xu, delta_uu]``
    (key ``"joint"``) and ``I_xx T`` (key ``"i_xx"``).
    """

    functionals: WindowFunctionals
    K_T_hat: np.ndarray
    Phi_p: np.ndarray
    Phi_q: np.ndarray
    ranks: dict
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.functionals.n

    @property
    def m(self):
        return self.functionals.m

    @property
    def l(self):
        return self.functionals.l

    @classmethod
    def from_functionals(cls, wf: WindowFunctionals, K_T_hat, meta=None, check=True):
        """Assemble ``Phi_p`` and ``Phi_q`` and run the rank diagnostics.

        Raises
        ------
        ExcitationError
            If there are too few windows or either rank condition fails.
        """
        n, m, l = wf.n, wf.m, wf.l
        K = np.atleast_2d(np.asarray(K_T_hat, dtype=float))
        if K.shape != (m, n):
            raise DimensionError(f"K_T_hat must be {m}x{n}, got {K.shape}")
        T_n = duplication(n)
        Phi_q = wf.i_xx @ T_n
        ranks = {
            "joint": numeric_rank(np.hstack([Phi_q, wf.i_xu, wf.delta_uu]), scale_columns=True),
            "i_xx": numeric_rank(Phi_q, scale_columns=True),
        }
        need = required_windows(n, m)
        if check:
            if l < need:
                raise ExcitationError(
                    f"{l} windows are fewer than the {need} unknowns; collect more windows",
                    l, need,
                )
            if ranks["joint"] < need:
                raise ExcitationError(
                    f"rank [I_xx, I_xu, delta_uu] = {ranks['joint']} < {need}: behavior data are "
                    "not exciting enough (increase the probing signal or the window count)",
                    ranks["joint"], need,
                )
            if ranks["i_xx"] < sym_dim(n):
                raise ExcitationError(
                    f"rank I_xx = {ranks['i_xx']} < {sym_dim(n)}: states do not excite all "
                    "quadratic directions",
                    ranks["i_xx"], sym_dim(n),
                )
        Phi_p = np.hstack([
            wf.delta_xx,
            2.0 * wf.i_xx @ kron(np.eye(n), K.T) - 2.0 * wf.i_xu,
            wf.i_xx @ lbar(K) - wf.delta_uu,
        ])
        return cls(wf, K, Phi_p, Phi_q, ranks, dict(meta or {}))


@dataclass
class PStepResult:
    P: np.ndarray
    Btilde: np.ndarray
    Dtilde: np.ndarray
    K_next: np.ndarray
    fitted_dxx: np.ndarray
    ls_residual: float
    condition: float


@dataclass
class ModelFreeIterate(IrlIterate):
    """Model-free iterate; ``stabilizing`` is None unless a true system was supplied."""

    Btilde: Optional[np.ndarray] = None
    Dtilde: Optional[np.ndarray] = None
    ls_residual_p: float = float("nan")
    ls_residual_q: float = float("nan")


def collect_behavior_data(sys, K0, noise, cfg, K_T_hat, exact=False, backend=None):
    """Simulate behavior data under ``u = K0 x + e`` once and assemble the regression.

    With ``exact=True`` the window functionals are the exact expectations
    from the moment equations instead of Monte Carlo averages.

    Raises
    ------
    StabilityError
        If ``K0`` is not mean-square stabilizing.
    ExcitationError
        If the rank conditions fail.
    """
    K0 = as_gain(K0, sys)
    if not is_ms_stabilizing(sys, K0):
        raise StabilityError("behavior gain K0 is not mean-square stabilizing")
    need = required_windows(sys.n, sys.m)
    if cfg.windows_l < need:
        raise ExcitationError(
            f"windows_l = {cfg.windows_l} is below the required {need}", cfg.windows_l, need
        )
    policy = LinearPolicy(K0, noise)
    if exact:
        wf = expected_window_functionals(sys, policy, cfg)
    else:
        wf = collect_window_functionals(sys, policy, cfg, backend=backend)
    meta = {
        "seed": cfg.seed,
        "paths_M": cfg.paths_M,
        "step_h": cfg.step_h,
        "exact": bool(exact),
    }
    return RegressionData.from_functionals(wf, K_T_hat, meta)


def _split(theta, n, m):
    nq = sym_dim(n)
    P = smat(theta[:nq], n)
    Bt = unvec(theta[nq:nq + n * m], m, n)
    Dt = smat(theta[nq + n * m:], m)
    return P, Bt, Dt


def _lstsq(Phi, psi):
    """Least squares with rank failures reported as excitation errors."""
    try:
        return least_squares(Phi, psi)
    except ExcitationError:
        raise
    except SingularSystemError as exc:
        raise ExcitationError(str(exc), exc.rank, exc.required) from exc


def solve_p_step(data: RegressionData, Q, R):
    """Least-squares solve for ``(P_i, Bt_i, Dt_i)`` and the gain update."""
    n, m = data.n, data.m
    wf = data.functionals
    K = data.K_T_hat
    R = np.atleast_2d(np.asarray(R, dtype=float))
    psi = -wf.i_xx @ (Q + K.T @ R @ K).reshape(-1)
    ls = _lstsq(data.Phi_p, psi)
    P, Bt, Dt = _split(ls.solution, n, m)
    H = symmetrize(R + Dt)
    if not np.linalg.eigvalsh(H)[0] > 0.0:
        raise DefinitenessError("R + Dtilde is not positive definite; gain update undefined")
    K_next = -np.linalg.solve(H, Bt)
    nq = sym_dim(n)
    fitted = psi - data.Phi_p[:, nq:] @ ls.solution[nq:]
    return PStepResult(P, Bt, Dt, K_next, fitted, ls.residual, ls.condition)


def solve_q_step(data: RegressionData, step: PStepResult, R, mode="projected"):
    """Least-squares solve for ``Q_{i+1}``; returns ``(Q_next, residual)``."""
    if mode not in Q_MODES:
        raise ValueError(f"mode must be one of {Q_MODES}, got {mode!r}")
    wf = data.functionals
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if mode == "raw":
        dxx_p = wf.delta_xx @ svec(step.P)
    else:
        dxx_p = step.fitted_dxx
    psi = (
        -dxx_p
        + 2.0 * wf.i_xu @ step.Btilde.reshape(-1, order="F")
        + wf.delta_uu @ svec(step.Dtilde)
        + wf.i_xx @ lbar(step.K_next) @ svec(R + step.Dtilde)
    )
    ls = _lstsq(data.Phi_q, psi)
    return symmetrize(smat(ls.solution, data.n)), ls.residual


def run_model_free_irl(data: RegressionData, R, Q0, eps1=1e-3, max_iter=2000, stop="either",
                       gain_tol=0.01, q_mode="projected", true_system=None):
    """Alternate P-steps and Q-steps on stored data until a stop rule fires.

    The data are never re-simulated.  ``true_system`` (optional, for
    diagnostics) enables the mean-square stability check of every gain.

    The returned triple ``(Q_star, P_star, K_star)`` is ``(Q_i, P_i,
    K_{i+1})`` of the last iteration, as in the model-based variant.
    Step failures propagate with ``history`` attached to the exception.
    """
    _check_stop(stop)
    R = symmetrize(np.atleast_2d(np.asarray(R, dtype=float)))
    Q = symmetrize(np.atleast_2d(np.asarray(Q0, dtype=float)))
    if Q.shape != (data.n, data.n) or R.shape != (data.m, data.m):
        raise DimensionError(f"weights must be {data.n}x{data.n} and {data.m}x{data.m}")
    K_T = data.K_T_hat
    probe = _StabilityProbe(true_system) if true_system is not None else None
    history = []
    prev = None
    reason = "max_iter"
    for i in range(max_iter):
        try:
            step = solve_p_step(data, Q, R)
            Q_next, res_q = solve_q_step(data, step, R, q_mode)
        except Exception as exc:
            exc.history = history
            raise
        dQ = Q_next - Q
        it = ModelFreeIterate(
            index=i,
            Q=Q,
            P=step.P,
            K_next=step.K_next,
            Q_next=Q_next,
            residual_eq13=step.ls_residual,
            stabilizing=None if probe is None else probe(step.K_next),
            q_change=float("nan") if prev is None else _fro(Q - prev),
            q_step=_fro(dQ),
            gain_gap=_fro(step.K_next - K_T),
            min_eig_dq=float(np.linalg.eigvalsh(dQ)[0]),
            Btilde=step.Btilde,
            Dtilde=step.Dtilde,
            ls_residual_p=step.ls_residual,
            ls_residual_q=res_q,
        )
        history.append(it)
        if it.stabilizing is False:
            err = StabilityError(f"updated gain at iteration {i} is not mean-square stabilizing")
            err.history = history
            raise err
        if not np.all(np.isfinite(Q_next)):
            err = DefinitenessError(f"weight update at iteration {i} is not finite")
            err.history = history
            raise err
        reason = stop_decision(stop, it.q_step, it.gain_gap, eps1, gain_tol)
        if reason:
            break
        prev, Q = Q, Q_next
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
        extras={"q_mode": q_mode},
    )


def _write_block(path, arr):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(arr):
            writer.writerow([format(float(v), ".17g") for v in row])


def save_regression_data(data: RegressionData, directory):
    """Write the four functional blocks and ``meta.toml`` into ``directory``.

    Block files hold one window per row; ``meta.toml`` records the format
    version, ``n``, ``m``, ``l``, the window length, ``K_T_hat`` and any
    collection metadata (seed, path count, step).
    """
    os.makedirs(directory, exist_ok=True)
    wf = data.functionals
    for name in _BLOCKS:
        _write_block(os.path.join(directory, f"{name}.csv"), getattr(wf, name))
    meta = {
        "format_version": BUNDLE_VERSION,
        "n": data.n,
        "m": data.m,
        "l": data.l,
        "window_dt": wf.window_dt,
    }
    meta.update({k: v for k, v in data.meta.items() if k not in meta})
    meta["K_T_hat"] = data.K_T_hat.tolist()
    with open(os.path.join(directory, "meta.toml"), "wb") as fh:
        tomli_w.dump(meta, fh)


def load_regression_data(directory, check=True):
    """Inverse of :func:`save_regression_data`."""
    from .config import load_toml

    meta = load_toml(os.path.join(directory, "meta.toml"))
    if meta.get("format_version") != BUNDLE_VERSION:
        raise DimensionError(
            f"unsupported bundle version {meta.get('format_version')!r} (expected {BUNDLE_VERSION})"
        )
    blocks = {}
    for name in _BLOCKS:
        arr = np.loadtxt(os.path.join(directory, f"{name}.csv"), delimiter=",", ndmin=2)
        blocks[name] = arr
    wf = WindowFunctionals(window_dt=float(meta["window_dt"]), **blocks)
    if (wf.n, wf.m, wf.l) != (meta["n"], meta["m"], meta["l"]):
        raise DimensionError(
            f"bundle blocks have n={wf.n}, m={wf.m}, l={wf.l}; meta says "
            f"n={meta['n']}, m={meta['m']}, l={meta['l']}"
        )
    extra = {k: v for k, v in meta.items()
             if k not in ("format_version", "n", "m", "l", "window_dt", "K_T_hat")}
    return RegressionData.from_functionals(wf, np.array(meta["K_T_hat"], dtype=float), extra, check)
