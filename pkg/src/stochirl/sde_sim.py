"""Euler-Maruyama simulation of the linear Ito system and window functionals.

The heavy lifting happens in ``_kernels`` (compiled) or ``_kernels_py``
(numpy fallback); :data:`BACKEND` names the one in use.  Setting the
environment variable ``STOCHIRL_PURE_PYTHON=1`` forces the fallback.

Conditional expectations over a window are estimated by averaging over
``paths_M`` independent paths started from the same ``x0``.  By default
paths come in antithetic pairs (Brownian increments ``dW`` and ``-dW``),
which cancels the leading-order martingale noise of the estimates.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DimensionError, DivergenceError
from .lq_core import SystemDynamics, as_gain
from .matops import sym_dim

if os.environ.get("STOCHIRL_PURE_PYTHON"):
    from . import _kernels_py as _kernels
else:
    try:
        from . import _kernels
    except ImportError:  # extension not built
        from . import _kernels_py as _kernels

BACKEND = _kernels.NAME
DIVERGENCE_GUARD = 1e12

__all__ = [
    "BACKEND",
    "SimConfig",
    "ExplorationNoise",
    "LinearPolicy",
    "PathRecord",
    "WindowFunctionals",
    "brownian_increments",
    "exploration_signal",
    "simulate_paths",
    "accumulate_window_functionals",
    "collect_window_functionals",
    "expected_window_functionals",
    "write_paths_csv",
    "get_backend",
]


def get_backend(name=None):
    """Return a kernel module: ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return _kernels
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "cython":
        from . import _kernels as compiled

        if compiled.NAME != "cython":
            raise ImportError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class SimConfig:
    """Time grid, window layout and Monte Carlo settings.

    ``window_dt`` must be an integer multiple of ``step_h``; the data cover
    ``[0, windows_l * window_dt]``.
    """

    x0: tuple = None
    step_h: float = 1e-4
    window_dt: float = 0.02
    windows_l: int = 50
    paths_M: int = 400
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.x0 is None:
            raise DimensionError("SimConfig needs an initial state x0")
        x0 = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "x0", x0)
        if not self.step_h > 0:
            raise ValueError("step_h must be positive")
        ratio = self.window_dt / self.step_h
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ValueError(
                f"window_dt={self.window_dt} is not an integer multiple of step_h={self.step_h}"
            )
        if self.windows_l < 1:
            raise ValueError("windows_l must be at least 1")
        if self.paths_M < 1:
            raise ValueError("paths_M must be at least 1")

    @property
    def steps_per_window(self):
        return int(round(self.window_dt / self.step_h))

    @property
    def n_steps(self):
        return self.steps_per_window * self.windows_l

    @property
    def horizon(self):
        return self.n_steps * self.step_h

    @property
    def grid(self):
        return np.arange(self.n_steps + 1) * self.step_h

    @property
    def window_starts(self):
        return np.arange(self.windows_l) * self.steps_per_window * self.step_h


@dataclass(frozen=True)
class ExplorationNoise:
    """Sum-of-sinusoids probing signal ``e_c(s) = amplitude * sum_i sin(w_ci s)``.

    ``frequencies`` has shape ``(m, count)``: one row per input channel.
    """

    amplitude: float
    frequencies: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        if w.size == 0:
            raise ValueError("exploration noise needs at least one frequency")
        w.setflags(write=False)
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @classmethod
    def random(cls, m, count=10, amplitude=2.0, low=-500.0, high=500.0, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xE5,)))
        return cls(amplitude, rng.uniform(low, high, size=(m, count)))

    @property
    def m(self):
        return self.frequencies.shape[0]

    @property
    def count(self):
        return self.frequencies.shape[1]

    def __call__(self, t):
        return exploration_signal(self, t)


def exploration_signal(noise, t):
    """Evaluate the probing signal; scalar ``t`` gives shape ``(m,)``, arrays ``(len(t), m)``."""
    t = np.asarray(t, dtype=float)
    vals = noise.amplitude * np.sin(t[..., None, None] * noise.frequencies).sum(axis=-1)
    return vals


class LinearPolicy:
    """Control law ``u = K x + e(t)`` with optional exploration ``e``."""

    def __init__(self, K, noise: Optional[ExplorationNoise] = None):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.noise = noise
        if noise is not None and noise.m != self.K.shape[0]:
            raise DimensionError(
                f"exploration noise has {noise.m} channels, gain has {self.K.shape[0]} rows"
            )

    def offsets(self, t):
        t = np.asarray(t, dtype=float)
        if self.noise is None:
            return np.zeros(t.shape + (self.K.shape[0],))
        return exploration_signal(self.noise, t)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return x @ self.K.T + self.offsets(t)


@dataclass
class PathRecord:
    """Sampled trajectories on the uniform grid ``t``.

    ``states`` has shape ``(M, N+1, n)`` and ``controls`` ``(M, N+1, m)``.
    """

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __len__(self):
        return self.states.shape[0]


@dataclass
class WindowFunctionals:
    """Window integrals averaged over paths; ``per_path`` keeps the raw ones."""

    delta_xx: np.ndarray
    delta_uu: np.ndarray
    i_xx: np.ndarray
    i_xu: np.ndarray
    window_dt: float
    per_path: Optional["WindowFunctionals"] = field(default=None, repr=False)

    def __post_init__(self):
        l = self.delta_xx.shape[-2] if self.delta_xx.ndim == 3 else self.delta_xx.shape[0]
        n = int(round(np.sqrt(self.i_xx.shape[-1])))
        m = self.i_xu.shape[-1] // max(n, 1)
        expect = {
            "delta_xx": sym_dim(n),
            "delta_uu": sym_dim(m),
            "i_xx": n * n,
            "i_xu": n * m,
        }
        for name, cols in expect.items():
            arr = getattr(self, name)
            if arr.shape[-1] != cols or arr.shape[-2] != l:
                raise DimensionError(
                    f"{name} has shape {arr.shape}; expected {l} rows and {cols} columns"
                )

    @property
    def n(self):
        return int(round(np.sqrt(self.i_xx.shape[-1])))

    @property
    def m(self):
        return self.i_xu.shape[-1] // self.n

    @property
    def l(self):
        return self.delta_xx.shape[-2]


def _stream(seed, k):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def brownian_increments(cfg, first=0, count=None):
    """Brownian increments for paths ``first .. first+count-1``, shape ``(count, N)``.

    Path ``p`` draws from the stream keyed by ``(seed, p)``; with antithetic
    sampling paths ``2k`` and ``2k+1`` share stream ``k`` with opposite signs.
    The result for a given path does not depend on how paths are chunked.
    """
    if count is None:
        count = cfg.paths_M - first
    N = cfg.n_steps
    sd = np.sqrt(cfg.step_h)
    out = np.empty((count, N))
    cache = {}
    for i, p in enumerate(range(first, first + count)):
        if cfg.antithetic:
            k, sign = divmod(p, 2)
            if k not in cache:
                cache = {k: _stream(cfg.seed, k).standard_normal(N) * sd}
            out[i] = -cache[k] if sign else cache[k]
        else:
            out[i] = _stream(cfg.seed, p).standard_normal(N) * sd
    return out


def _check_x0(sys, cfg):
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (sys.n,):
        raise DimensionError(f"x0 has {x0.size} entries, system has n={sys.n}")
    return x0


def _kernel_args(sys, policy, cfg):
    K = as_gain(policy.K, sys)
    E = np.ascontiguousarray(policy.offsets(cfg.grid), dtype=float).reshape(-1, sys.m)
    mats = [np.ascontiguousarray(a, dtype=float) for a in (sys.A, sys.B, sys.C, sys.D, K)]
    return mats, E


def simulate_paths(sys: SystemDynamics, control_law, cfg: SimConfig, dW=None, backend=None):
    """Euler-Maruyama paths under an arbitrary control law.

    ``control_law`` is either a :class:`LinearPolicy` (runs in the kernel)
    or any callable ``f(t, X) -> U`` taking a batch of states of shape
    ``(M, n)`` and returning ``(M, m)`` controls.

    Raises
    ------
    DivergenceError
        If a state norm exceeds ``1e12``.
    """
    x0 = _check_x0(sys, cfg)
    if dW is None:
        dW = brownian_increments(cfg)
    dW = np.ascontiguousarray(dW, dtype=float)
    if dW.shape != (cfg.paths_M, cfg.n_steps):
        raise DimensionError(f"dW has shape {dW.shape}, expected {(cfg.paths_M, cfg.n_steps)}")
    t = cfg.grid
    if isinstance(control_law, LinearPolicy):
        (A, B, C, D, K), E = _kernel_args(sys, control_law, cfg)
        X, U, fail = get_backend(backend).paths(A, B, C, D, K, E, x0, dW, cfg.step_h, DIVERGENCE_GUARD)
    else:
        X, U, fail = _generic_paths(sys, control_law, cfg, x0, dW)
    if fail >= 0:
        raise DivergenceError(f"state norm exceeded {DIVERGENCE_GUARD:g} at step {fail}", fail)
    return PathRecord(t, X, U)


def _generic_paths(sys, law, cfg, x0, dW):
    M, N = dW.shape
    h = cfg.step_h
    X = np.empty((M, N + 1, sys.n))
    U = np.empty((M, N + 1, sys.m))
    x = np.tile(x0, (M, 1))
    for k in range(N):
        u = np.asarray(law(k * h, x), dtype=float).reshape(M, sys.m)
        X[:, k], U[:, k] = x, u
        x = x + (x @ sys.A.T + u @ sys.B.T) * h + (x @ sys.C.T + u @ sys.D.T) * dW[:, k, None]
        if not np.all(np.isfinite(x)) or np.max(np.linalg.norm(x, axis=1)) > DIVERGENCE_GUARD:
            return X, U, k + 1
    X[:, N] = x
    U[:, N] = np.asarray(law(N * h, x), dtype=float).reshape(M, sys.m)
    return X, U, -1


def accumulate_window_functionals(paths: PathRecord, cfg: SimConfig):
    """Window functionals from stored trajectories (left-endpoint rule)."""
    X, U = paths.states, paths.controls
    M, npts, n = X.shape
    m = U.shape[2]
    if npts != cfg.n_steps + 1 or U.shape[:2] != (M, npts):
        raise DimensionError(
            f"paths have {npts} grid points, config expects {cfg.n_steps + 1}"
        )
    s, l, h = cfg.steps_per_window, cfg.windows_l, cfg.step_h
    iun, jun = np.triu_indices(n)
    ium, jum = np.triu_indices(m)
    Xw = X[:, :-1].reshape(M, l, s, n)
    Uw = U[:, :-1].reshape(M, l, s, m)
    ends = X[:, ::s]
    xb = ends[..., iun] * ends[..., jun]
    per = WindowFunctionals(
        delta_xx=np.diff(xb, axis=1),
        delta_uu=h * np.einsum("plsi,plsi->pli", Uw[..., ium], Uw[..., jum]),
        i_xx=h * np.einsum("plsi,plsj->plij", Xw, Xw).reshape(M, l, n * n),
        i_xu=h * np.einsum("plsi,plsj->plij", Xw, Uw).reshape(M, l, n * m),
        window_dt=cfg.window_dt,
    )
    return _average(per)


def _average(per):
    return WindowFunctionals(
        delta_xx=per.delta_xx.mean(axis=0),
        delta_uu=per.delta_uu.mean(axis=0),
        i_xx=per.i_xx.mean(axis=0),
        i_xu=per.i_xu.mean(axis=0),
        window_dt=per.window_dt,
        per_path=per,
    )


def collect_window_functionals(sys, policy: LinearPolicy, cfg: SimConfig, dW=None,
                               keep_paths=False, backend=None, chunk=256):
    """Simulate and integrate in one pass without storing trajectories.

    Paths are processed in chunks of ``chunk`` so memory stays bounded for
    long horizons; results do not depend on the chunk size.
    """
    x0 = _check_x0(sys, cfg)
    (A, B, C, D, K), E = _kernel_args(sys, policy, cfg)
    kern = get_backend(backend)
    if dW is not None:
        dW = np.ascontiguousarray(dW, dtype=float)
        if dW.shape != (cfg.paths_M, cfg.n_steps):
            raise DimensionError(f"dW has shape {dW.shape}, expected {(cfg.paths_M, cfg.n_steps)}")
    if cfg.antithetic and chunk % 2:
        chunk += 1
    parts = []
    for first in range(0, cfg.paths_M, chunk):
        count = min(chunk, cfg.paths_M - first)
        inc = dW[first:first + count] if dW is not None else brownian_increments(cfg, first, count)
        out = kern.window_functionals(
            A, B, C, D, K, E, x0, np.ascontiguousarray(inc), cfg.step_h,
            cfg.steps_per_window, cfg.windows_l, DIVERGENCE_GUARD,
        )
        fail = out[4]
        if fail >= 0:
            raise DivergenceError(
                f"state norm exceeded {DIVERGENCE_GUARD:g} at step {fail}", fail
            )
        parts.append(out[:4])
    per = WindowFunctionals(
        *(np.concatenate([p[i] for p in parts], axis=0) for i in range(4)),
        window_dt=cfg.window_dt,
    )
    wf = _average(per)
    if not keep_paths:
        wf.per_path = None
    return wf


def expected_window_functionals(sys, policy: LinearPolicy, cfg: SimConfig, rtol=1e-12):
    """Exact expectations of the window functionals from the moment equations.

    The mean ``mu`` and second moment ``S = E[X X^T]`` of the closed loop
    ``dX = (A0 X + B e) ds + (C0 X + D e) dW`` with ``A0 = A + B K`` and
    ``C0 = C + D K`` obey linear ODEs forced by the deterministic probing
    signal.  They are integrated with a high-order adaptive scheme together
    with the window integrals.  No sampling is involved, so the result is
    what the Monte Carlo estimates converge to as ``paths_M`` grows (and,
    for ``C = D = 0``, the exact functionals of the single deterministic
    trajectory).
    """
    x0 = _check_x0(sys, cfg)
    K = as_gain(policy.K, sys)
    n, m = sys.n, sys.m
    A0, C0 = sys.closed_loop(K)
    B, D = sys.B, sys.D
    e = policy.offsets

    def rhs(t, y):
        mu = y[:n]
        S = y[n:n + n * n].reshape(n, n)
        ev = e(t)
        Be, De = B @ ev, D @ ev
        dmu = A0 @ mu + Be
        C0mu = C0 @ mu
        dS = (A0 @ S + S @ A0.T + np.outer(Be, mu) + np.outer(mu, Be)
              + C0 @ S @ C0.T + np.outer(C0mu, De) + np.outer(De, C0mu) + np.outer(De, De))
        Exu = S @ K.T + np.outer(mu, ev)
        Kmu = K @ mu
        Euu = K @ S @ K.T + np.outer(Kmu, ev) + np.outer(ev, Kmu) + np.outer(ev, ev)
        return np.concatenate([dmu, dS.ravel(), S.ravel(), Exu.ravel(), Euu.ravel()])

    size = n + 2 * n * n + n * m + m * m
    y = np.zeros(size)
    y[:n] = x0
    y[n:n + n * n] = np.outer(x0, x0).ravel()
    scale = max(1.0, float(x0 @ x0))
    wmax = 0.0 if policy.noise is None else float(np.abs(policy.noise.frequencies).max())
    max_step = cfg.window_dt if wmax == 0.0 else min(cfg.window_dt, 1.0 / wmax)
    iun, jun = np.triu_indices(n)
    ium, jum = np.triu_indices(m)
    out = {k: np.zeros((cfg.windows_l, c)) for k, c in
           (("dxx", sym_dim(n)), ("duu", sym_dim(m)), ("ixx", n * n), ("ixu", n * m))}
    starts = cfg.window_starts
    for j, t0 in enumerate(starts):
        y[n + n * n:] = 0.0
        S0 = y[n:n + n * n].reshape(n, n).copy()
        sol = solve_ivp(rhs, (t0, t0 + cfg.window_dt), y, method="DOP853", rtol=rtol,
                        atol=rtol * scale, max_step=max_step)
        if not sol.success:
            raise RuntimeError(f"moment ODE failed in window {j}: {sol.message}")
        y = sol.y[:, -1].copy()
        S1 = y[n:n + n * n].reshape(n, n)
        off = n + n * n
        out["dxx"][j] = (S1 - S0)[iun, jun]
        out["ixx"][j] = y[off:off + n * n]
        out["ixu"][j] = y[off + n * n:off + n * n + n * m]
        out["duu"][j] = y[off + n * n + n * m:].reshape(m, m)[ium, jum]
    return WindowFunctionals(out["dxx"], out["duu"], out["ixx"], out["ixu"], cfg.window_dt)


def write_paths_csv(paths: PathRecord, fh, every=1):
    """Dump trajectories as ``path_id, t, x_1..x_n, u_1..u_m`` rows."""
    M, npts, n = paths.states.shape
    m = paths.controls.shape[2]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["path_id", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)])
    for p in range(M):
        for k in range(0, npts, every):
            row = [p, repr(float(paths.t[k]))]
            row += [repr(float(v)) for v in paths.states[p, k]]
            row += [repr(float(v)) for v in paths.controls[p, k]]
            writer.writerow(row)
