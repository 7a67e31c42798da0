"""Expert demonstrations and batch least-squares recovery of the expert gain."""

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DimensionError, InformativityError
from .lq_core import solve_sare
from .matops import numeric_rank
from .sde_sim import LinearPolicy, SimConfig, simulate_paths

__all__ = [
    "ExpertDemo",
    "GainEstimate",
    "generate_expert_demo",
    "estimate_expert_gain",
    "write_demo_csv",
    "read_demo_csv",
]


@dataclass(frozen=True)
class ExpertDemo:
    """Sampled expert behavior, stored time-major.

    Attributes
    ----------
    t : (k,) sample times
    states : (k, n) array, row ``j`` is ``X_T(t_j)``
    controls : (k, m) array, row ``j`` is ``u_T(t_j)``
    gain : optional ground-truth gain used to generate the demo
    """

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    gain: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        X = np.atleast_2d(np.asarray(self.states, dtype=float))
        U = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if X.shape[0] != t.size or U.shape[0] != t.size:
            raise DimensionError(
                f"demo has {t.size} times, {X.shape[0]} states and {U.shape[0]} controls"
            )
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "controls", U)

    @property
    def k(self):
        return self.t.size

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.controls.shape[1]


@dataclass(frozen=True)
class GainEstimate:
    K_hat: np.ndarray
    residual: float
    condition: float


def default_sample_count(n, m):
    return max(4 * m * n, n * (n + 1))


def generate_expert_demo(sys, weights_T, K_init, cfg: SimConfig, k=None, spacing=None):
    """Simulate the optimal expert and sample ``k`` state/control pairs.

    The expert gain comes from :func:`solve_sare`; one Euler-Maruyama path
    (Brownian stream ``cfg.seed``) is run under ``u = K_T x`` and sampled
    every ``spacing`` time units starting at ``t = 0``.  ``spacing``
    defaults to ``cfg.window_dt`` and must be a multiple of ``cfg.step_h``.
    """
    _, K_T = solve_sare(sys, weights_T, K_init)
    if k is None:
        k = default_sample_count(sys.n, sys.m)
    if k < 1:
        raise ValueError("sample count k must be positive")
    spacing = cfg.window_dt if spacing is None else spacing
    run = replace(cfg, window_dt=spacing, windows_l=max(1, k - 1), paths_M=1, antithetic=False)
    rec = simulate_paths(sys, LinearPolicy(K_T), run)
    idx = np.arange(k) * run.steps_per_window
    return ExpertDemo(rec.t[idx], rec.states[0, idx], rec.controls[0, idx], gain=K_T)


def estimate_expert_gain(demo: ExpertDemo):
    """Least-squares solution of ``K X_T = u_T`` over the demo samples.

    Raises
    ------
    InformativityError
        If the sampled states do not span the state space or there are
        fewer than ``m n`` samples.
    """
    X, U = demo.states, demo.controls
    n, m = demo.n, demo.m
    if demo.k < m * n:
        raise InformativityError(f"{demo.k} samples are fewer than m*n = {m * n}")
    rank = numeric_rank(X)
    if rank < n:
        raise InformativityError(
            f"demo states have rank {rank} < n = {n}; the gain is not identifiable"
        )
    sol, _, _, sv = np.linalg.lstsq(X, U, rcond=None)
    K_hat = sol.T
    residual = float(np.linalg.norm(X @ sol - U))
    return GainEstimate(K_hat, residual, float((sv[0] / sv[-1]) ** 2))


def write_demo_csv(demo: ExpertDemo, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"x_{i + 1}" for i in range(demo.n)] + [f"u_{i + 1}" for i in range(demo.m)])
    for j in range(demo.k):
        writer.writerow([repr(float(v)) for v in (demo.t[j], *demo.states[j], *demo.controls[j])])


def read_demo_csv(fh):
    """Inverse of :func:`write_demo_csv`; column names decide ``n`` and ``m``."""
    reader = csv.reader(fh)
    header = next(reader)
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u_")]
    if header[0] != "t" or not xcols or not ucols:
        raise DimensionError(f"unrecognized demo header {header}")
    rows = np.array([[float(v) for v in r] for r in reader if r])
    if rows.size == 0:
        raise DimensionError("demo file has no samples")
    return ExpertDemo(rows[:, 0], rows[:, xcols], rows[:, ucols])
