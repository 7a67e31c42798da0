"""Shared fixtures data and generators for the test suite."""

import numpy as np
from scipy.linalg import solve_continuous_are

from stochirl.errors import StochIRLError
from stochirl.lq_core import CostWeights, SystemDynamics, solve_sare

A5 = [[-1.0, 2.0], [2.2, 1.7]]
B5 = [[2.0], [1.6]]
C5 = [[0.1, 0.2], [0.2, 0.1]]
D5 = [[0.2], [0.1]]
K0_5 = [[-1.2292, -2.1684]]
X0_5 = (10.0, -10.0)
P_T_PRINTED = np.array([[0.8944, 0.0526], [0.0526, 2.1919]])
K_T_PRINTED = np.array([[-1.8279, -3.4648]])


def bench_system():
    return SystemDynamics(A5, B5, C5, D5)


def bench_weights():
    return CostWeights(5.0 * np.eye(2), [[1.0]])


def random_deterministic_case(seed, max_cond=1e6):
    """Random ``C = D = 0`` system with ``n <= 4``, ``m <= 2`` and its expert gain.

    Returns ``None`` for draws that are numerically unsuitable as a test
    case: Riccati solutions that do not converge or have condition number
    above ``max_cond`` (nearly uncontrollable modes).
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, min(n, 2) + 1))
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    sys = SystemDynamics(A, B, np.zeros((n, n)), np.zeros((n, m)))
    try:
        P0 = solve_continuous_are(A, B, np.eye(n), np.eye(m))
    except (np.linalg.LinAlgError, ValueError):
        return None
    K0 = -B.T @ P0
    G = rng.normal(size=(n, n))
    weights = CostWeights(G @ G.T + np.eye(n), np.eye(m))
    try:
        P_T, K_T = solve_sare(sys, weights, K0)
    except StochIRLError:
        return None
    if np.linalg.cond(P_T) > max_cond or np.linalg.cond(P0) > max_cond:
        return None
    x0 = tuple(rng.normal(size=n) * 5.0)
    return sys, weights, K0, K_T, x0


def sane_random_cases(count, start=0):
    """First ``count`` accepted draws of :func:`random_deterministic_case` from ``start``."""
    out = []
    seed = start
    while len(out) < count:
        case = random_deterministic_case(seed)
        if case is not None:
            out.append((seed,) + case)
        seed += 1
    return out


def history_or_raise(fn):
    """Run an IRL call; on a step error return the history attached to the error."""
    try:
        return fn().history, None
    except StochIRLError as exc:
        if getattr(exc, "history", None) is None:
            raise
        return exc.history, exc


def iterate_gap(a, b):
    """Largest relative entrywise gap between two iterates (P, K, Q)."""
    return max(
        np.abs(a.P - b.P).max() / max(1.0, np.abs(a.P).max()),
        np.abs(a.K_next - b.K_next).max() / max(1.0, np.abs(a.K_next).max()),
        np.abs(a.Q - b.Q).max() / max(1.0, np.abs(a.Q).max()),
    )
