import numpy as np
import pytest
from scipy.linalg import solve_continuous_are, solve_continuous_lyapunov

from helpers import K0_5, K_T_PRINTED, P_T_PRINTED, X0_5
from stochirl.errors import DefinitenessError, DimensionError, StabilityError
from stochirl.lq_core import (
    CostWeights,
    LyapunovSolver,
    SystemDynamics,
    evaluate_cost_mc,
    is_ms_stabilizing,
    lyapunov_residual,
    moment_horizon,
    optimal_gain,
    sare_residual,
    solve_lyapunov,
    solve_sare,
    theorem1_residuals,
)


def test_benchmark_sare_matches_printed_values(expert5):
    P_T, K_T = expert5
    np.testing.assert_allclose(P_T, P_T_PRINTED, atol=2e-3)
    np.testing.assert_allclose(K_T, K_T_PRINTED, atol=2e-3)


def test_benchmark_sare_residual_and_stability(sys5, weights5, expert5):
    P_T, K_T = expert5
    assert sare_residual(sys5, weights5, P_T) < 1e-9
    assert is_ms_stabilizing(sys5, K_T)
    assert np.linalg.eigvalsh(P_T).min() > 0
    np.testing.assert_allclose(optimal_gain(sys5, P_T, weights5.R), K_T, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sare_reduces_to_care_without_noise(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
    sys = SystemDynamics(A, B, np.zeros((n, n)), np.zeros((n, m)))
    w = CostWeights(np.eye(n) * 2.0, np.eye(m))
    P_ref = solve_continuous_are(A, B, w.Q, w.R)
    P, K = solve_sare(sys, w, -B.T @ solve_continuous_are(A, B, np.eye(n), np.eye(m)))
    np.testing.assert_allclose(P, P_ref, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(K, -np.linalg.solve(w.R, B.T @ P_ref), rtol=1e-7, atol=1e-9)


def test_scalar_sare_closed_form():
    # 2 a p + c^2 p + q - (b p + d p c)^2 / (r + d^2 p) = 0, solved as a quadratic in p
    a, b, c, d, q, r = 0.5, 1.0, 0.3, 0.4, 2.0, 1.5
    s = 2 * a + c * c
    g = b + d * c
    # (s p + q)(r + d^2 p) - g^2 p^2 = 0
    coeffs = [s * d * d - g * g, s * r + q * d * d, q * r]
    p_true = max(np.roots(coeffs).real)
    sys = SystemDynamics([[a]], [[b]], [[c]], [[d]])
    w = CostWeights([[q]], [[r]])
    P, K = solve_sare(sys, w, [[-5.0]])
    np.testing.assert_allclose(P[0, 0], p_true, rtol=1e-10)
    np.testing.assert_allclose(K[0, 0], -g * p_true / (r + d * d * p_true), rtol=1e-10)


def test_lyapunov_matches_scipy_without_multiplicative_noise():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3)) - 4 * np.eye(3)
    B = rng.normal(size=(3, 1))
    sys = SystemDynamics(A, B, np.zeros((3, 3)), np.zeros((3, 1)))
    K = np.zeros((1, 3))
    M = np.eye(3) + 0.1
    ref = solve_continuous_lyapunov(A.T, -M)
    np.testing.assert_allclose(solve_lyapunov(sys, K, M), ref, rtol=1e-10, atol=1e-12)


def test_generalized_lyapunov_residual(sys5, expert5, weights5):
    _, K_T = expert5
    M = weights5.Q + K_T.T @ weights5.R @ K_T
    P = solve_lyapunov(sys5, K_T, M)
    assert lyapunov_residual(sys5, K_T, P, M) < 1e-12
    np.testing.assert_array_equal(P, P.T)
    solver = LyapunovSolver(sys5, K_T)
    np.testing.assert_allclose(solver(M), P, atol=1e-14)
    np.testing.assert_allclose(solver(2 * M), 2 * P, atol=1e-13)


def test_lyapunov_rejects_unstable_gain(sys5):
    with pytest.raises(StabilityError):
        solve_lyapunov(sys5, [[0.0, 0.0]], np.eye(2))


def test_mean_square_stability_needs_more_than_hurwitz_drift():
    # Drift -1 is Hurwitz but noise intensity c^2 = 4 > 2 destroys mean-square stability.
    sys = SystemDynamics([[-1.0]], [[0.0]], [[2.0]], [[0.0]])
    assert not is_ms_stabilizing(sys, [[0.0]])
    sys = SystemDynamics([[-1.0]], [[0.0]], [[1.0]], [[0.0]])
    assert is_ms_stabilizing(sys, [[0.0]])


def test_benchmark_initial_gain_is_stabilizing(sys5):
    assert is_ms_stabilizing(sys5, K0_5)
    assert not is_ms_stabilizing(sys5, [[0.0, 0.0]])


def test_theorem1_residuals_vanish_at_truth(sys5, weights5, expert5):
    P_T, K_T = expert5
    r_sare, r_lyap = theorem1_residuals(sys5, weights5, P_T, K_T)
    assert r_sare < 1e-9 and r_lyap < 1e-9


def test_validation_errors():
    with pytest.raises(DimensionError):
        SystemDynamics(np.eye(2), np.ones((3, 1)), np.eye(2), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        SystemDynamics(np.eye(2), np.ones((2, 1)), np.eye(2), np.ones((2, 2)))
    with pytest.raises(DefinitenessError):
        CostWeights(-np.eye(2), [[1.0]])
    with pytest.raises(DefinitenessError):
        CostWeights([[1.0, 2.0], [0.0, 1.0]], [[1.0]])


def test_system_arrays_are_frozen(sys5):
    with pytest.raises(ValueError):
        sys5.A[0, 0] = 0.0


def test_moment_horizon_decays(sys5, expert5):
    t = moment_horizon(sys5, expert5[1], X0_5)
    assert 1.0 < t < 50.0


@pytest.mark.slow
def test_monte_carlo_cost_matches_value_function(sys5, weights5, expert5):
    P_T, K_T = expert5
    x0 = np.array(X0_5)
    est = evaluate_cost_mc(sys5, weights5, K_T, x0, paths=400, step_h=1e-3, seed=7)
    exact = x0 @ P_T @ x0
    # Euler-Maruyama bias at h = 1e-3 is well below the 4-sigma band here.
    assert abs(est.mean - exact) < 4 * est.stderr + 5e-3 * exact


def test_documented_lyapunov_cases(sys5, weights5, expert5):
    sys = SystemDynamics(-np.eye(2), np.zeros((2, 1)), np.zeros((2, 2)), np.zeros((2, 1)))
    np.testing.assert_allclose(solve_lyapunov(sys, [[0.0, 0.0]], np.eye(2)), 0.5 * np.eye(2), atol=1e-15)
    np.testing.assert_array_equal(solve_lyapunov(sys, [[0.0, 0.0]], np.zeros((2, 2))), np.zeros((2, 2)))
    P_T, K_T = expert5
    M = weights5.Q + K_T.T @ weights5.R @ K_T
    np.testing.assert_allclose(solve_lyapunov(sys5, K_T_PRINTED, weights5.Q + K_T_PRINTED.T @ K_T_PRINTED),
                               P_T_PRINTED, atol=1e-3)
    P = solve_lyapunov(sys5, K_T, M)
    assert lyapunov_residual(sys5, K_T, P, M) < 1e-9 * np.linalg.norm(M)
    assert np.linalg.eigvalsh(P).min() > 0


def test_unstable_open_loop_without_input():
    sys = SystemDynamics(np.eye(2), np.zeros((2, 1)), np.zeros((2, 2)), np.zeros((2, 1)))
    assert not is_ms_stabilizing(sys, [[0.0, 0.0]])


def test_optimal_gain_special_cases():
    rng = np.random.default_rng(8)
    P = np.eye(3) + 0.1
    A = rng.normal(size=(3, 3))
    sys = SystemDynamics(A, np.zeros((3, 2)), rng.normal(size=(3, 3)), np.zeros((3, 2)))
    np.testing.assert_array_equal(optimal_gain(sys, P, np.eye(2)), np.zeros((2, 3)))
    B = rng.normal(size=(3, 2))
    R = np.diag([1.0, 3.0])
    sys = SystemDynamics(A, B, np.zeros((3, 3)), np.zeros((3, 2)))
    np.testing.assert_allclose(optimal_gain(sys, P, R), -np.linalg.solve(R, B.T @ P), atol=1e-14)
    with pytest.raises(DefinitenessError):
        optimal_gain(SystemDynamics([[0.0]], [[1.0]], [[0.0]], [[1.0]]), [[-1.0]], [[1.0]])


def test_sare_policy_iteration_is_monotone_and_settled(sys5, weights5):
    P, K, iterates = solve_sare(sys5, weights5, K0_5, return_iterates=True)
    for (P_a, _), (P_b, _) in zip(iterates, iterates[1:]):
        assert np.linalg.eigvalsh(P_a - P_b).min() >= -1e-9
    # one more evaluation/improvement step leaves P in place
    P_next = solve_lyapunov(sys5, K, weights5.Q + K.T @ weights5.R @ K)
    assert np.linalg.norm(P_next - P) < 1e-10
    assert sare_residual(sys5, weights5, P) < 1e-8 * np.linalg.norm(weights5.Q)


def test_sare_rejects_unstable_start(sys5, weights5):
    with pytest.raises(StabilityError):
        solve_sare(sys5, weights5, [[0.0, 0.0]])


def test_sare_residual_examples(sys5, weights5, expert5):
    P_T, _ = expert5
    assert sare_residual(sys5, weights5, P_T_PRINTED) < 1e-2
    sweep = [sare_residual(sys5, weights5, P_T + eps * np.eye(2)) for eps in (1e-4, 1e-3, 1e-2, 1e-1)]
    assert np.all(np.diff(sweep) > 0)
    zero = type("W", (), {"Q": np.zeros((2, 2)), "R": np.eye(1)})()
    assert sare_residual(sys5, zero, np.zeros((2, 2))) == 0.0


def test_theorem1_residuals_printed_and_wrong(sys5, weights5, expert5):
    r = theorem1_residuals(sys5, weights5, P_T_PRINTED, K_T_PRINTED)
    assert max(r) < 1e-2
    r = theorem1_residuals(sys5, weights5, 2.0 * P_T_PRINTED, K_T_PRINTED)
    assert min(r) > 1.0


def test_theorem1_residuals_certify_the_gain(sys5):
    # small residuals for (Q, R, P, K) imply optimal_gain(P) is K
    rng = np.random.default_rng(0)
    for _ in range(5):
        G = rng.normal(size=(2, 2))
        w = CostWeights(G @ G.T + np.eye(2), [[rng.uniform(0.5, 2.0)]])
        P, K = solve_sare(sys5, w, K0_5)
        assert max(theorem1_residuals(sys5, w, P, K)) < 1e-8
        np.testing.assert_allclose(optimal_gain(sys5, P, w.R), K, atol=1e-10)


def test_monte_carlo_cost_of_zero_weights(sys5, expert5):
    zero = type("W", (), {"Q": np.zeros((2, 2)), "R": np.zeros((1, 1))})()
    est = evaluate_cost_mc(sys5, zero, expert5[1], X0_5, paths=4, step_h=1e-3)
    assert est.mean == 0.0


@pytest.mark.slow
def test_monte_carlo_cost_within_three_standard_errors(sys5, weights5, expert5):
    P_T, K_T = expert5
    x0 = np.array(X0_5)
    est = evaluate_cost_mc(sys5, weights5, K_T, x0, paths=400, step_h=1e-4, seed=7)
    assert abs(est.mean - x0 @ P_T @ x0) < 3 * est.stderr


def test_expert_gain_beats_perturbed_gains(sys5, weights5, expert5):
    _, K_T = expert5
    rng = np.random.default_rng(0)
    base = evaluate_cost_mc(sys5, weights5, K_T, X0_5, paths=400, step_h=1e-3, seed=3)
    for _ in range(10):
        K = K_T + 0.1 * rng.normal(size=(1, 2))
        est = evaluate_cost_mc(sys5, weights5, K, X0_5, horizon=base.horizon, paths=400,
                               step_h=1e-3, seed=3)
        assert est.mean >= base.mean - 2 * base.stderr


def test_monte_carlo_cost_rejects_unstable_gain(sys5, weights5):
    with pytest.raises(StabilityError):
        evaluate_cost_mc(sys5, weights5, [[0.0, 0.0]], X0_5, paths=2)
