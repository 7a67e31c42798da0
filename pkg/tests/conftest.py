import numpy as np
import pytest

from helpers import K0_5, X0_5, bench_system, bench_weights
from stochirl.irl_model_based import run_model_based_irl
from stochirl.irl_model_free import collect_behavior_data
from stochirl.lq_core import solve_sare
from stochirl.sde_sim import ExplorationNoise, SimConfig


@pytest.fixture(scope="session")
def sys5():
    return bench_system()


@pytest.fixture(scope="session")
def weights5():
    return bench_weights()


@pytest.fixture(scope="session")
def expert5(sys5, weights5):
    """``(P_T, K_T)`` of the two-state benchmark."""
    return solve_sare(sys5, weights5, K0_5)


@pytest.fixture(scope="session")
def mb_result5(sys5, expert5):
    return run_model_based_irl(sys5, [[1.0]], 0.2 * np.eye(2), expert5[1])


@pytest.fixture(scope="session")
def mc_data5(sys5, expert5):
    """Monte Carlo behavior data at the benchmark settings (M = 400, seed 2024)."""
    cfg = SimConfig(x0=X0_5, seed=2024)
    return collect_behavior_data(sys5, K0_5, ExplorationNoise.random(1, seed=2024), cfg, expert5[1])


@pytest.fixture(scope="session")
def exact_data5(sys5, expert5):
    """Exact expected functionals for the benchmark (moment equations)."""
    cfg = SimConfig(x0=X0_5, seed=2024)
    return collect_behavior_data(
        sys5, K0_5, ExplorationNoise.random(1, seed=2024), cfg, expert5[1], exact=True
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
