"""Inverse reinforcement learning for stochastic linear-quadratic systems.

The learner observes an expert acting optimally on the linear Ito system
``dX = (A X + B u) ds + (C X + D u) dW`` and reconstructs a state weight
``Q`` that, with a chosen control weight ``R``, makes the expert gain
optimal.  :mod:`stochirl.irl_model_based` needs the model;
:mod:`stochirl.irl_model_free` works from one batch of behavior data.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DefinitenessError,
    DimensionError,
    DivergenceError,
    ExcitationError,
    InformativityError,
    IterationError,
    MonotonicityError,
    SingularSystemError,
    StabilityError,
    StochIRLError,
)
from .lq_core import (  # noqa: E402
    CostWeights,
    SystemDynamics,
    evaluate_cost_mc,
    is_ms_stabilizing,
    optimal_gain,
    sare_residual,
    solve_lyapunov,
    solve_sare,
    theorem1_residuals,
)
from .sde_sim import BACKEND, ExplorationNoise, LinearPolicy, SimConfig  # noqa: E402
from .expert import estimate_expert_gain, generate_expert_demo  # noqa: E402
from .irl_model_based import run_model_based_irl, verify_nonuniqueness  # noqa: E402
from .irl_model_free import collect_behavior_data, run_model_free_irl  # noqa: E402
