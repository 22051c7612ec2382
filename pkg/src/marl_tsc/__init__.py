"""Multi-agent tabular Q-learning for traffic signal control, with a queueing
simulator, exact MDP oracles and numerical checks of the convergence conditions."""

__version__ = "0.1.0"

from .network import (InvalidReference, LaneKind, LaneSpec, JunctionSpec, PhaseSpec,
                      TrafficNetwork, build_single_junction, build_three_junction_example,
                      validate_network)
from .sim import GreenSchedule, TrafficSimulator, advance_cycle, drift_sign_condition
from .mdp import MdpConfig, neighborhood_cost, observe_state, state_decode, state_index
from .oracle import (ExplicitMDP, async_value_iteration, mdp_from_network, random_mdp,
                     solve_q_star, value_iteration)
from .qlearn import (Exploration, LearningConfig, QTable, StepSchedule, q_learning_on_mdp,
                     q_update, run_marl_episode)
from .convergence import (check_step_schedule, estimate_contraction, noise_statistics,
                          oracle_agreement)

__all__ = [
    "InvalidReference", "LaneKind", "LaneSpec", "JunctionSpec", "PhaseSpec", "TrafficNetwork",
    "build_single_junction", "build_three_junction_example", "validate_network",
    "GreenSchedule", "TrafficSimulator", "advance_cycle", "drift_sign_condition",
    "MdpConfig", "neighborhood_cost", "observe_state", "state_decode", "state_index",
    "ExplicitMDP", "async_value_iteration", "mdp_from_network", "random_mdp", "solve_q_star",
    "value_iteration", "Exploration", "LearningConfig", "QTable", "StepSchedule",
    "q_learning_on_mdp", "q_update", "run_marl_episode", "check_step_schedule",
    "estimate_contraction", "noise_statistics", "oracle_agreement",
]
