"""
Numerical checks of the convergence conditions
==============================================

Each step below measures one condition that the convergence argument relies on,
using explicit MDPs where the exact answer is computable.
"""

import numpy as np
from marl_tsc import StepSchedule, check_step_schedule, random_mdp, solve_q_star
from marl_tsc.convergence import (estimate_contraction, noise_statistics, oracle_agreement,
                                  sample_noise, uniform_sampler)
from marl_tsc.network import build_single_junction
from marl_tsc.oracle import (async_value_iteration, mdp_from_network, q_operator_F,
                             round_robin_stream, value_iteration)
from marl_tsc.qlearn import q_learning_on_mdp

rng = np.random.default_rng(0)

# step sizes: sum diverges, sum of squares converges
for sched in (StepSchedule.harmonic(), StepSchedule.polynomial(0.7), StepSchedule.constant(0.1),
              StepSchedule.polynomial(2.0)):
    v = check_step_schedule(sched)
    print(f"{sched.kind:10s} exponent={sched.exponent}: {v.passed} ({v.reason})")

# the Q operator shrinks distances by at least the discount
mdp = random_mdp(20, 3, 0.9, rng)
est = estimate_contraction(lambda Q: q_operator_F(mdp, Q), uniform_sampler((20, 3)), 1000, rng)
print(f"observed contraction factor {est.beta_hat:.4f} for discount 0.9")

# asynchronous sweeps reach the same fixed point as synchronous ones
J, _ = value_iteration(mdp, 1e-12)
res = async_value_iteration(mdp, round_robin_stream(20), 1e-12)
print("async vs sync value iteration:", np.abs(res.J - J).max())

# the stochastic target minus its mean has zero mean and bounded second moment
noise = noise_statistics(sample_noise(mdp, solve_q_star(mdp), 200, rng))
print(f"noise: {noise.straddle_fraction:.3f} of groups centred on 0, "
      f"bound holds in {noise.bound_fraction:.3f}, implied K = {noise.implied_K:.3f}")

# Q-learning on a single-junction MDP estimated from the simulator approaches Q*
net = build_single_junction((0.2, 0.2))
jmdp, _ = mdp_from_network(net, np.random.default_rng(1), discount=0.5, samples=300)
for steps in (1_000, 10_000, 100_000):
    learn = q_learning_on_mdp(jmdp, steps, np.random.default_rng(2))
    gap = oracle_agreement({0: learn.Q}, {0: jmdp}, {0: learn.counters}, v_min=100)[0]
    print(f"{steps:>7d} updates: gap on well-visited pairs {gap.gap_visited:.4f} "
          f"({gap.pairs_compared} pairs), policy agreement {gap.policy_agreement:.2f}")
