"""
Training the junction agents and comparing policies
===================================================

Each junction runs its own tabular Q-learner on a discretized view of its
queues, paid in the average occupancy of its neighborhood.
"""

import numpy as np
from marl_tsc.harness import ExperimentConfig, compare_baselines, resolve_network, train
from marl_tsc.mdp import state_decode

cfg = ExperimentConfig()
net = resolve_network(cfg)
run = train(cfg, net, seed=0)
print(f"{cfg.cycles} cycles, {len(run.trace)} updates")

# the greedy duration per state for junction 0 (actions index 10/20/30 s)
table = run.tables[0].values
durations = cfg.mdp.action_durations
visited = run.counters[0].state_visits > 0
print(f"junction 0 visited {visited.sum()} of {len(visited)} states")
for s in np.flatnonzero(visited)[:10]:
    st = state_decode(int(s), 3, 3)
    print(f"  occupancy {st.occupancies} phase {st.active_phase}: "
          f"{durations[int(np.argmin(table[s]))]} s  Q={np.round(table[s], 2)}")

# learned greedy against fixed 20 s and uniform random durations, same traffic per seed
cfg.baselines["seeds"] = 5
for row in compare_baselines(cfg, net):
    print(f"{row.policy:15s} mean cost {row.mean_cost:.3f} +/- {row.stderr:.3f}")
