"""Tabular Q-learning for independent junction agents (costs are minimized)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import MdpConfig, max_cost, n_states, neighborhood_cost, observe_state, state_index
from .network import TrafficNetwork
from .oracle import ExplicitMDP
from .sim import GreenSchedule, TrafficSimulator

TRACE_CSV_HEADER = ("t", "junction", "state", "action", "cost", "next_state", "gamma",
                    "q_before", "q_after")


@dataclass
class QTable:
    values: np.ndarray
    agent: int = 0
    n_lanes: int = 0
    n_phases: int = 0

    @classmethod
    def zeros(cls, n_lanes: int, n_phases: int, n_actions: int = 3, agent: int = 0,
              init: float = 0.0) -> "QTable":
        vals = np.full((n_states(n_lanes, n_phases), n_actions), float(init))
        return cls(vals, agent, n_lanes, n_phases)

    @classmethod
    def for_junction(cls, net: TrafficNetwork, j: int, n_actions: int = 3,
                     init: float = 0.0) -> "QTable":
        jn = net.junction(j)
        return cls.zeros(jn.n_lanes, jn.n_phases, n_actions, j, init)

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class StepSchedule:
    """gamma(t) for harmonic ``scale/(t+offset)``, polynomial ``scale/(t+offset)**exponent``
    or constant ``value``."""

    kind: str = "harmonic"
    offset: float = 1.0
    scale: float = 1.0
    exponent: float = 1.0
    value: float = 0.1

    def __post_init__(self):
        if self.kind not in ("harmonic", "polynomial", "constant"):
            raise ValueError(f"unknown step schedule kind {self.kind!r}")
        if self.kind == "constant":
            if not self.value > 0:
                raise ValueError("constant step must be positive")
        elif not (self.offset > 0 and self.scale > 0):
            raise ValueError("step offset and scale must be positive")

    @classmethod
    def harmonic(cls, offset: float = 1.0, scale: float = 1.0) -> "StepSchedule":
        return cls("harmonic", offset=offset, scale=scale)

    @classmethod
    def polynomial(cls, exponent: float, offset: float = 1.0, scale: float = 1.0) -> "StepSchedule":
        return cls("polynomial", offset=offset, scale=scale, exponent=exponent)

    @classmethod
    def constant(cls, value: float) -> "StepSchedule":
        return cls("constant", value=value)

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        e = 1.0 if self.kind == "harmonic" else self.exponent
        return self.scale / (t + self.offset) ** e

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        d = {"kind": self.kind, "offset": self.offset, "scale": self.scale}
        if self.kind == "polynomial":
            d["exponent"] = self.exponent
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepSchedule":
        return cls(**d)


@dataclass
class VisitCounters:
    state_visits: np.ndarray
    state_action_visits: np.ndarray

    @classmethod
    def zeros(cls, n_states_: int, n_actions: int) -> "VisitCounters":
        return cls(np.zeros(n_states_, dtype=np.int64),
                   np.zeros((n_states_, n_actions), dtype=np.int64))


@dataclass(frozen=True)
class Exploration:
    kind: str = "epsilon"          # "epsilon" | "ucb"
    epsilon0: float = 1.0
    decay_rate: float = 1e-3
    floor: float = 0.01

    def __post_init__(self):
        if self.kind not in ("epsilon", "ucb"):
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if not (0 <= self.floor <= 1 and 0 <= self.epsilon0 <= 1 and self.decay_rate >= 0):
            raise ValueError("epsilon parameters out of range")

    def epsilon(self, t: int) -> float:
        return max(self.floor, self.epsilon0 * math.exp(-self.decay_rate * t))


@dataclass(frozen=True)
class LearningConfig:
    discount: float = 0.9
    step: StepSchedule = field(default_factory=StepSchedule)
    # "visits": gamma evaluated at the pair's prior update count; "global": at the cycle index
    step_clock: str = "visits"
    exploration: Exploration = field(default_factory=Exploration)
    q_init: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0,1), got {self.discount}")
        if self.step_clock not in ("visits", "global"):
            raise ValueError(f"unknown step clock {self.step_clock!r}")


def q_update(table, s: int, a: int, cost: float, s_next: int, gamma: float,
             discount: float) -> float:
    """Q(s,a) += gamma * (cost + discount * min_b Q(s',b) - Q(s,a)); returns the new value."""
    if not gamma > 0:
        raise ValueError(f"step size must be positive, got {gamma}")
    Q = table.values if isinstance(table, QTable) else table
    target = cost + discount * Q[s_next].min()
    Q[s, a] += gamma * (target - Q[s, a])
    return float(Q[s, a])


def select_action_epsilon(table, s: int, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon outside [0,1]: {epsilon}")
    Q = table.values if isinstance(table, QTable) else table
    if rng.random() < epsilon:
        return int(rng.integers(Q.shape[1]))
    return int(np.argmin(Q[s]))


def select_action_ucb(table, s: int, counters: VisitCounters) -> int:
    """argmax_c [-Q(s,c) + ln R_s / R_{s,c}]; never-tried actions first."""
    Q = table.values if isinstance(table, QTable) else table
    tried = counters.state_action_visits[s]
    untried = np.flatnonzero(tried == 0)
    if untried.size:
        return int(untried[0])
    bonus = math.log(counters.state_visits[s]) / tried
    return int(np.argmax(-Q[s] + bonus))


def greedy_policy(table) -> np.ndarray:
    """Greedy action per state index (lowest action on ties)."""
    Q = table.values if isinstance(table, QTable) else table
    return np.argmin(Q, axis=1)


class TrainingTrace:
    """Per agent-cycle record of one training run."""

    def __init__(self):
        self._rows: list[tuple] = []
        self._norms: list[float] = []

    def append(self, t, junction, state, action, cost, next_state, gamma, q_before, q_after,
               q_norm: float = math.nan) -> None:
        self._rows.append((int(t), int(junction), int(state), int(action), float(cost),
                           int(next_state), float(gamma), float(q_before), float(q_after)))
        self._norms.append(float(q_norm))

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def rows(self) -> list[tuple]:
        return self._rows

    def column(self, name: str) -> np.ndarray:
        if name == "q_norm":
            return np.array(self._norms)
        k = TRACE_CSV_HEADER.index(name)
        return np.array([r[k] for r in self._rows])

    def write_csv(self, fh, header: bool = True) -> None:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(TRACE_CSV_HEADER)
        for r in self._rows:
            w.writerow([r[0], r[1], r[2], r[3], repr(r[4]), r[5], repr(r[6]), repr(r[7]),
                        repr(r[8])])

    @classmethod
    def read_csv(cls, fh) -> "TrainingTrace":
        tr = cls()
        rd = csv.reader(fh)
        head = next(rd)
        if tuple(head) != TRACE_CSV_HEADER:
            raise ValueError(f"unexpected trace header {head}")
        for r in rd:
            tr.append(int(r[0]), int(r[1]), int(r[2]), int(r[3]), float(r[4]), int(r[5]),
                      float(r[6]), float(r[7]), float(r[8]))
        return tr


@dataclass
class EpisodeResult:
    trace: TrainingTrace
    counters: dict[int, VisitCounters]
    sim: TrafficSimulator
    schedule: GreenSchedule
    cycles_run: int


def run_marl_episode(net: TrafficNetwork, tables: dict[int, QTable], steps: int,
                     config: LearningConfig, mdp_config: MdpConfig,
                     rng_sim: np.random.Generator, rng_explore: np.random.Generator,
                     schedule: GreenSchedule | None = None,
                     sim: TrafficSimulator | None = None,
                     counters: dict[int, VisitCounters] | None = None,
                     start_cycle: int = 0) -> EpisodeResult:
    """Independent learners, one Q-update per junction per completed cycle.

    In cycle ``t`` junction ``j``'s active phase is ``t mod P_j``; the agent's
    action sets that phase's green time while the other phases keep their
    previous durations. Costs and next states are read after the cycle.
    """
    if sim is None:
        sim = TrafficSimulator(net, rng_sim)
    allowed = mdp_config.action_durations
    if schedule is None:
        schedule = GreenSchedule.uniform(net, allowed[1], allowed)
    if counters is None:
        counters = {jn.id: VisitCounters.zeros(tables[jn.id].values.shape[0], len(allowed))
                    for jn in net.junctions}
    for jn in net.junctions:
        want = (n_states(jn.n_lanes, jn.n_phases), len(allowed))
        if tables[jn.id].values.shape != want:
            raise ValueError(f"Q-table for junction {jn.id} has shape "
                             f"{tables[jn.id].values.shape}, expected {want}")
    d1, d2 = mdp_config.d1, mdp_config.d2
    expl = config.exploration
    trace = TrainingTrace()

    for k in range(steps):
        t = start_cycle + k
        durations = dict(schedule.durations)
        decisions = []
        for jn in net.junctions:
            j, P = jn.id, jn.n_phases
            p = t % P
            s = state_index(observe_state(net, sim.lanes, j, p, d1, d2), jn.n_lanes, P)
            cnt = counters[j]
            cnt.state_visits[s] += 1
            if expl.kind == "ucb":
                a = select_action_ucb(tables[j], s, cnt)
            else:
                a = select_action_epsilon(tables[j], s, expl.epsilon(t), rng_explore)
            cnt.state_action_visits[s, a] += 1
            durations[(j, p)] = allowed[a]
            decisions.append((jn, s, a))
        schedule = GreenSchedule(durations, allowed)
        sim.advance(schedule)
        for jn, s, a in decisions:
            j = jn.id
            c = neighborhood_cost(net, sim.lanes, j, d1, d2, t).value
            s2 = state_index(observe_state(net, sim.lanes, j, (t + 1) % jn.n_phases, d1, d2),
                             jn.n_lanes, jn.n_phases)
            n = counters[j].state_action_visits[s, a] - 1 if config.step_clock == "visits" else t
            gamma = config.step(n)
            Q = tables[j].values
            before = float(Q[s, a])
            after = q_update(Q, s, a, c, s2, gamma, config.discount)
            trace.append(t, j, s, a, c, s2, gamma, before, after, float(np.abs(Q).max()))
    return EpisodeResult(trace, counters, sim, schedule, steps)


def cost_bound(net: TrafficNetwork) -> float:
    """Largest possible per-cycle cost over all agents."""
    return max(max_cost(net, jn.id) for jn in net.junctions)


@dataclass
class MdpLearningResult:
    Q: np.ndarray
    counters: VisitCounters
    steps: int
    sup_norm: float


def q_learning_on_mdp(mdp: ExplicitMDP, steps: int, rng: np.random.Generator,
                      step: StepSchedule = StepSchedule(), exploration: str = "ucb",
                      epsilon: Exploration | None = None, Q0: np.ndarray | None = None,
                      start_state: int = 0, step_clock: str = "visits") -> MdpLearningResult:
    """Run the same update rule on transitions sampled from an explicit MDP."""
    Q = np.zeros_like(mdp.cost) if Q0 is None else np.array(Q0, dtype=float)
    cnt = VisitCounters.zeros(mdp.n_states, mdp.n_actions)
    eps = epsilon or Exploration()
    s = start_state
    sup = float(np.abs(Q).max())
    for t in range(steps):
        cnt.state_visits[s] += 1
        if exploration == "ucb":
            a = select_action_ucb(Q, s, cnt)
        else:
            a = select_action_epsilon(Q, s, eps.epsilon(t), rng)
        cnt.state_action_visits[s, a] += 1
        c, s2 = mdp.sample(s, a, rng)
        n = cnt.state_action_visits[s, a] - 1 if step_clock == "visits" else t
        v = q_update(Q, s, a, c, s2, step(n), mdp.discount)
        sup = max(sup, abs(v))
        s = s2
    return MdpLearningResult(Q, cnt, steps, sup)


# --- snapshots -----------------------------------------------------------------

def qtable_to_dict(table: QTable, actions: Sequence[int], discount: float,
                   schedule: StepSchedule) -> dict:
    n, A = table.values.shape
    return {
        "junction": table.agent,
        "n_lanes": table.n_lanes,
        "n_phases": table.n_phases,
        "actions": list(actions),
        "discount": discount,
        "step_schedule": schedule.to_dict(),
        "records": [[s, a, float(table.values[s, a])] for s in range(n) for a in range(A)],
    }


def qtable_from_dict(d: dict) -> tuple[QTable, dict]:
    table = QTable.zeros(d["n_lanes"], d["n_phases"], len(d["actions"]), d["junction"])
    for s, a, v in d["records"]:
        table.values[s, a] = v
    header = {k: v for k, v in d.items() if k != "records"}
    return table, header


def dumps_qtable(table: QTable, actions: Sequence[int], discount: float,
                 schedule: StepSchedule) -> str:
    return json.dumps(qtable_to_dict(table, actions, discount, schedule)) + "\n"


def loads_qtable(text: str) -> tuple[QTable, dict]:
    return qtable_from_dict(json.loads(text))
