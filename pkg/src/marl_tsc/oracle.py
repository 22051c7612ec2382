"""Ground-truth dynamic programming on small explicit MDPs.

Costs are minimized. ``Q`` arrays have shape ``(n_states, n_actions)``; a
state-action pair ``(i, u)`` is flattened as ``i * n_actions + u`` where a
vector form is needed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .mdp import (MdpConfig, n_states, neighborhood_cost, observe_state, state_decode,
                  state_index)
from .network import TrafficNetwork
from .sim import GreenSchedule, advance_cycle, initial_lane_states

ROW_TOL = 1e-12


class MDPTooLarge(ValueError):
    pass


@dataclass(eq=False)
class ExplicitMDP:
    transition: np.ndarray                 # (n, A, n), rows p_ij(u)
    cost: np.ndarray                       # (n, A), E[c_iu]
    discount: float
    cost_var: np.ndarray | None = None     # (n, A), Var(c_iu)
    transition_cost: np.ndarray | None = None   # (n, A, n), E[c | i, u, j]

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        n, A, n2 = self.transition.shape
        if n != n2 or self.cost.shape != (n, A):
            raise ValueError(f"inconsistent shapes {self.transition.shape} / {self.cost.shape}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0,1), got {self.discount}")
        if (self.transition < 0).any():
            raise ValueError("negative transition probability")
        dev = np.abs(self.transition.sum(axis=2) - 1.0).max()
        if dev > ROW_TOL:
            raise ValueError(f"transition rows deviate from 1 by {dev:.3e}")
        if not np.isfinite(self.cost).all():
            raise ValueError("non-finite cost")
        if self.cost_var is None:
            self.cost_var = np.zeros_like(self.cost)
        else:
            self.cost_var = np.asarray(self.cost_var, dtype=float)
        if self.transition_cost is not None:
            self.transition_cost = np.asarray(self.transition_cost, dtype=float)
        self._cum = None

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def sample(self, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
        """Draw (cost, next state).

        With ``transition_cost`` the cost is the mean cost of the sampled
        transition; otherwise it is Gaussian around ``cost`` with ``cost_var``.
        """
        if self._cum is None:
            self._cum = np.cumsum(self.transition, axis=2)
        row = self._cum[s, a]
        j = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        j = min(j, self.n_states - 1)
        if self.transition_cost is not None:
            return float(self.transition_cost[s, a, j]), j
        var = self.cost_var[s, a]
        c = self.cost[s, a] + (math.sqrt(var) * rng.standard_normal() if var > 0 else 0.0)
        return float(c), j


def random_mdp(n_states: int, n_actions: int, discount: float, rng: np.random.Generator,
               cost_scale: float = 1.0) -> ExplicitMDP:
    """Dense Dirichlet transitions, transition-dependent uniform costs."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    g = rng.uniform(0.0, cost_scale, size=(n_states, n_actions, n_states))
    cost = (P * g).sum(axis=2)
    var = (P * (g - cost[..., None]) ** 2).sum(axis=2)
    return ExplicitMDP(P, cost, discount, var, g)


def deterministic_mdp(next_state: np.ndarray, cost: np.ndarray, discount: float) -> ExplicitMDP:
    next_state = np.asarray(next_state)
    n, A = next_state.shape
    P = np.zeros((n, A, n))
    for i in range(n):
        for u in range(A):
            P[i, u, next_state[i, u]] = 1.0
    return ExplicitMDP(P, np.asarray(cost, dtype=float), discount)


# --- operators -----------------------------------------------------------------

def bellman_T(mdp: ExplicitMDP, J: np.ndarray) -> np.ndarray:
    """(TJ)(i) = min_u [E c_iu + beta sum_j p_ij(u) J(j)]."""
    return (mdp.cost + mdp.discount * mdp.transition @ J).min(axis=1)


def q_operator_F(mdp: ExplicitMDP, Q: np.ndarray) -> np.ndarray:
    """F_iu(Q) = E c_iu + beta sum_j p_ij(u) min_v Q_jv."""
    return mdp.cost + mdp.discount * (mdp.transition @ Q.min(axis=1))


def lift_to_q(mdp: ExplicitMDP, J: np.ndarray) -> np.ndarray:
    return mdp.cost + mdp.discount * (mdp.transition @ J)


def greedy(Q: np.ndarray) -> np.ndarray:
    """argmin per state, lowest index on ties."""
    return np.argmin(Q, axis=1)


def _stop_threshold(tol: float, beta: float) -> float:
    return tol * (1.0 - beta) / beta


def value_iteration(mdp: ExplicitMDP, tol: float = 1e-8, J0: np.ndarray | None = None,
                    max_iter: int = 1_000_000) -> tuple[np.ndarray, int]:
    """Synchronous VI; the returned J is within ``tol`` of J* in the sup norm."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    J = np.zeros(mdp.n_states) if J0 is None else np.array(J0, dtype=float)
    thresh = _stop_threshold(tol, mdp.discount)
    for k in range(1, max_iter + 1):
        J_new = bellman_T(mdp, J)
        step = np.abs(J_new - J).max()
        J = J_new
        if step < thresh:
            return J, k
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


@dataclass
class AsyncVIResult:
    J: np.ndarray
    converged: bool
    updates: int
    residual: float


def round_robin_stream(n: int, sweeps: int | None = None) -> Iterator[int]:
    k = 0
    while sweeps is None or k < sweeps * n:
        yield k % n
        k += 1


def random_stream(n: int, count: int, rng: np.random.Generator) -> Iterator[int]:
    for chunk_start in range(0, count, 4096):
        for i in rng.integers(0, n, size=min(4096, count - chunk_start)):
            yield int(i)


def async_value_iteration(mdp: ExplicitMDP, visit_stream: Iterable[int], tol: float = 1e-8,
                          J0: np.ndarray | None = None) -> AsyncVIResult:
    """Gauss-Seidel style VI: update only the visited state each step.

    Every ``n_states`` updates the full Bellman residual r = ||TJ - J|| is
    checked; r / (1 - beta) < tol certifies ||J - J*|| < tol. A stream that
    runs out first yields ``converged=False``.
    """
    n = mdp.n_states
    J = np.zeros(n) if J0 is None else np.array(J0, dtype=float)
    beta = mdp.discount
    base = mdp.cost
    P = mdp.transition
    updates = 0
    residual = math.inf
    for i in visit_stream:
        J[i] = (base[i] + beta * (P[i] @ J)).min()
        updates += 1
        if updates % n == 0:
            residual = float(np.abs(bellman_T(mdp, J) - J).max())
            if residual < tol * (1.0 - beta):
                return AsyncVIResult(J, True, updates, residual)
    residual = float(np.abs(bellman_T(mdp, J) - J).max())
    return AsyncVIResult(J, residual < tol * (1.0 - beta), updates, residual)


def solve_q_star(mdp: ExplicitMDP, tol: float = 1e-8, Q0: np.ndarray | None = None,
                 max_iter: int = 1_000_000) -> np.ndarray:
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = np.zeros_like(mdp.cost) if Q0 is None else np.array(Q0, dtype=float)
    thresh = _stop_threshold(tol, mdp.discount)
    for _ in range(max_iter):
        Q_new = q_operator_F(mdp, Q)
        step = np.abs(Q_new - Q).max()
        Q = Q_new
        if step < thresh:
            return Q
    raise RuntimeError(f"Q fixed-point iteration did not reach tol={tol}")


# --- estimation from the simulator ---------------------------------------------

@dataclass
class EstimationReport:
    junction: int
    samples_per_pair: int
    max_row_stderr: float
    truncation: int
    seconds_per_pair: float = field(default=0.0, repr=False)


def _bin_ranges(cfg: MdpConfig, top: int) -> list[tuple[int, int]]:
    return [(0, cfg.d1 - 1), (cfg.d1, cfg.d2 - 1), (cfg.d2, max(cfg.d2, top))]


def mdp_from_network(net: TrafficNetwork, rng: np.random.Generator, junction: int = 0,
                     config: MdpConfig = MdpConfig(), discount: float = 0.9,
                     truncation: int | None = None, samples: int = 1000,
                     other_duration: int | None = None,
                     cap: int = 10_000) -> tuple[ExplicitMDP, EstimationReport]:
    """Estimate junction ``junction``'s discretized chain by one-cycle rollouts.

    For each (state, action) and each sample, raw counts are drawn uniformly
    inside the occupancy bins (the top bin truncated at ``truncation``), the
    junction's other phases get uniformly random previous durations, lanes of
    other junctions get uniform counts in ``[0, truncation]`` and their phases
    run at the frozen ``other_duration``. One cycle is simulated with the
    active phase set by the action.
    """
    jn = net.junction(junction)
    L, Pn = jn.n_lanes, jn.n_phases
    n = n_states(L, Pn)
    A = config.n_actions
    if n * A > cap:
        raise MDPTooLarge(f"{n} states x {A} actions = {n * A} pairs exceeds cap {cap}")
    if truncation is None:
        truncation = 2 * config.d2
    if truncation < config.d2:
        raise ValueError(f"truncation {truncation} below d2={config.d2}")
    if other_duration is None:
        other_duration = config.action_durations[1]
    durations = config.action_durations
    own = set(jn.incoming_lanes)
    others = [ln.id for ln in net.lanes if ln.id not in own]
    base_sched = {(k.id, ph.index): other_duration for k in net.junctions for ph in k.phases}

    counts = np.zeros((n, A, n))
    g_sum = np.zeros((n, A, n))
    c_sum = np.zeros((n, A))
    c_sq = np.zeros((n, A))
    lane_caps = {ln.id: ln.capacity for ln in net.lanes}
    for s in range(n):
        st = state_decode(s, L, Pn)
        ranges = [_bin_ranges(config, min(truncation, lane_caps[i]))[q]
                  for i, q in zip(jn.incoming_lanes, st.occupancies)]
        nxt_phase = (st.active_phase + 1) % Pn
        for a in range(A):
            for _ in range(samples):
                raw = np.zeros(len(net.lanes), dtype=np.int64)
                for i, (lo, hi) in zip(jn.incoming_lanes, ranges):
                    raw[i] = min(int(rng.integers(lo, hi + 1)), lane_caps[i])
                for i in others:
                    raw[i] = int(rng.integers(0, min(truncation, lane_caps[i]) + 1))
                sched = dict(base_sched)
                for ph in jn.phases:
                    sched[(jn.id, ph.index)] = (durations[a] if ph.index == st.active_phase
                                                else durations[int(rng.integers(0, A))])
                lanes = initial_lane_states(net, raw)
                advance_cycle(net, lanes, GreenSchedule(sched, durations), rng)
                s2 = observe_state(net, lanes, jn.id, nxt_phase, config.d1, config.d2)
                j2 = state_index(s2, L, Pn)
                c = neighborhood_cost(net, lanes, jn.id, config.d1, config.d2).value
                counts[s, a, j2] += 1
                g_sum[s, a, j2] += c
                c_sum[s, a] += c
                c_sq[s, a] += c * c
    P = counts / counts.sum(axis=2, keepdims=True)
    P /= P.sum(axis=2, keepdims=True)
    mean = c_sum / samples
    var = np.maximum(c_sq / samples - mean ** 2, 0.0)
    g = np.divide(g_sum, counts, out=np.zeros_like(g_sum), where=counts > 0)
    stderr = float(np.sqrt(P * (1 - P) / samples).max())
    mdp = ExplicitMDP(P, mean, discount, var, g)
    return mdp, EstimationReport(jn.id, samples, stderr, truncation)


# --- file format -----------------------------------------------------------------

def mdp_to_dict(mdp: ExplicitMDP) -> dict:
    n, A = mdp.n_states, mdp.n_actions
    trans = [[i, u, j, float(mdp.transition[i, u, j])]
             for i in range(n) for u in range(A) for j in range(n)
             if mdp.transition[i, u, j] != 0.0]
    costs = [[i, u, float(mdp.cost[i, u]), float(mdp.cost_var[i, u])]
             for i in range(n) for u in range(A)]
    out = {"n_states": n, "actions": A, "discount": mdp.discount,
           "transitions": trans, "costs": costs}
    if mdp.transition_cost is not None:
        out["transition_costs"] = [[i, u, j, float(mdp.transition_cost[i, u, j])]
                                   for i, u, j, _ in trans]
    return out


def mdp_from_dict(data: dict) -> ExplicitMDP:
    n, A = int(data["n_states"]), int(data["actions"])
    P = np.zeros((n, A, n))
    for i, u, j, p in data["transitions"]:
        P[i, u, j] = p
    cost = np.zeros((n, A))
    var = np.zeros((n, A))
    for i, u, m, v in data["costs"]:
        cost[i, u] = m
        var[i, u] = v
    g = None
    if "transition_costs" in data:
        g = np.zeros((n, A, n))
        for i, u, j, c in data["transition_costs"]:
            g[i, u, j] = c
    return ExplicitMDP(P, cost, float(data["discount"]), var, g)


def dumps_mdp(mdp: ExplicitMDP) -> str:
    return json.dumps(mdp_to_dict(mdp)) + "\n"


def loads_mdp(text: str) -> ExplicitMDP:
    return mdp_from_dict(json.loads(text))
