import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_tsc.mdp import MdpConfig
from marl_tsc.network import build_single_junction
from marl_tsc.oracle import (ExplicitMDP, MDPTooLarge, async_value_iteration, bellman_T,
                             deterministic_mdp, dumps_mdp, greedy, lift_to_q, loads_mdp,
                             mdp_from_network, q_operator_F, random_mdp, random_stream,
                             round_robin_stream, solve_q_star, value_iteration)


def one_state(cost=1.0, beta=0.5):
    return deterministic_mdp(np.array([[0]]), np.array([[cost]]), beta)


def two_cycle(beta=0.9):
    return deterministic_mdp(np.array([[1], [0]]), np.array([[1.0], [0.0]]), beta)


def brute_force_J(mdp):
    """Independent oracle: min over all deterministic stationary policies of the
    policy-evaluation linear system J = c_pi + beta P_pi J."""
    n, A = mdp.n_states, mdp.n_actions
    best = np.full(n, np.inf)
    for pol in itertools.product(range(A), repeat=n):
        P = mdp.transition[np.arange(n), pol]
        c = mdp.cost[np.arange(n), pol]
        J = np.linalg.solve(np.eye(n) - mdp.discount * P, c)
        best = np.minimum(best, J)
    return best


def test_rows_validated():
    P = np.full((2, 1, 2), 0.5)
    P[0, 0] = (0.5, 0.4)
    with pytest.raises(ValueError):
        ExplicitMDP(P, np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        ExplicitMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1.0)


def test_bellman_single_step():
    assert bellman_T(one_state(), np.zeros(1))[0] == 1.0


def test_value_iteration_single_state():
    J, _ = value_iteration(one_state(), 1e-8)
    assert abs(J[0] - 2.0) < 1e-8


def test_value_iteration_two_cycle():
    J, _ = value_iteration(two_cycle(), 1e-10)
    # J0 = 1 + 0.81 J0, J1 = 0.9 J0
    assert J == pytest.approx([5.2631578947368425, 4.7368421052631575], abs=1e-9)


def test_zero_cost_one_sweep():
    mdp = random_mdp(5, 2, 0.9, np.random.default_rng(0), cost_scale=0.0)
    J, iters = value_iteration(mdp, 1e-8)
    assert iters == 1 and not J.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 0.9, 0.99]))
def test_value_iteration_matches_policy_enumeration(seed, beta):
    mdp = random_mdp(4, 2, beta, np.random.default_rng(seed))
    J, _ = value_iteration(mdp, 1e-9)
    assert np.abs(J - brute_force_J(mdp)).max() < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 0.9, 0.99]))
def test_T_and_F_are_contractions(seed, beta):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(6, 3, beta, rng)
    J1, J2 = rng.normal(0, 10, 6), rng.normal(0, 10, 6)
    Q1, Q2 = rng.normal(0, 10, (6, 3)), rng.normal(0, 10, (6, 3))
    assert (np.abs(bellman_T(mdp, J1) - bellman_T(mdp, J2)).max()
            <= beta * np.abs(J1 - J2).max() + 1e-12)
    assert (np.abs(q_operator_F(mdp, Q1) - q_operator_F(mdp, Q2)).max()
            <= beta * np.abs(Q1 - Q2).max() + 1e-12)
    # ||P||_inf <= 1
    assert np.abs(mdp.transition).sum(axis=2).max() <= 1 + 1e-12


def test_async_round_robin_matches_sync():
    mdp = two_cycle()
    J, _ = value_iteration(mdp, 1e-12)
    res = async_value_iteration(mdp, round_robin_stream(2), 1e-10)
    assert res.converged and np.abs(res.J - J).max() < 1e-6


def test_async_never_visiting_a_state():
    mdp = two_cycle()
    res = async_value_iteration(mdp, (0 for _ in range(1000)), 1e-8, J0=np.array([0.0, 7.0]))
    assert not res.converged and res.J[1] == 7.0


def test_async_random_stream():
    mdp = random_mdp(10, 3, 0.9, np.random.default_rng(4))
    J, _ = value_iteration(mdp, 1e-12)
    res = async_value_iteration(mdp, random_stream(10, 100_000, np.random.default_rng(5)), 1e-9)
    assert np.abs(res.J - J).max() < 1e-6


def test_F_at_zero_is_cost():
    mdp = random_mdp(5, 3, 0.9, np.random.default_rng(1))
    assert np.array_equal(q_operator_F(mdp, np.zeros((5, 3))), mdp.cost)


def test_lifted_J_is_fixed_point_of_F():
    mdp = random_mdp(8, 3, 0.9, np.random.default_rng(2))
    J, _ = value_iteration(mdp, 1e-12)
    Q = lift_to_q(mdp, J)
    assert np.abs(q_operator_F(mdp, Q) - Q).max() < 1e-8
    Qs = solve_q_star(mdp, 1e-10)
    assert np.abs(Qs - Q).max() < 1e-6
    assert np.array_equal(greedy(Qs), greedy(Q))


def test_q_star_examples():
    assert solve_q_star(one_state(), 1e-10)[0, 0] == pytest.approx(2.0, abs=1e-9)
    P = np.ones((1, 2, 1))
    mdp = ExplicitMDP(P, np.array([[0.0, 1.0]]), 0.5)
    assert greedy(solve_q_star(mdp))[0] == 0


def test_sampler_matches_transition_rows():
    mdp = random_mdp(3, 2, 0.9, np.random.default_rng(3))
    rng = np.random.default_rng(6)
    n = 30_000
    hits = np.bincount([mdp.sample(1, 1, rng)[1] for _ in range(n)], minlength=3) / n
    p = mdp.transition[1, 1]
    assert np.all(np.abs(hits - p) <= 4 * np.sqrt(p * (1 - p) / n))


def test_mdp_file_round_trip():
    mdp = random_mdp(4, 3, 0.9, np.random.default_rng(7))
    text = dumps_mdp(mdp)
    back = loads_mdp(text)
    assert np.array_equal(back.transition, mdp.transition)
    assert np.array_equal(back.cost, mdp.cost) and np.array_equal(back.cost_var, mdp.cost_var)
    assert np.array_equal(back.transition_cost, mdp.transition_cost)
    assert back.discount == mdp.discount and dumps_mdp(back) == text


def test_mdp_from_network_single_lane():
    net = build_single_junction((0.2,))
    cfg = MdpConfig(d1=1, d2=2)
    mdp, rep = mdp_from_network(net, np.random.default_rng(0), config=cfg, truncation=4,
                                samples=200)
    assert mdp.n_states == 3 * 1 and mdp.n_actions == 3
    assert np.allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)
    # the lone lane is always green and drains fully, so the chain is deterministic
    assert rep.max_row_stderr == 0.0 and rep.samples_per_pair == 200
    assert (mdp.transition[:, :, 0] == 1.0).all()


def test_mdp_from_network_zero_arrivals_absorbs():
    net = build_single_junction((0.0, 0.0))
    mdp, _ = mdp_from_network(net, np.random.default_rng(0), samples=50)
    # empty state (all low, phase 0) moves to the empty state with phase 1, cost 0
    assert (mdp.cost[0] == 0).all()
    assert (mdp.transition[0, :, 1] == 1.0).all()
    assert (mdp.transition[1, :, 0] == 1.0).all()


def test_mdp_from_network_repeatable():
    net = build_single_junction((0.2, 0.2))
    a, _ = mdp_from_network(net, np.random.default_rng(9), samples=30)
    b, _ = mdp_from_network(net, np.random.default_rng(9), samples=30)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.cost, b.cost)


def test_mdp_from_network_cap():
    with pytest.raises(MDPTooLarge):
        mdp_from_network(build_single_junction((0.1,) * 8), np.random.default_rng(0))
