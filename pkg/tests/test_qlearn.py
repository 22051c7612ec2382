import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_tsc.mdp import MdpConfig
from marl_tsc.network import build_three_junction_example
from marl_tsc.oracle import deterministic_mdp, random_mdp
from marl_tsc.qlearn import (TRACE_CSV_HEADER, Exploration, LearningConfig, QTable, StepSchedule,
                             TrainingTrace, VisitCounters, cost_bound, dumps_qtable, greedy_policy,
                             loads_qtable, q_learning_on_mdp, q_update, run_marl_episode,
                             select_action_epsilon, select_action_ucb)

finite = st.floats(-50, 50, allow_nan=False)


def test_q_update_zero_table():
    Q = np.zeros((2, 3))
    assert q_update(Q, 0, 1, 1.0, 1, 1.0, 0.5) == 1.0


def test_q_update_example():
    Q = np.full((2, 3), 2.0)
    assert q_update(Q, 0, 0, 1.0, 1, 0.1, 0.9) == pytest.approx(2.08, abs=1e-12)


def test_q_update_rejects_zero_step():
    with pytest.raises(ValueError):
        q_update(np.zeros((1, 1)), 0, 0, 1.0, 0, 0.0, 0.9)


@given(st.lists(finite, min_size=6, max_size=6), finite, st.floats(1e-3, 1.0),
       st.floats(0.01, 0.99), st.integers(0, 1), st.integers(0, 2), st.integers(0, 1))
def test_q_update_locality_and_convex_form(vals, cost, gamma, disc, s, a, s2):
    Q = np.array(vals).reshape(2, 3)
    before = Q.copy()
    target = cost + disc * before[s2].min()
    new = q_update(Q, s, a, cost, s2, gamma, disc)
    mask = np.ones_like(Q, bool)
    mask[s, a] = False
    assert np.array_equal(Q[mask], before[mask])
    assert new == before[s, a] + gamma * (target - before[s, a])
    assert new == pytest.approx((1 - gamma) * before[s, a] + gamma * target, rel=1e-12, abs=1e-12)


def test_epsilon_greedy_pure_and_ties():
    rng = np.random.default_rng(0)
    Q = np.array([[3.0, 1.0, 2.0], [1.0, 1.0, 5.0]])
    assert all(select_action_epsilon(Q, 0, 0.0, rng) == 1 for _ in range(50))
    assert all(select_action_epsilon(Q, 1, 0.0, rng) == 0 for _ in range(50))
    with pytest.raises(ValueError):
        select_action_epsilon(Q, 0, 1.5, rng)


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(1)
    Q = np.array([[3.0, 1.0, 2.0]])
    n = 100_000
    freq = np.bincount([select_action_epsilon(Q, 0, 1.0, rng) for _ in range(n)], minlength=3) / n
    sigma = math.sqrt((1 / 3) * (2 / 3) / n)
    assert np.all(np.abs(freq - 1 / 3) <= 3 * sigma)


def test_ucb_example():
    Q = np.array([[1.0, 2.0]])
    cnt = VisitCounters(np.array([11]), np.array([[10, 1]]))
    scores = -Q[0] + math.log(11) / cnt.state_action_visits[0]
    assert scores == pytest.approx([-0.760, 0.398], abs=1e-3)
    assert select_action_ucb(Q, 0, cnt) == 1


def test_ucb_unvisited_first_and_ties():
    Q = np.zeros((1, 3))
    assert select_action_ucb(Q, 0, VisitCounters(np.array([5]), np.array([[3, 2, 0]]))) == 2
    assert select_action_ucb(Q, 0, VisitCounters(np.array([6]), np.array([[2, 2, 2]]))) == 0


def test_greedy_policy():
    assert greedy_policy(np.array([[5.0, 2.0, 7.0]]))[0] == 1
    assert not greedy_policy(np.zeros((4, 3))).any()


@given(st.lists(finite, min_size=9, max_size=9), st.floats(-100, 100), st.floats(0.1, 10))
def test_greedy_affine_invariance(vals, shift, scale):
    Q = np.array(vals).reshape(3, 3)
    # exact ties can be broken by rounding after scaling, so compare on well-separated rows
    srt = np.sort(Q, axis=1)
    rows = (srt[:, 1] - srt[:, 0]) > 1e-6
    assert np.array_equal(greedy_policy(Q)[rows], greedy_policy(scale * Q + shift)[rows])


@given(st.lists(st.integers(-1000, 1000), min_size=9, max_size=9), st.integers(-1000, 1000))
def test_greedy_shift_invariance_exact(vals, shift):
    # integer-valued tables shift without rounding, so ties survive too
    Q = np.array(vals, dtype=float).reshape(3, 3)
    assert np.array_equal(greedy_policy(Q), greedy_policy(Q + shift))


def test_step_schedules():
    h = StepSchedule.harmonic()
    assert h(0) == 1.0 and h(9) == 0.1
    assert StepSchedule.constant(0.1)(1000) == 0.1
    assert StepSchedule.polynomial(0.75)(15) == pytest.approx(16 ** -0.75)
    with pytest.raises(ValueError):
        StepSchedule("cosine")
    for s in (h, StepSchedule.constant(0.3), StepSchedule.polynomial(0.6, offset=2)):
        assert StepSchedule.from_dict(s.to_dict()) == s


def test_epsilon_decay():
    e = Exploration(epsilon0=1.0, decay_rate=1e-3, floor=0.01)
    assert e.epsilon(0) == 1.0
    assert e.epsilon(1000) == pytest.approx(math.exp(-1))
    assert e.epsilon(10 ** 6) == 0.01
    eps = [e.epsilon(t) for t in range(0, 20_000, 100)]
    assert all(0 <= x <= 1 for x in eps) and eps == sorted(eps, reverse=True)


def _tables(net, init=0.0):
    return {jn.id: QTable.for_junction(net, jn.id, init=init) for jn in net.junctions}


def test_episode_zero_steps():
    net = build_three_junction_example()
    tables = _tables(net)
    res = run_marl_episode(net, tables, 0, LearningConfig(), MdpConfig(),
                           np.random.default_rng(0), np.random.default_rng(1))
    assert len(res.trace) == 0
    assert all(not t.values.any() for t in tables.values())


def test_episode_zero_arrivals_contracts_to_zero():
    net = build_three_junction_example(arrival_rate=0.0)
    tables = _tables(net, init=1.0)
    res = run_marl_episode(net, tables, 300, LearningConfig(), MdpConfig(),
                           np.random.default_rng(0), np.random.default_rng(1))
    assert not res.trace.column("cost").any()
    for j in range(3):
        norms = res.trace.column("q_norm")[res.trace.column("junction") == j]
        assert (np.diff(norms) <= 0).all()
    # every visited pair moved towards zero
    after = res.trace.column("q_after")
    assert (after < 1.0).all()


def test_episode_trace_and_visits():
    net = build_three_junction_example()
    tables = _tables(net)
    res = run_marl_episode(net, tables, 100, LearningConfig(), MdpConfig(),
                           np.random.default_rng(0), np.random.default_rng(1))
    assert len(res.trace) == 300
    for j, cnt in res.counters.items():
        assert cnt.state_visits.sum() == 100
        assert np.array_equal(cnt.state_action_visits.sum(axis=1), cnt.state_visits)
    # active phase rotates: the phase digit of the state is t mod 3
    t, s = res.trace.column("t"), res.trace.column("state")
    assert np.array_equal(s % 3, t % 3)


def test_long_run_covers_reachable_pairs():
    net = build_three_junction_example()
    tables = _tables(net)
    res = run_marl_episode(net, tables, 10_000, LearningConfig(), MdpConfig(),
                           np.random.default_rng(0), np.random.default_rng(1))
    for cnt in res.counters.values():
        # states seen during the exploratory phase have had every action tried
        reachable = cnt.state_visits >= 30
        assert reachable.any()
        assert (cnt.state_action_visits[reachable] >= 1).all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_q_stays_in_invariant_interval(seed):
    net = build_three_junction_example()
    tables = _tables(net)
    cfg = LearningConfig()
    res = run_marl_episode(net, tables, 300, cfg, MdpConfig(), np.random.default_rng(seed),
                           np.random.default_rng(seed + 1))
    bound = cost_bound(net) / (1 - cfg.discount)
    assert all(((t.values >= 0) & (t.values <= bound)).all() for t in tables.values())
    assert res.trace.column("q_norm").max() <= bound


def test_q_learning_on_deterministic_mdp_is_exact_at_fixed_point():
    # two-state cycle, costs (1, 0); with gamma=1 every update is an exact Bellman backup
    mdp = deterministic_mdp(np.array([[1], [0]]), np.array([[1.0], [0.0]]), 0.9)
    res = q_learning_on_mdp(mdp, 2000, np.random.default_rng(0), step=StepSchedule.constant(1.0))
    assert res.Q[:, 0] == pytest.approx([1 / (1 - 0.81), 0.9 / (1 - 0.81)], abs=1e-6)


def test_trace_csv_round_trip():
    tr = TrainingTrace()
    tr.append(0, 1, 5, 2, 1 / 3, 7, 0.5, 0.1, 0.2 + 1e-17)
    tr.append(1, 0, 3, 0, 2.0, 4, 1 / 7, -0.3, math.pi)
    buf = io.StringIO()
    tr.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == ",".join(TRACE_CSV_HEADER)
    back = TrainingTrace.read_csv(io.StringIO(buf.getvalue()))
    assert back.rows == tr.rows


def test_qtable_snapshot_round_trip():
    rng = np.random.default_rng(0)
    t = QTable(rng.normal(size=(81, 3)), agent=2, n_lanes=3, n_phases=3)
    sched = StepSchedule.polynomial(0.7, offset=3.0)
    text = dumps_qtable(t, (10, 20, 30), 0.9, sched)
    back, head = loads_qtable(text)
    assert np.array_equal(back.values, t.values) and back.agent == 2
    assert head["actions"] == [10, 20, 30] and head["discount"] == 0.9
    assert StepSchedule.from_dict(head["step_schedule"]) == sched
    assert dumps_qtable(back, (10, 20, 30), 0.9, sched) == text


def test_q_learning_on_mdp_visits_and_bound():
    mdp = random_mdp(6, 3, 0.8, np.random.default_rng(2))
    res = q_learning_on_mdp(mdp, 5000, np.random.default_rng(3))
    assert res.counters.state_action_visits.sum() == 5000
    assert res.sup_norm <= np.abs(mdp.transition_cost).max() / (1 - 0.8) + 1e-9
