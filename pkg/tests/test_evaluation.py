import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safe_ret.evaluation import (
    EvalReport,
    RunResult,
    avg_network_reward,
    cvar,
    eval_reset_seed,
    evaluate_policy,
    min_cell_reward,
    value_at_risk,
)
from safe_ret.mdp import EpisodeConfig
from safe_ret.netsim import NetworkConfig
from safe_ret.policies import OptimalSearch, RandomPolicy, RuleBased

CFG = NetworkConfig()
SHORT = EpisodeConfig(t_episode=10, n_episode=2)


def test_avg_and_min_examples():
    r = np.ones((2, 21))
    r[0, 0] = 0.0
    per_t, avg = avg_network_reward(r)
    assert per_t.tolist() == pytest.approx([20 / 21, 1.0], abs=1e-15)
    assert avg == pytest.approx((20 / 21 + 1) / 2, abs=1e-15)
    min_t, mn = min_cell_reward(r)
    assert min_t.tolist() == [0.0, 1.0] and mn == 0.5


def test_ragged_and_empty_rejected():
    with pytest.raises(ValueError):
        avg_network_reward([[1.0, 2.0], [1.0]])
    with pytest.raises(ValueError):
        min_cell_reward(np.empty((0, 3)))


def test_cvar_examples():
    v = list(range(1, 21))
    assert value_at_risk(v, 0.05) == 1.0
    assert cvar(v, 0.05) == 1.0
    assert cvar(v, 0.25) == 3.0  # mean of 1..5
    assert cvar(v, 1.0) == statistics.mean(v)
    assert cvar([2.5] * 7, 0.05) == 2.5
    with pytest.raises(ValueError):
        cvar([], 0.05)
    with pytest.raises(ValueError):
        cvar(v, 0.0)


def _cvar_oracle(values, a):
    v = sorted(values)
    n = len(v)
    var = next(x for x in v if sum(y <= x for y in v) / n >= a)
    return float(statistics.mean(Fraction(x) for x in v if x <= var))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=40),
    st.floats(0.01, 1.0),
)
def test_cvar_matches_oracle(values, a):
    assert cvar(values, a) == _cvar_oracle(values, a)
    assert cvar(values, a) <= float(statistics.mean(Fraction(x) for x in values))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=40))
def test_cvar_monotone_in_level(values):
    levels = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0]
    c = [cvar(values, a) for a in levels]
    assert all(x <= y for x, y in zip(c, c[1:]))


def _run(seed, avg, mn=0.0):
    per = np.full(3, avg)
    return RunResult(seed, np.zeros((3, 2)), per, avg, np.full(3, mn), mn)


def test_report_statistics():
    rep = EvalReport("p", [_run(1, 1.0), _run(2, 2.0), _run(3, 3.0)])
    assert rep.avg_reward == 2.0
    assert rep.avg_reward_std == pytest.approx(1.0)  # sample std
    assert rep.cvar == 1.0
    assert EvalReport("p", [_run(1, 4.0)]).avg_reward_std == 0.0
    s = rep.summary()
    assert s["runs"] == 3 and s["avg_reward_mean"] == 2.0


def test_reset_streams_disjoint():
    assert eval_reset_seed(1) != 1 and eval_reset_seed(1) != eval_reset_seed(2)


def test_evaluation_deterministic_and_order_invariant():
    a = evaluate_policy(RandomPolicy(), CFG, [3, 1, 2], SHORT)
    b = evaluate_policy(RandomPolicy(), CFG, [1, 2, 3], SHORT)
    assert [r.seed for r in a.runs] == [1, 2, 3]
    assert a.summary() == b.summary()
    for x, y in zip(a.runs, b.runs):
        assert np.array_equal(x.rewards, y.rewards)


def test_single_seed_std_zero():
    rep = evaluate_policy(RuleBased(), CFG, [5], SHORT)
    assert rep.k == 1 and rep.avg_reward_std == 0.0 and rep.min_cell_std == 0.0
    assert rep.avg_network_per_step.shape == (20,)


def test_callable_policy_factory():
    seen = []

    def factory(seed):
        seen.append(seed)
        return RuleBased()

    evaluate_policy(factory, CFG, [4, 2], SHORT)
    assert sorted(seen) == [2, 4]


def test_no_seeds_rejected():
    with pytest.raises(ValueError):
        evaluate_policy(RandomPolicy(), CFG, [], SHORT)


def test_reference_ordering():
    seeds = [1, 2, 3]
    rnd = evaluate_policy(RandomPolicy(), CFG, seeds)
    rb = evaluate_policy(RuleBased(), CFG, seeds)
    opt = evaluate_policy(OptimalSearch(), CFG, seeds)
    assert rnd.avg_reward < opt.avg_reward
    assert np.all(opt.avg_rewards >= rb.avg_rewards)
