import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_context
from csiplan.fast_policy import (InstanceTooLarge, SchedulePolicy, ScheduleEvaluator,
                                 always_train_policy, brute_force_policy, delay_from_actions,
                                 delay_transition, dp_optimal_policy, feasible_actions,
                                 ground_set, is_feasible, local_search_policy,
                                 objective_set_value, per_slot_greedy_policy, reward_low)
from csiplan.rate import RateContext, se_lower_bound
from oracles import iterate_delays


def approximation_factor(H, eps):
    return 1.0 / (H + 1 + 1.0 / (H - 1) + eps)


class TestDelays:
    def test_transition(self):
        np.testing.assert_array_equal(delay_transition([0, 2, 5], [1, 0, 0]), [0, 3, 6])

    def test_transition_shapes(self):
        with pytest.raises(ValueError):
            delay_transition([0, 1], [1])

    def test_closed_form_examples(self):
        history = [[0, 1], [0, 0], [1, 0]]
        np.testing.assert_array_equal(delay_from_actions(history, 0), [0, 0])
        np.testing.assert_array_equal(delay_from_actions(history, 2), [2, 1])
        np.testing.assert_array_equal(delay_from_actions(history, 3), [0, 2])

    @given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
    def test_closed_form_matches_iteration(self, N_G, length, seed):
        history = np.random.default_rng(seed).integers(0, 2, (length, N_G))
        for j in range(length + 1):
            np.testing.assert_array_equal(delay_from_actions(history, j),
                                          iterate_delays(history, j))

    def test_rejects_uncovered_stage(self):
        with pytest.raises(ValueError):
            delay_from_actions([[0, 1]], 2)


class TestReward:
    def test_matches_bound(self):
        ctx = random_context(0, 4)
        d, a = np.array([0, 2, 0, 1]), np.array([1, 0, 1, 0])
        assert reward_low(d, a, ctx) == se_lower_bound(d, 2, ctx)

    def test_budget(self):
        ctx = random_context(0, 3)
        with pytest.raises(ValueError):
            reward_low([0, 0, 0], [1, 1, 1], ctx, budget=2)

    def test_evaluator_agrees_with_bound(self):
        ctx = random_context(1, 3)
        actions = np.array([[1, 1, 1], [0, 1, 0], [0, 0, 0], [1, 0, 1]])
        d = np.zeros(3, dtype=int)
        expected = 0.0
        for a in actions:
            d = delay_transition(d, a)
            expected += reward_low(d, a, ctx)
        assert ScheduleEvaluator(ctx, 4).value(actions) == pytest.approx(expected, rel=1e-13)

    def test_batch_matches_scalar(self):
        ctx = random_context(2, 3)
        ev = ScheduleEvaluator(ctx, 4)
        tails = np.random.default_rng(0).integers(0, 2, (20, 3, 3))
        full = [np.vstack([np.ones(3, int), t]) for t in tails]
        np.testing.assert_allclose(ev.batch_values(tails), [ev.value(a) for a in full],
                                   rtol=1e-13)


class TestExactOptimizers:
    def test_feasible_actions(self):
        acts = feasible_actions(3, 1)
        assert acts.tolist() == [[0, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0]]

    def test_brute_force_enumerates_everything(self):
        ctx = random_context(0, 2)
        policy = brute_force_policy(ctx, 3, 1)
        assert policy.stats["evaluated"] == 9

    def test_single_stage(self):
        ctx = random_context(0, 3)
        for solver in (brute_force_policy, dp_optimal_policy):
            policy = solver(ctx, 1, 1)
            assert policy.actions.tolist() == [[1, 1, 1]]

    def test_zero_budget_never_retrains(self):
        ctx = random_context(3, 3)
        for solver in (brute_force_policy, dp_optimal_policy, local_search_policy,
                       per_slot_greedy_policy):
            assert solver(ctx, 4, 0).actions[1:].sum() == 0

    def test_static_channel_skips_training(self):
        ctx = random_context(4, 3)
        static = RateContext(ctx.constants, ctx.beta, np.ones_like(ctx.rho))
        policy = dp_optimal_policy(static, 4, 2)
        assert policy.actions[1:].sum() == 0

    def test_fast_fading_retrains_to_budget(self):
        ctx = random_context(5, 3, rho_low=0.0)
        ctx = RateContext(ctx.constants, ctx.beta, np.zeros_like(ctx.rho))
        policy = dp_optimal_policy(ctx, 3, 3)
        assert policy.actions.sum() == 9

    @pytest.mark.parametrize("seed", range(12))
    def test_dp_equals_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        N_G, H = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        tau = int(rng.integers(0, min(2, N_G) + 1))
        ctx = random_context(seed, N_G, equal_rho=bool(seed % 2))
        dp, bf = dp_optimal_policy(ctx, H, tau), brute_force_policy(ctx, H, tau)
        assert dp.value == bf.value
        assert is_feasible(dp.actions, tau)

    def test_budget_monotone(self):
        ctx = random_context(6, 4)
        values = [dp_optimal_policy(ctx, 4, tau).value for tau in range(5)]
        assert values == sorted(values)

    def test_guards(self):
        with pytest.raises(InstanceTooLarge):
            brute_force_policy(random_context(0, 7), 3, 1)
        with pytest.raises(ValueError):
            dp_optimal_policy(random_context(0, 3), 3, 4)


class TestSetFunction:
    def test_empty_set_trains_only_at_start(self):
        ctx = random_context(0, 3)
        ev = ScheduleEvaluator(ctx, 3)
        assert objective_set_value(set(), ctx, 3) == ev.value([[1, 1, 1], [0, 0, 0], [0, 0, 0]])

    def test_rejects_outside_ground(self):
        ev = ScheduleEvaluator(random_context(0, 2), 3)
        with pytest.raises(ValueError):
            ev.set_to_actions({(0, 1)})

    def test_ground_set(self):
        assert ground_set(2, 3) == [(1, 0), (1, 1), (2, 0), (2, 1)]

    @given(st.integers(0, 500), st.integers(0, 2 ** 32 - 1))
    def test_diminishing_returns(self, ctx_seed, seed):
        ctx = random_context(ctx_seed, 3)
        ev = ScheduleEvaluator(ctx, 4)
        ground = ground_set(3, 4)
        rng = np.random.default_rng(seed)
        big = {v for v in ground if rng.random() < 0.5}
        small = {v for v in big if rng.random() < 0.5}
        rest = [v for v in ground if v not in big]
        if not rest:
            return
        e = rest[rng.integers(len(rest))]
        gain_small = ev.set_value(small | {e}) - ev.set_value(small)
        gain_big = ev.set_value(big | {e}) - ev.set_value(big)
        assert gain_small >= gain_big - 1e-9


class TestLocalSearch:
    @pytest.mark.parametrize("seed", range(10))
    def test_guarantee(self, seed):
        rng = np.random.default_rng(50 + seed)
        N_G, H = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        tau = int(rng.integers(1, min(2, N_G) + 1))
        ctx = random_context(seed, N_G)
        ls = local_search_policy(ctx, H, tau)
        opt = dp_optimal_policy(ctx, H, tau)
        assert ls.value >= approximation_factor(H, 0.5) * opt.value
        assert ls.value <= opt.value + 1e-12 * opt.value
        assert is_feasible(ls.actions, tau)

    @pytest.mark.parametrize("strategy", ["first", "best"])
    def test_move_count_bound(self, strategy):
        ctx = random_context(7, 4)
        H, eps = 4, 0.5
        ls = local_search_policy(ctx, H, 2, eps=eps, strategy=strategy)
        opt = dp_optimal_policy(ctx, H, 2).value
        floor = ls.stats["start_value"]
        per_round = math.log(opt / floor) / math.log1p(eps / ctx.N_G ** 4)
        # each round starts from a singleton worth at least the empty set
        assert ls.stats["moves"] <= ls.stats["rounds"] * (per_round + 1)
        assert ls.stats["rounds"] <= H

    def test_rejects_bad_arguments(self):
        ctx = random_context(0, 2)
        with pytest.raises(ValueError):
            local_search_policy(ctx, 3, 1, eps=0)
        with pytest.raises(ValueError):
            local_search_policy(ctx, 3, 1, strategy="random")

    def test_deterministic(self):
        ctx = random_context(8, 4)
        a, b = local_search_policy(ctx, 4, 2), local_search_policy(ctx, 4, 2)
        np.testing.assert_array_equal(a.actions, b.actions)


class TestBaselines:
    @pytest.mark.parametrize("seed", range(5))
    def test_greedy_is_stagewise_optimal(self, seed):
        ctx = random_context(seed, 4)
        H, tau = 4, 2
        policy = per_slot_greedy_policy(ctx, H, tau)
        ev = ScheduleEvaluator(ctx, H)
        groups = np.arange(4)
        d = np.zeros(4, dtype=int)
        for a in policy.actions[1:]:
            stage = [(1 - c.sum() / ctx.T_s) * ev.table[groups, delay_transition(d, c)].sum()
                     for c in feasible_actions(4, tau)]
            chosen = (1 - a.sum() / ctx.T_s) * ev.table[groups, delay_transition(d, a)].sum()
            assert chosen == pytest.approx(max(stage), rel=1e-13)
            d = delay_transition(d, a)

    def test_dp_dominates_baselines(self):
        for seed in range(5):
            ctx = random_context(seed, 4)
            opt = dp_optimal_policy(ctx, 4, 2).value
            assert per_slot_greedy_policy(ctx, 4, 2).value <= opt
            assert local_search_policy(ctx, 4, 2).value <= opt * (1 + 1e-12)

    def test_always_train(self):
        policy = always_train_policy(random_context(0, 3), 3, 1)
        assert policy.actions.sum() == 9
        assert not is_feasible(policy.actions, 1)

    def test_feasibility(self):
        assert is_feasible([[1, 1], [0, 1]], 1)
        assert not is_feasible([[0, 1], [0, 1]], 1)
        assert not is_feasible([[1, 1], [1, 1]], 1)


class TestSerialization:
    def test_json_round_trip(self):
        policy = dp_optimal_policy(random_context(0, 3), 3, 1)
        back = SchedulePolicy.from_json(policy.to_json())
        np.testing.assert_array_equal(back.actions, policy.actions)
        assert back.value == policy.value and back.tau == policy.tau

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError):
            SchedulePolicy.from_json('{"horizon": 2, "tau": 1, "actions": [[1]], "value": 0}')
