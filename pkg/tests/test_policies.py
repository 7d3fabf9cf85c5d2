"""Baseline policies: per-channel chains, myopic and pattern-tracking
rules, and the Whittle index machinery."""

import numpy as np
import pytest

from dynchan import (
    ChannelEnv,
    ConfigError,
    FixedPatternModel,
    GenieFixedPatternPolicy,
    GilbertElliotChain,
    ImpossibleObservation,
    MyopicPolicy,
    RandomPolicy,
    WhittleIndexPolicy,
    build_joint_from_marginals,
    even_partition,
    mle_estimate_chain,
    myopic_action,
    spawn_rng,
    whittle_index,
)
import dynchan.policies as policies_mod
from dynchan.policies import (
    WhittleIndexCache,
    per_channel_belief_step,
    whittle_policy_action,
)


class TestGilbertElliotChain:
    def test_factories_agree(self):
        c1 = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)
        c2 = GilbertElliotChain.from_matrix([[0.7, 0.3], [0.2, 0.8]])
        assert c1.key() == c2.key()
        np.testing.assert_allclose(c1.matrix(), [[0.7, 0.3], [0.2, 0.8]])

    def test_validation(self):
        with pytest.raises(ConfigError):
            GilbertElliotChain(0.5, 0.6, 0.2, 0.8)  # row 0 sums to 1.1
        with pytest.raises(ConfigError):
            GilbertElliotChain.from_good_transitions(p11=1.2, p01=0.3)
        with pytest.raises(ConfigError):
            GilbertElliotChain.from_matrix(np.eye(3))

    def test_stationary_good(self):
        c = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)
        assert c.stationary_good == pytest.approx(0.6)
        # identity chain has no unique stationary point; the tie goes to 1/2
        assert GilbertElliotChain(1.0, 0.0, 0.0, 1.0).stationary_good == 0.5

    def test_positively_correlated(self):
        assert GilbertElliotChain.from_good_transitions(0.8, 0.3).positively_correlated
        assert GilbertElliotChain.from_good_transitions(0.5, 0.5).positively_correlated
        assert not GilbertElliotChain.from_good_transitions(0.2, 0.7).positively_correlated

    def test_key_identifies_equal_chains(self):
        a = GilbertElliotChain.from_good_transitions(0.8, 0.3)
        b = GilbertElliotChain.from_matrix(a.matrix())
        assert a.key() == b.key()
        assert {a.key(): 1}[b.key()] == 1


class TestPerChannelBeliefStep:
    CHAIN = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)

    def test_unsensed_propagation(self):
        assert per_channel_belief_step(0.5, self.CHAIN) == pytest.approx(0.55)

    def test_sensed_collapses_first(self):
        assert per_channel_belief_step(0.1, self.CHAIN, sensed=1) == pytest.approx(0.8)
        assert per_channel_belief_step(0.9, self.CHAIN, sensed=0) == pytest.approx(0.3)

    def test_stationary_is_a_fixed_point(self):
        w = self.CHAIN.stationary_good
        assert per_channel_belief_step(w, self.CHAIN) == pytest.approx(w)


class TestMleEstimateChain:
    def test_hand_counts(self):
        chain = mle_estimate_chain([0, 0, 1, 1, 0, 1])
        np.testing.assert_allclose(chain.matrix(), [[1 / 3, 2 / 3], [1 / 2, 1 / 2]])

    def test_unvisited_source_gets_uninformed_row(self):
        chain = mle_estimate_chain([1, 1, 1, 1])
        np.testing.assert_allclose(chain.matrix(), [[0.5, 0.5], [0.0, 1.0]])

    def test_validation(self):
        with pytest.raises(ConfigError):
            mle_estimate_chain([1])
        with pytest.raises(ConfigError):
            mle_estimate_chain([[0, 1], [1, 0]])
        with pytest.raises(ConfigError):
            mle_estimate_chain([0, 2, 1])


class TestRandomPolicy:
    def test_deterministic_under_seeded_rng(self):
        a = RandomPolicy(8)
        b = RandomPolicy(8)
        a.reset(spawn_rng(7, 1))
        b.reset(spawn_rng(7, 1))
        seq = [a.act() for _ in range(50)]
        assert seq == [b.act() for _ in range(50)]
        assert all(0 <= x < 8 for x in seq)


class TestMyopicPolicy:
    def test_myopic_action_helper(self):
        assert myopic_action([0.1, 0.2, 0.3, 0.4]) == 1  # marginals (0.6, 0.7)
        assert myopic_action([0.25, 0.25, 0.25, 0.25]) == 0  # tie -> lowest

    def test_tracks_a_deterministic_cycle(self):
        model = FixedPatternModel(even_partition(2, 1), 1.0)
        pol = MyopicPolicy(model)
        pol.reset()
        assert pol.act() == 0  # stationary tie
        pol.observe(0, 1)
        assert pol.act() == 1
        pol.observe(1, 1)
        assert pol.act() == 0
        pol.observe(0, 1)
        assert pol.act() == 1

    def test_bad_observation_prunes_states(self):
        # bad on 0 reveals the pattern sat on channel 1, which then
        # advances to 0 with probability 0.7
        pol = MyopicPolicy(FixedPatternModel(even_partition(2, 1), 0.7))
        pol.reset()
        pol.observe(0, 0)
        assert pol.act() == 0

    def test_impossible_observation(self):
        pol = MyopicPolicy(FixedPatternModel(even_partition(2, 1), 1.0))
        pol.reset()
        pol.observe(0, 1)
        with pytest.raises(ImpossibleObservation):
            pol.observe(0, 1)  # same channel cannot be good twice in a row

    def test_initial_belief_shape_check(self):
        with pytest.raises(ConfigError):
            MyopicPolicy(FixedPatternModel(even_partition(2, 1), 0.7), initial_belief=[0.5, 0.5])


class TestGenieFixedPatternPolicy:
    def test_advance_on_good_regime(self):
        pol = GenieFixedPatternPolicy(even_partition(3, 1), 0.9)
        pol.reset()
        assert pol.act() == 0
        pol.observe(0, 1)
        assert pol.act() == 1
        pol.observe(1, 0)
        assert pol.act() == 1  # bad: the pattern held, keep sensing it
        pol.observe(1, 1)
        assert pol.act() == 2
        pol.observe(2, 1)
        assert pol.act() == 0  # wraps

    def test_advance_on_bad_regime(self):
        pol = GenieFixedPatternPolicy(even_partition(3, 1), 0.2)
        pol.reset()
        assert pol.act() == 0
        pol.observe(0, 1)
        assert pol.act() == 0  # good means the pattern likely held
        pol.observe(0, 0)
        assert pol.act() == 1

    def test_accepts_a_model(self):
        model = FixedPatternModel(((4, 5), (2, 3), (0, 1)), 0.8)
        pol = GenieFixedPatternPolicy(model)
        pol.reset()
        assert pol.act() == 4
        pol.observe(4, 1)
        assert pol.act() == 2

    def test_reset_clears_history(self):
        pol = GenieFixedPatternPolicy(even_partition(2, 1), 0.9)
        pol.reset()
        pol.observe(0, 1)
        pol.reset()
        assert pol.act() == 0


class TestWhittleIndex:
    def test_iid_chain_index_is_immediate_reward(self):
        # when the future does not depend on the action the subsidy that
        # balances sensing is the expected slot reward 2w - 1
        chain = GilbertElliotChain.from_good_transitions(p11=0.3, p01=0.3)
        for omega in (0.25, 0.5, 0.9):
            assert whittle_index(chain, omega, 0.9) == pytest.approx(2 * omega - 1, abs=2e-4)

    def test_endpoint_clamps_are_exact(self):
        chain = GilbertElliotChain.from_good_transitions(p11=0.3, p01=0.3)
        assert whittle_index(chain, 0.0, 0.9) == -1.0
        assert whittle_index(chain, 1.0, 0.9) == 1.0
        absorbing = GilbertElliotChain.from_good_transitions(p11=1.0, p01=0.2)
        assert whittle_index(absorbing, 1.0, 0.9) == 1.0

    def test_monotone_in_belief_for_positive_correlation(self):
        chain = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)
        idx = [whittle_index(chain, w, 0.9) for w in np.linspace(0.0, 1.0, 11)]
        for lo, hi in zip(idx, idx[1:]):
            assert hi >= lo - 2e-4

    def test_bounded(self):
        rng = spawn_rng(13, 0)
        for _ in range(5):
            chain = GilbertElliotChain.from_good_transitions(
                p11=rng.uniform(0.05, 0.95), p01=rng.uniform(0.05, 0.95)
            )
            v = whittle_index(chain, rng.uniform(0, 1), 0.9)
            assert -1.0 <= v <= 1.0

    def test_validation(self):
        chain = GilbertElliotChain.from_good_transitions(0.8, 0.3)
        with pytest.raises(ConfigError):
            whittle_index(chain, 1.2, 0.9)
        with pytest.raises(ConfigError):
            whittle_index(chain, 0.5, 1.0)


class TestWhittleIndexCache:
    def test_memoizes(self, monkeypatch):
        calls = []
        real = policies_mod.whittle_index

        def counting(chain, omega, gamma, **kw):
            calls.append(omega)
            return real(chain, omega, gamma, **kw)

        monkeypatch.setattr(policies_mod, "whittle_index", counting)
        cache = WhittleIndexCache(GilbertElliotChain.from_good_transitions(0.8, 0.3), 0.9)
        first = cache.get(0.6)
        assert cache.get(0.6) == first
        assert len(calls) == 1

    def test_clamps_between_cached_neighbours(self, monkeypatch):
        fake = {0.2: 0.1, 0.8: 0.2, 0.5: 0.45}
        monkeypatch.setattr(policies_mod, "whittle_index", lambda c, w, g, **kw: fake[w])
        cache = WhittleIndexCache(GilbertElliotChain.from_good_transitions(0.8, 0.3), 0.9)
        cache.get(0.2)
        cache.get(0.8)
        assert cache.get(0.5) == 0.2  # pulled down to the right neighbour

    def test_no_clamp_for_negatively_correlated(self, monkeypatch):
        fake = {0.2: 0.1, 0.8: 0.2, 0.5: 0.45}
        monkeypatch.setattr(policies_mod, "whittle_index", lambda c, w, g, **kw: fake[w])
        cache = WhittleIndexCache(GilbertElliotChain.from_good_transitions(0.2, 0.7), 0.9)
        cache.get(0.2)
        cache.get(0.8)
        assert cache.get(0.5) == 0.45


class TestWhittlePolicy:
    CHAIN = GilbertElliotChain.from_good_transitions(p11=0.8, p01=0.3)

    def test_prefers_higher_index(self):
        a = whittle_policy_action([0.2, 0.9], [self.CHAIN, self.CHAIN], 0.9)
        assert a == 1

    def test_exact_tie_takes_lowest_channel(self):
        a = whittle_policy_action([0.6, 0.6, 0.6], [self.CHAIN] * 3, 0.9)
        assert a == 0

    def test_reset_starts_from_stationary(self):
        pol = WhittleIndexPolicy([self.CHAIN, self.CHAIN], 0.9)
        pol.reset()
        assert pol.beliefs == pytest.approx([0.6, 0.6])

    def test_observe_updates_only_the_sensed_channel_with_collapse(self):
        pol = WhittleIndexPolicy([self.CHAIN, self.CHAIN], 0.9)
        pol.reset()
        pol.observe(0, 1)
        assert pol.beliefs[0] == pytest.approx(0.8)
        assert pol.beliefs[1] == pytest.approx(0.6)

    def test_matches_myopic_for_identical_chains(self):
        # same-chain special case where the index ordering reduces to the
        # belief ordering, so both rules pick the same channel every slot
        joint = build_joint_from_marginals([self.CHAIN.matrix()] * 2)
        env = ChannelEnv(joint, spawn_rng(5, 0))
        myopic = MyopicPolicy(joint)
        whittle = WhittleIndexPolicy([self.CHAIN, self.CHAIN], 0.9)
        myopic.reset()
        whittle.reset()
        for _ in range(200):
            a = myopic.act()
            assert whittle.act() == a
            obs, _ = env.step(a)
            myopic.observe(a, obs)
            whittle.observe(a, obs)
