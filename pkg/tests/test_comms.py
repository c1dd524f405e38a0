import numpy as np
import pytest
from scipy import stats

from qcoop import comms
from qcoop.errors import ConfigError


class StubNet:
    """Maps observation bytes to fixed env-head Q arrays."""

    def __init__(self, table):
        self.table = {np.asarray(k, dtype=float).tobytes(): np.asarray(v, dtype=float) for k, v in table}

    def env_q_values(self, obs):
        return self.table[np.asarray(obs, dtype=float).tobytes()]


class TestImprovementMeasures:
    def test_mi_rew_examples(self):
        assert comms.mi_rew(2.0, 0.5) == pytest.approx(1.5)
        assert comms.mi_rew(0.7, 0.7) == 0.0
        assert comms.mi_rew(0.7, 0.7) >= 0  # equality still counts as improving
        assert comms.mi_rew(0.0, 1.0) == pytest.approx(-1.0)

    def test_mi_td_gamma_zero(self):
        net = StubNet([([0.0], [1.0, 2.0]), ([1.0], [9.0, 9.0])])
        got = comms.mi_td(0.4, [0.0], [1.0], net, gamma=0.0, epsilon=0.0)
        assert got == pytest.approx(0.4 - 2.0)

    def test_mi_td_greedy_case(self):
        net = StubNet([([0.0], [1.0, 2.0]), ([1.0], [3.0, 0.0])])
        got = comms.mi_td(1.0, [0.0], [1.0], net, gamma=0.9, epsilon=0.0)
        assert got == pytest.approx(1.0 + 0.9 * 3.0 - 2.0)

    def test_mi_td_full_exploration(self):
        net = StubNet([([0.0], [1.0, 2.0]), ([1.0], [0.0, 0.0])])
        got = comms.mi_td(0.0, [0.0], [1.0], net, gamma=0.5, epsilon=1.0)
        assert got == pytest.approx(-3.0)

    def test_state_value_normalized_variant(self):
        q = np.array([1.0, 3.0])
        assert comms.state_value(q, 0.5) == pytest.approx(0.5 * 3 + 0.5 * 4)
        assert comms.state_value(q, 0.5, normalized=True) == pytest.approx(0.5 * 3 + 0.5 * 2)


class TestMateExchange:
    def test_both_improve_and_accept(self):
        shaped, events = comms.mate_exchange(
            [3.0, 3.0], [0.1, 0.2], lambda j, r: 1.0, [1.0, 1.0], [1.0, 1.0]
        )
        assert shaped.tolist() == [5.0, 5.0]
        assert events.requests_sent == [1, 1]

    def test_one_sided_rejection(self):
        # agent 0 is not improving and rejects; agent 1 improves and requests
        mi = [-0.5, 0.3]

        def recheck(j, r_plus):
            return -1.0 if j == 0 else 1.0

        shaped, _ = comms.mate_exchange([2.0, 2.0], mi, recheck, [1.0, 1.0], [1.0, 1.0])
        # agent 0: receives the request (+1), sends none so gets no response
        assert shaped[0] == pytest.approx(3.0)
        # agent 1: no request credit, negative response (-1)
        assert shaped[1] == pytest.approx(1.0)

    def test_no_improvement_no_tokens(self):
        shaped, events = comms.mate_exchange(
            [1.0, 2.0], [-0.1, -0.2], lambda j, r: 1.0, [1.0, 1.0], [1.0, 1.0]
        )
        assert shaped.tolist() == [1.0, 2.0]
        assert events.requests_sent == [0, 0]

    def test_shaping_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            raw = rng.normal(size=2)
            mi = rng.normal(size=2)
            shaped, _ = comms.mate_exchange(
                raw, mi, lambda j, r: rng.normal(), [1.0, 1.0], [1.0, 1.0]
            )
            assert np.all(np.abs(shaped - raw) <= 2.0 + 1e-12)

    def test_niceness_no_tokens_from_failing_sender(self):
        # sender with MI < 0 must not transfer any positive token
        shaped, events = comms.mate_exchange(
            [0.0, 0.0], [-1.0, 1.0], lambda j, r: 1.0, [1.0, 1.0], [1.0, 1.0]
        )
        assert events.requests_received[1] == []  # agent 0 sent nothing
        assert events.requests_received[0] == [1.0]


class TestMediateUpdate:
    def make_state(self, **kw):
        return comms.MediateState("automate", **kw)

    def test_update_magnitude_and_direction(self):
        s = self.make_state()
        s.samples_previous = [1.0]
        s.samples_current = [0.8]
        s.r_min = 1.0
        token = s.local_token
        comms.mediate_epoch_update(s)
        assert s.local_token == pytest.approx(token + 0.1 * 0.2 / 1.0 * 1.0)

    def test_stationary_value_no_change(self):
        s = self.make_state()
        s.samples_previous = [0.5, 0.7]
        s.samples_current = [0.7, 0.5]
        s.r_min = 1.0
        comms.mediate_epoch_update(s)
        assert s.local_token == pytest.approx(0.1)

    def test_clamped_at_zero(self):
        s = self.make_state(local_token=0.005)
        s.samples_previous = [1.0]
        s.samples_current = [1.2]  # improved -> token decreases by 0.02
        s.r_min = 1.0
        comms.mediate_epoch_update(s)
        assert s.local_token == 0.0

    def test_direction_switch(self):
        s = self.make_state(up_on_drop=False)
        s.samples_previous = [1.0]
        s.samples_current = [0.8]
        s.r_min = 1.0
        comms.mediate_epoch_update(s)
        assert s.local_token == pytest.approx(0.1 - 0.02)

    def test_near_zero_previous_value_guard(self):
        s = self.make_state()
        s.samples_previous = [1e-12]
        s.samples_current = [5.0]
        s.r_min = 1.0
        comms.mediate_epoch_update(s)
        assert s.local_token == pytest.approx(0.1)

    def test_first_epoch_is_noop_but_rotates(self):
        s = self.make_state()
        s.samples_current = [1.0, 2.0]
        comms.mediate_epoch_update(s)
        assert s.local_token == pytest.approx(0.1)
        assert s.samples_previous == [1.0, 2.0]
        assert s.samples_current == []

    def test_tokens_never_negative_under_random_updates(self):
        rng = np.random.default_rng(9)
        s = self.make_state()
        for _ in range(200):
            s.samples_previous = list(rng.normal(size=5))
            s.samples_current = list(rng.normal(size=5))
            s.r_min = float(rng.uniform(0.1, 3))
            comms.mediate_epoch_update(s)
            assert s.local_token >= 0.0


class TestMediateConsensus:
    def test_mean_of_two_tokens(self):
        rng = np.random.default_rng(1)
        consensus, shares = comms.mediate_consensus([0.6, 0.8], rng)
        assert consensus == pytest.approx(0.7, abs=1e-12)
        assert shares[0].sum() == pytest.approx(0.6, abs=1e-12)
        assert shares[1].sum() == pytest.approx(0.8, abs=1e-12)

    def test_fixed_point_and_zero(self):
        rng = np.random.default_rng(2)
        assert comms.mediate_consensus([0.4, 0.4], rng)[0] == pytest.approx(0.4, abs=1e-12)
        assert comms.mediate_consensus([0.0, 0.0], rng)[0] == 0.0

    def test_all_agents_identical_value(self):
        # every agent computes the same partial-sum total, hence bit-identical values
        rng = np.random.default_rng(3)
        consensus, shares = comms.mediate_consensus([0.31, 0.77, 0.12], rng)
        partials = shares.sum(axis=0)
        per_agent = [float(partials.sum() / 3) for _ in range(3)]
        assert len(set(per_agent)) == 1
        assert consensus == pytest.approx(np.mean([0.31, 0.77, 0.12]), abs=1e-12)

    def test_shares_marginally_uniform(self):
        rng = np.random.default_rng(4)
        token = 0.8
        first_shares = [comms.mediate_consensus([token, 0.5], rng)[1][0, 0] for _ in range(2000)]
        ks = stats.kstest(np.array(first_shares) / token, "uniform")
        assert ks.pvalue > 0.01


class TestMediateProtocol:
    def make(self, variant, **kw):
        return comms.MediateProtocol(variant, **kw)

    def run_epoch_boundary(self, proto, tokens):
        for s, t in zip(proto.states, tokens):
            s.local_token = t
            s.samples_current = [1.0]
            s.samples_previous = []
        proto.end_episode(4, np.random.default_rng(0))  # episode 5 boundary

    def test_automate_uses_local_tokens(self):
        proto = self.make("automate")
        proto.states[0].local_token = 0.6
        proto.states[1].local_token = 0.8
        assert proto._request_tokens(2) == [0.6, 0.8]

    def test_mediate_s_synchronizes_before_update(self):
        proto = self.make("mediate_s")
        for s in proto.states:
            s.consensus_token = 0.7
            s.local_token = 0.123
            s.samples_current = [1.0]
        proto.end_episode(4, np.random.default_rng(0))
        # locals were set to the consensus (0.7) before the (no-op) update,
        # then the new consensus is their mean
        assert all(s.local_token == pytest.approx(0.7) for s in proto.states)
        assert all(s.consensus_token == pytest.approx(0.7, abs=1e-12) for s in proto.states)

    def test_mediate_i_keeps_locals_independent(self):
        proto = self.make("mediate_i")
        self.run_epoch_boundary(proto, [0.6, 0.8])
        assert [s.local_token for s in proto.states] == pytest.approx([0.6, 0.8])
        assert all(s.consensus_token == pytest.approx(0.7, abs=1e-12) for s in proto.states)
        assert proto._request_tokens(2) == pytest.approx([0.7, 0.7])

    def test_update_only_on_epoch_boundary(self):
        proto = self.make("mediate_i")
        proto.states[0].samples_current = [1.0]
        proto.end_episode(2, np.random.default_rng(0))  # episode 3: not a boundary
        assert proto.states[0].samples_current == [1.0]


class TestGifting:
    def make_states(self, variant, budget=10.0):
        return [comms.GiftingState(variant, budget_limit=budget, budget=budget) for _ in range(2)]

    def test_zerosum_transfer(self):
        shaped, eff = comms.gifting_apply([1, 0], self.make_states("zerosum"), [1.0, 1.0])
        assert shaped.tolist() == [0.0, 2.0]
        assert eff == [True, False]

    def test_zerosum_conserves_collective_reward(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            raw = rng.normal(size=2)
            decisions = rng.integers(0, 2, size=2)
            shaped, _ = comms.gifting_apply(decisions, self.make_states("zerosum"), raw)
            assert shaped.sum() == pytest.approx(raw.sum(), abs=1e-12)

    def test_budget_decrements(self):
        states = self.make_states("budget")
        shaped, _ = comms.gifting_apply([1, 0], states, [1.0, 1.0])
        assert shaped.tolist() == [1.0, 2.0]
        assert states[0].budget == pytest.approx(9.0)

    def test_exhausted_budget_is_inert(self):
        states = self.make_states("budget")
        states[0].budget = 0.0
        shaped, eff = comms.gifting_apply([1, 0], states, [1.0, 1.0])
        assert shaped.tolist() == [1.0, 1.0]
        assert states[0].budget == 0.0
        assert eff == [False, False]

    def test_total_gifted_bounded_by_budget(self):
        proto = comms.GiftingProtocol("budget", budget=10.0)
        proto.begin_episode(None)
        total = 0.0
        for step in range(50):
            ctx = comms.StepContext(
                step, np.array([1.0, 1.0]), [], [], [None, None], 0.0, gift_decisions=[1, 1]
            )
            shaped = proto.shape_step(ctx)
            total += shaped[1] - 1.0
        assert total <= 10.0 + 1e-12
        assert proto.states[0].gifts_sent_episode == 10


class TestRial:
    def test_one_step_delay_delivery(self):
        state = comms.RialState()
        state.reset(np.random.default_rng(0))
        frags = comms.rial_exchange(state, [np.array([1.0, 0.0]), np.array([0.0, 0.0])])
        # opponent's view carries agent 0's bits in the peer slots
        assert frags[1][2:].tolist() == [1.0, 0.0]
        assert frags[0][:2].tolist() == [1.0, 0.0]

    def test_reset_randomizes_bits(self):
        state = comms.RialState()
        seen = set()
        for seed in range(40):
            state.reset(np.random.default_rng(seed))
            seen.add(tuple(np.concatenate(state.last_sent).tolist()))
        assert len(seen) > 4

    def test_message_space_is_four_patterns(self):
        patterns = set()
        state = comms.RialState()
        state.reset(np.random.default_rng(0))
        for b0 in (0.0, 1.0):
            for b1 in (0.0, 1.0):
                comms.rial_exchange(state, [np.array([b0, b1]), np.array([0.0, 0.0])])
                patterns.add(tuple(state.last_sent[0].tolist()))
        assert patterns == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_rejects_malformed_messages(self):
        state = comms.RialState()
        state.reset(np.random.default_rng(0))
        with pytest.raises(ConfigError):
            comms.rial_exchange(state, [np.array([2.0, 0.0]), np.array([0.0, 0.0])])


class TestProtocolDrivers:
    def test_no_protocol_identity(self):
        proto = comms.NoProtocol()
        raw = np.array([1.3, -0.4])
        ctx = comms.StepContext(0, raw, [], [], [], 0.1)
        assert np.array_equal(proto.shape_step(ctx), raw)

    def test_mate_rew_running_mean_inclusive(self):
        proto = comms.MateProtocol("rew")
        proto.begin_episode(None)
        # first step: mean equals the reward, MI = 0 (>= 0) so both request
        ctx = comms.StepContext(0, np.array([1.0, 2.0]), [], [], [None, None], 0.0)
        shaped = proto.shape_step(ctx)
        assert shaped.tolist() == [3.0, 4.0]  # +1 request credit, +1 acceptance

    def test_mate_td_shaping_against_hand_trace(self):
        nets = [
            StubNet([([0.0, 0.0], [1.0, 2.0]), ([1.0, 1.0], [3.0, 0.0])]),
            StubNet([([0.0, 0.0], [0.0, 0.5]), ([1.0, 1.0], [0.0, 0.0])]),
        ]
        proto = comms.MateProtocol("td", gamma=0.9)
        proto.begin_episode(None)
        obs = [np.array([0.0, 0.0])] * 2
        nxt = [np.array([1.0, 1.0])] * 2
        ctx = comms.StepContext(0, np.array([1.0, 0.0]), obs, nxt, nets, 0.0)
        shaped = proto.shape_step(ctx)
        # agent 0: MI = 1 + 0.9*3 - 2 = 1.7 >= 0 -> requests
        # agent 1: MI = 0 + 0 - 0.5 = -0.5 < 0 -> no request
        # agent 1 rechecks 0+1 + 0 - 0.5 = 0.5 >= 0 -> +1 to agent 0
        # shaped: agent 0 = 1 + 0 (no request received) + 1 = 2
        #         agent 1 = 0 + 1 (request received) + 0 (sent none) = 1
        assert shaped.tolist() == [2.0, 1.0]

    def test_trace_lines_written(self, tmp_path):
        path = tmp_path / "trace.log"
        with open(path, "w") as fh:
            proto = comms.MateProtocol("rew", trace=fh)
            proto.begin_episode(None)
            ctx = comms.StepContext(0, np.array([1.0, 2.0]), [], [], [None, None], 0.0)
            proto.shape_step(ctx)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 2
        assert "mi=" in lines[0] and "shaped=" in lines[0]
