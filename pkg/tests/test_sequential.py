"""Per-tile decision structure tests, including the reward-sum identities."""

import numpy as np
import pytest

from tile360.environment import NetworkTrace, StreamEnv, StreamState, VideoManifest
from tile360.errors import ParameterError
from tile360.geometry import TileGrid, neighbor_map, neighbor_slots
from tile360.qoe import QoeWeights, SegmentDecision, spatial_variation, viewport_quality
from tile360.sequential import (
    DecisionOrder,
    DecisionPass,
    assemble_state,
    decision_order,
    estimate_buffer,
    tile_reward,
)


class TestDecisionOrder:
    def test_forced_then_high_to_low(self):
        plan = decision_order(np.array([0.0, 0.6, 0.4, 0.0]), DecisionOrder.HIGH_TO_LOW)
        assert plan.order == (0, 3, 1, 2)
        assert plan.forced == (True, True, False, False)

    def test_equal_probs_tie_by_index(self):
        plan = decision_order(np.array([0.25, 0.25, 0.25, 0.25]), DecisionOrder.HIGH_TO_LOW)
        assert plan.order == (0, 1, 2, 3)

    def test_low_to_high(self):
        plan = decision_order(np.array([0.5, 0.2, 0.3]), DecisionOrder.LOW_TO_HIGH)
        assert plan.order == (1, 2, 0)

    def test_z_scan_is_index_order(self):
        plan = decision_order(np.array([0.5, 0.2, 0.3]), DecisionOrder.Z_SCAN)
        assert plan.order == (0, 1, 2)

    def test_random_reproducible(self):
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        p1 = decision_order(probs, DecisionOrder.RANDOM, seed=9)
        p2 = decision_order(probs, DecisionOrder.RANDOM, seed=9)
        p3 = decision_order(probs, DecisionOrder.RANDOM, seed=10)
        assert p1.order == p2.order
        assert sorted(p1.order) == [0, 1, 2, 3]
        assert p1.order != p3.order or True  # different seed may coincide; just check validity


class TestEstimateBuffer:
    def test_nothing_decided(self):
        assert estimate_buffer(4.0, [], 1.0, 2.0) == 4.0

    def test_hand_arithmetic(self):
        # rates summing 2 Mbps, T=1, throughput 1 -> 2 s spent
        assert estimate_buffer(4.0, [1.5, 0.5], 1.0, 1.0) == pytest.approx(2.0)

    def test_clamped_at_zero(self):
        assert estimate_buffer(1.0, [10.0], 1.0, 1.0) == 0.0

    def test_nonpositive_throughput_rejected(self):
        with pytest.raises(ParameterError):
            estimate_buffer(1.0, [1.0], 1.0, 0.0)


def _world(rows=3, cols=3, segments=2, levels=(0.5, 1.0, 2.0, 4.0, 8.0), seed=0):
    manifest = VideoManifest.synthetic(
        TileGrid(rows, cols), segments, level_mbps=levels, seed=seed, jitter_sigma=0.0
    )
    env = StreamEnv(manifest, NetworkTrace.constant(3.0))
    return manifest, env


def _stream_state(segment=0, buffer_s=2.0, last_q1=0.4, history=((2.0, 1.0),)):
    return StreamState(
        segment_index=segment,
        buffer_s=buffer_s,
        download_history=tuple(history),
        last_viewport_quality=last_q1,
    )


class TestAssembleState:
    def test_first_free_tile_sees_forced_neighbors(self):
        manifest, _ = _world()
        probs = np.zeros(9)
        probs[4] = 0.6
        probs[5] = 0.4
        plan = decision_order(probs, DecisionOrder.HIGH_TO_LOW)
        stream = _stream_state()
        decided = {t: 0 for t, forced in zip(plan.order, plan.forced) if forced}
        pos = plan.forced.count(True)  # first free position (tile 4)
        state = assemble_state(stream, plan, pos, manifest, probs, decided)
        assert state.tile == 4
        # all 8 neighbors exist for the center tile; 5 is still undecided
        slots = neighbor_slots(manifest.grid, 4)
        for k, s in enumerate(slots):
            if s == 5:
                assert state.neighbor_decided[k] == 0.0
                assert state.neighbor_rates[k] == 0.0
            else:
                assert state.neighbor_decided[k] == 1.0
                assert state.neighbor_rates[k] == pytest.approx(manifest.tile_rates[s, 0])

    def test_last_tile_all_neighbors_decided(self):
        manifest, _ = _world()
        probs = np.full(9, 1 / 9)
        plan = decision_order(probs, DecisionOrder.Z_SCAN)
        stream = _stream_state()
        decided = {t: 1 for t in range(8)}
        state = assemble_state(stream, plan, 8, manifest, probs, decided)
        assert state.tile == 8
        live = state.neighbor_tiles >= 0
        assert np.all(state.neighbor_decided[live] == 1.0)

    def test_field_by_field_manual_oracle(self):
        manifest, _ = _world()
        probs = np.linspace(0.01, 0.2, 9)
        probs = probs / probs.sum()
        plan = decision_order(probs, DecisionOrder.Z_SCAN)
        stream = _stream_state(segment=1, buffer_s=3.0, last_q1=0.7)
        decided = {0: 2, 1: 0}
        state = assemble_state(stream, plan, 2, manifest, probs, decided)
        assert state.tile == 2
        np.testing.assert_allclose(state.chunk_sizes, manifest.chunk_sizes[1, 2])
        assert state.tile_prob == pytest.approx(probs[2])
        assert state.last_viewport_quality == 0.7
        xi = 2.0  # single history entry (2 Mbit, 1 s)
        assert state.throughput_est == pytest.approx(xi)
        spent = (manifest.tile_rates[0, 2] + manifest.tile_rates[1, 0]) * 1.0 / xi
        assert state.buffer_est == pytest.approx(max(3.0 - spent, 0.0))
        # tile 2 of a 3x3 grid: N row absent, E wraps to tile 0
        slots = neighbor_slots(manifest.grid, 2)
        assert slots == (None, None, None, 0, 3, 5, 4, 1)
        np.testing.assert_allclose(
            state.neighbor_probs, [0, 0, 0, probs[0], probs[3], probs[5], probs[4], probs[1]]
        )
        np.testing.assert_allclose(
            state.neighbor_rates,
            [0, 0, 0, manifest.tile_rates[0, 2], 0, 0, 0, manifest.tile_rates[1, 0]],
        )
        np.testing.assert_allclose(state.neighbor_decided, [0, 0, 0, 1, 0, 0, 0, 1])


class TestTileReward:
    def test_zero_probability_tile_with_room(self):
        manifest, _ = _world()
        probs = np.zeros(9)
        probs[4] = 1.0
        plan = decision_order(probs, DecisionOrder.HIGH_TO_LOW)
        stream = _stream_state(buffer_s=5.0)
        state = assemble_state(stream, plan, 0, manifest, probs, {})
        r = tile_reward(state, 0, manifest.tile_rates[state.tile], QoeWeights(), 1.0)
        assert r == 0.0  # 0.5/9 Mbps over xi=2 fits the 5 s estimated buffer

    def test_hand_arithmetic(self):
        # p=0.5, r=4, Q1_prev=3, no decided neighbors, b=3, xi=2, T=1
        manifest = VideoManifest.synthetic(
            TileGrid(1, 2), 1, level_mbps=(2.0, 8.0), seed=0, jitter_sigma=0.0
        )
        probs = np.array([0.5, 0.5])
        plan = decision_order(probs, DecisionOrder.Z_SCAN)
        stream = _stream_state(buffer_s=3.0, last_q1=3.0, history=((2.0, 1.0),))
        state = assemble_state(stream, plan, 0, manifest, probs, {})
        r = tile_reward(state, 1, manifest.tile_rates[0], QoeWeights(1, 1, 4.3), 1.0)
        # q1 = 0.5*4 = 2; q2 = 0.5*|4-3| = 0.5; q3 = 0; q4 = max(4/2-3,0) = 0
        assert r == pytest.approx(2.0 - 0.5)

    def test_stall_penalty_monotone_in_level(self):
        manifest, _ = _world(rows=1, cols=2, levels=(1.0, 4.0, 8.0))
        probs = np.array([0.0, 1.0])
        plan = decision_order(probs, DecisionOrder.HIGH_TO_LOW)
        stream = _stream_state(buffer_s=0.0, history=((1.0, 1.0),))
        state = assemble_state(stream, plan, 0, manifest, probs, {})
        w = QoeWeights()
        rewards = [
            tile_reward(state, a, manifest.tile_rates[state.tile], w, 1.0) for a in range(3)
        ]
        assert rewards[0] >= rewards[1] >= rewards[2]

    def test_action_out_of_range(self):
        manifest, _ = _world()
        probs = np.full(9, 1 / 9)
        plan = decision_order(probs, DecisionOrder.Z_SCAN)
        state = assemble_state(_stream_state(), plan, 0, manifest, probs, {})
        with pytest.raises(ParameterError):
            tile_reward(state, 7, manifest.tile_rates[0], QoeWeights(), 1.0)


class TestWholePassIdentities:
    @pytest.mark.parametrize("order", list(DecisionOrder))
    def test_q1_and_q3_sums_match_segment_terms(self, order):
        rng = np.random.default_rng(0)
        manifest, _ = _world(seed=4)
        neighbors = neighbor_map(manifest.grid)
        for trial in range(40):
            probs = rng.dirichlet(np.ones(9) * 0.7)
            if trial % 3 == 0:
                probs[rng.integers(0, 9)] = 0.0
                probs = probs / probs.sum()
            plan = decision_order(probs, order, seed=trial)
            stream = _stream_state(
                buffer_s=float(rng.uniform(0, 6)), last_q1=float(rng.uniform(0, 1))
            )
            walk = DecisionPass(stream, plan, manifest, probs, QoeWeights(1, 1, 4.3))
            q1_parts = []
            q3_parts = []
            while not walk.done:
                state = walk.state()
                action = 0 if walk.forced else int(rng.integers(0, manifest.n_levels))
                rates = manifest.tile_rates[walk.current_tile]
                r = rates[action]
                q1_parts.append(state.tile_prob * r)
                q3 = 0.0
                seen = set()
                for k in range(8):
                    u = int(state.neighbor_tiles[k])
                    if u < 0 or u in seen or state.neighbor_decided[k] == 0:
                        continue
                    seen.add(u)
                    q3 += state.tile_prob * state.neighbor_probs[k] * abs(r - state.neighbor_rates[k])
                q3_parts.append(q3)
                walk.advance(state, action)
            decision = walk.decision()
            assert sum(q1_parts) == pytest.approx(viewport_quality(decision), abs=1e-12)
            assert sum(q3_parts) == pytest.approx(
                spatial_variation(decision, neighbors), abs=1e-12
            )

    def test_decision_pass_produces_valid_decision(self):
        manifest, _ = _world(rows=2, cols=2, levels=(1.0, 2.0))
        probs = np.array([0.4, 0.3, 0.3, 0.0])
        plan = decision_order(probs, DecisionOrder.HIGH_TO_LOW)
        walk = DecisionPass(_stream_state(), plan, manifest, probs, QoeWeights())
        while not walk.done:
            s = walk.state()
            walk.advance(s, 0 if walk.forced else 1)
        d = walk.decision()
        assert d.levels[3] == 0  # forced lowest
        assert list(d.levels[:3]) == [1, 1, 1]
