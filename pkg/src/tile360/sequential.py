"""Per-tile sequential decision structure for one segment.

A segment's joint bitrate choice is stretched into one decision per tile:
out-of-FoV tiles (predicted probability 0) are forced to the lowest level
first, then in-FoV tiles are visited in a configurable order. Each tile sees
a local state (its chunk ladder, neighbor probabilities and already-chosen
neighbor bitrates, throughput and buffer estimates) and receives a local
reward estimate mirroring the segment-level QoE terms.

The local rewards are constructed so that, over a complete pass,
  * the per-tile quality terms sum exactly to the segment's viewport quality,
  * the per-tile spatial terms sum exactly to the segment's spatial
    variation: each unordered neighbor pair is charged once, at the moment
    its second member is decided (the decided-mask keeps earlier tiles from
    seeing undecided neighbors).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .environment import StreamState, VideoManifest
from .errors import ParameterError
from .geometry import neighbor_slots
from .qoe import QoeWeights, SegmentDecision

Array = np.ndarray

N_NEIGHBOR_SLOTS = 8
UNDECIDED_RATE = 0.0  # below every ladder value, so 0 is distinguishable


class DecisionOrder(str, Enum):
    """Visit order for in-FoV tiles (out-of-FoV tiles always go first)."""

    HIGH_TO_LOW = "high_to_low"
    LOW_TO_HIGH = "low_to_high"
    Z_SCAN = "z_scan"
    RANDOM = "random"


@dataclass(frozen=True)
class DecisionPlan:
    """A permutation of tiles with a forced-lowest prefix."""

    order: tuple[int, ...]
    forced: tuple[bool, ...]

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise ParameterError("plan order must be a permutation of all tiles")
        if len(self.forced) != len(self.order):
            raise ParameterError("forced flags must match the order length")
        seen_free = False
        for flag in self.forced:
            if flag and seen_free:
                raise ParameterError("forced tiles must precede free tiles")
            seen_free = seen_free or not flag

    def __len__(self) -> int:
        return len(self.order)


def decision_order(
    probs: Array, mode: DecisionOrder = DecisionOrder.HIGH_TO_LOW, seed: int | None = None
) -> DecisionPlan:
    """Build the per-segment tile visit order from predicted probabilities.

    Tiles with probability 0 come first (forced to the lowest level); ties
    anywhere break by ascending tile index. RANDOM permutes only the in-FoV
    tiles, reproducibly from ``seed``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ParameterError("probabilities must be nonnegative")
    out_fov = [i for i in range(probs.size) if probs[i] == 0.0]
    in_fov = [i for i in range(probs.size) if probs[i] > 0.0]
    if mode == DecisionOrder.HIGH_TO_LOW:
        in_fov.sort(key=lambda i: (-probs[i], i))
    elif mode == DecisionOrder.LOW_TO_HIGH:
        in_fov.sort(key=lambda i: (probs[i], i))
    elif mode == DecisionOrder.Z_SCAN:
        pass  # ascending tile index == row-major scan
    elif mode == DecisionOrder.RANDOM:
        rng = np.random.default_rng(seed)
        rng.shuffle(in_fov)
    else:
        raise ParameterError(f"unknown decision order {mode!r}")
    order = tuple(out_fov + in_fov)
    forced = tuple([True] * len(out_fov) + [False] * len(in_fov))
    return DecisionPlan(order=order, forced=forced)


def estimate_buffer(
    buffer_prev_s: float,
    decided_rates_mbps: Array | list[float],
    segment_duration: float,
    throughput_est_mbps: float,
) -> float:
    """Buffer seconds left after already-decided tiles download, floored at 0.

    Uses nominal volumes: each decided tile costs rate * T / throughput
    seconds of buffer.
    """
    if throughput_est_mbps <= 0:
        raise ParameterError("throughput estimate must be positive")
    spent = float(np.sum(decided_rates_mbps)) * segment_duration / throughput_est_mbps
    return max(buffer_prev_s - spent, 0.0)


@dataclass(frozen=True)
class TileDecisionState:
    """Everything the agent sees when choosing one tile's level.

    Neighbor vectors use the fixed 8-slot clockwise-from-NW layout; absent or
    undecided neighbors carry probability/rate 0 with decided flag 0 (0 Mbps
    is below every real ladder entry, so "undecided" is distinguishable from
    "lowest"). ``neighbor_tiles`` keeps the raw indices (-1 when absent) so
    reward computation can deduplicate wrap-around aliases.
    """

    tile: int
    chunk_sizes: Array          # (levels,) Mbit for this tile, this segment
    neighbor_probs: Array       # (8,)
    neighbor_rates: Array       # (8,) chosen Mbps, 0 when undecided/absent
    neighbor_decided: Array     # (8,) 1.0 decided, else 0.0
    neighbor_tiles: Array       # (8,) int, -1 when absent
    throughput_est: float       # Mbps
    last_viewport_quality: float
    tile_prob: float
    buffer_est: float           # seconds


def assemble_state(
    stream: StreamState,
    plan: DecisionPlan,
    position: int,
    manifest: VideoManifest,
    probs: Array,
    decided_levels: dict[int, int],
    throughput_est: float | None = None,
) -> TileDecisionState:
    """Gather the per-tile state for ``plan.order[position]``.

    ``decided_levels`` maps already-decided tiles to their chosen level.
    ``throughput_est`` defaults to the harmonic mean of the stream state's
    download history.
    """
    if not (0 <= position < len(plan)):
        raise ParameterError("position outside the decision plan")
    tile = plan.order[position]
    probs = np.asarray(probs, dtype=np.float64)
    xi = stream.throughput_estimate() if throughput_est is None else float(throughput_est)
    rates = manifest.tile_rates

    slots = neighbor_slots(manifest.grid, tile)
    n_probs = np.zeros(N_NEIGHBOR_SLOTS)
    n_rates = np.zeros(N_NEIGHBOR_SLOTS)
    n_decided = np.zeros(N_NEIGHBOR_SLOTS)
    n_tiles = np.full(N_NEIGHBOR_SLOTS, -1, dtype=np.int64)
    for k, s in enumerate(slots):
        if s is None:
            continue
        n_tiles[k] = s
        n_probs[k] = probs[s]
        if s in decided_levels:
            n_decided[k] = 1.0
            n_rates[k] = rates[s, decided_levels[s]]
        else:
            n_rates[k] = UNDECIDED_RATE

    decided_rates = [rates[t, lvl] for t, lvl in decided_levels.items()]
    buffer_est = estimate_buffer(
        stream.buffer_s, decided_rates, manifest.segment_duration, xi
    )
    return TileDecisionState(
        tile=tile,
        chunk_sizes=manifest.chunk_sizes[stream.segment_index, tile].copy(),
        neighbor_probs=n_probs,
        neighbor_rates=n_rates,
        neighbor_decided=n_decided,
        neighbor_tiles=n_tiles,
        throughput_est=xi,
        last_viewport_quality=stream.last_viewport_quality,
        tile_prob=float(probs[tile]),
        buffer_est=buffer_est,
    )


def tile_reward(
    state: TileDecisionState,
    action: int,
    tile_rates: Array,
    weights: QoeWeights,
    segment_duration: float,
) -> float:
    """Local reward estimate for choosing ``action`` in ``state``.

    Terms mirror the segment QoE: quality p*r; temporal p*|r - Q1_prev|;
    spatial sum over decided distinct neighbors of p_i*p_u*|r_i - r_u|
    (charged once per unordered pair across the whole pass); stall estimate
    max(r*T/throughput - buffer_est, 0).
    """
    tile_rates = np.asarray(tile_rates, dtype=np.float64)
    if not (0 <= action < tile_rates.size):
        raise ParameterError("action outside the ladder")
    r = float(tile_rates[action])
    p = state.tile_prob
    q1 = p * r
    q2 = p * abs(r - state.last_viewport_quality)
    q3 = 0.0
    seen: set[int] = set()
    for k in range(N_NEIGHBOR_SLOTS):
        u = int(state.neighbor_tiles[k])
        if u < 0 or u in seen or state.neighbor_decided[k] == 0.0:
            continue
        seen.add(u)
        q3 += p * state.neighbor_probs[k] * abs(r - state.neighbor_rates[k])
    q4 = max(r * segment_duration / state.throughput_est - state.buffer_est, 0.0)
    return q1 - weights.eta1 * q2 - weights.eta2 * q3 - weights.eta3 * q4


class DecisionPass:
    """Walk one segment's plan, accumulating decisions and local rewards."""

    def __init__(
        self,
        stream: StreamState,
        plan: DecisionPlan,
        manifest: VideoManifest,
        probs: Array,
        weights: QoeWeights,
        throughput_est: float | None = None,
    ) -> None:
        self.stream = stream
        self.plan = plan
        self.manifest = manifest
        self.probs = np.asarray(probs, dtype=np.float64)
        self.weights = weights
        self.position = 0
        self.decided: dict[int, int] = {}
        self._xi = (
            stream.throughput_estimate() if throughput_est is None else float(throughput_est)
        )

    @property
    def done(self) -> bool:
        return self.position >= len(self.plan)

    @property
    def current_tile(self) -> int:
        return self.plan.order[self.position]

    @property
    def forced(self) -> bool:
        return self.plan.forced[self.position]

    def state(self) -> TileDecisionState:
        return assemble_state(
            self.stream,
            self.plan,
            self.position,
            self.manifest,
            self.probs,
            self.decided,
            throughput_est=self._xi,
        )

    def advance(self, state: TileDecisionState, action: int) -> float:
        """Record ``action`` for the current tile; returns its local reward."""
        tile = self.current_tile
        reward = tile_reward(
            state,
            action,
            self.manifest.tile_rates[tile],
            self.weights,
            self.manifest.segment_duration,
        )
        self.decided[tile] = int(action)
        self.position += 1
        return reward

    def decision(self) -> SegmentDecision:
        if not self.done:
            raise ParameterError("decision pass is not complete")
        levels = np.array([self.decided[t] for t in range(self.manifest.n_tiles)])
        return SegmentDecision(
            levels=levels,
            ladder=self.manifest.tile_rates,
            probs=self.probs,
            segment_index=self.stream.segment_index,
        )
