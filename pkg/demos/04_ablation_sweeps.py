"""Ablations: per-tile decision order and buffer-cap sensitivity.

Two desk-scale ablations of the sequential agent. First, the tile visit
order: on a world where the byte budget only covers high quality for the
most-watched tiles, training with the descending-probability order edges
out a random order, and ascending order trails both. Second, the player's
buffer cap: evaluating one fixed trained policy across caps on a mild-
ladder world barely moves mean QoE (a 1-second cap squeeze is the only
visible effect).

Run:  python demos/04_ablation_sweeps.py     (roughly ten minutes)
"""

import numpy as np

from tile360.agent import TrainConfig, train
from tile360.environment import VideoManifest
from tile360.geometry import TileGrid
from tile360.harness import StreamWorld, probs_schedule, sweep_buffer_cap, sweep_decision_order
from tile360.qoe import QoeWeights
from tile360.synth import TraceSpec, TrajectorySpec, synthesize_traces, synthesize_trajectories


def order_world(seed=0, n_segments=10):
    """2x4 tiles, two far-apart levels: allocation must track probabilities."""
    grid = TileGrid(2, 4)
    traces = [
        t.augmented(cap_mbps=6.0)
        for t in synthesize_traces(
            TraceSpec(duration_s=60.0, mean_mbps=1.0, volatility=0.5, seed=seed + 70), 8
        )
    ]
    manifests, schedules = [], []
    for v in range(3):
        manifests.append(
            VideoManifest.synthetic(grid, n_segments, level_mbps=(0.5, 5.0), seed=seed + v)
        )
        traj = synthesize_trajectories(
            TrajectorySpec(
                users=1, duration_s=n_segments + 2.0, seed=seed + 200 + v,
                pan_speed_deg_s=(20.0, 70.0),
            )
        )[0]
        schedules.append((probs_schedule(traj, grid, (120.0, 100.0), n_segments, 1.0),) * 2)
    return StreamWorld(
        manifests=manifests, traces=traces, schedules=schedules,
        weights=QoeWeights(), buffer_cap_s=6.0,
    )


def mild_world(seed=0, n_segments=3):
    """2x2 tiles with a gentle three-level ladder (for the cap sweep)."""
    grid = TileGrid(2, 2)
    traces = [
        t.augmented()
        for t in synthesize_traces(TraceSpec(duration_s=60.0, seed=seed + 50), 10)
    ]
    manifests, schedules = [], []
    for v in range(4):
        manifests.append(
            VideoManifest.synthetic(grid, n_segments, level_mbps=(0.5, 2.0, 4.0), seed=seed + v)
        )
        traj = synthesize_trajectories(
            TrajectorySpec(users=1, duration_s=n_segments + 2.0, seed=seed + 100 + v)
        )[0]
        schedules.append((probs_schedule(traj, grid, (100.0, 100.0), n_segments, 1.0),) * 2)
    return StreamWorld(
        manifests=manifests, traces=traces, schedules=schedules,
        weights=QoeWeights(), buffer_cap_s=6.0,
    )


def main():
    steps = 36_000
    world = order_world()
    config = TrainConfig(
        max_iterations=steps,
        workers=4,
        seed=1,
        entropy_init=1.0,
        entropy_decay=0.5,
        entropy_decay_interval=steps // 4,
        filters=16,
        scalar_units=16,
    )
    print(f"decision-order sweep (one {steps}-step training run per order) ...")
    rows = sweep_decision_order(world, config)
    for row in sorted(rows, key=lambda r: -r["mean_qoe"]):
        print(f"  {row['order']:<12} mean QoE {row['mean_qoe']:+.4f}")

    print("\nbuffer-cap sweep with one fixed policy on the mild-ladder world ...")
    world2 = mild_world()
    result = train(
        world2.episode_factory(),
        world2.encoder(),
        TrainConfig(
            max_iterations=60_000,
            workers=4,
            seed=0,
            entropy_init=0.5,
            entropy_decay=0.3,
            entropy_decay_interval=10_000,
            filters=32,
            scalar_units=32,
        ),
    )
    # evaluate on longer videos so the cap actually engages
    eval_world = mild_world(seed=1000, n_segments=30)
    rows = sweep_buffer_cap(eval_world, result.policy)
    values = [row["mean_qoe"] for row in rows]
    for row in rows:
        print(f"  cap {row['buffer_cap_s']:>4.0f} s   mean QoE {row['mean_qoe']:+.4f}")
    spread = (max(values) - min(values)) / abs(np.mean(values))
    print(f"  spread {100 * spread:.2f}% of the mean")


if __name__ == "__main__":
    main()
