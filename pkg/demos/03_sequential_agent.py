"""Train the sequential actor-critic bitrate agent and sanity-check it.

The agent decides one tile at a time (out-of-FoV tiles forced to the lowest
level, in-FoV tiles visited by descending probability), so its action space
per step is the ladder size rather than ladder**tiles. On a small world the
exhaustive-search oracle is tractable, which lets us report how close the
learned policy gets to the best possible play.

Run:  python demos/03_sequential_agent.py     (about two minutes)
"""

import numpy as np

from tile360.agent import TrainConfig, evaluate_policy, train
from tile360.baselines import brute_force_oracle
from tile360.environment import VideoManifest
from tile360.geometry import TileGrid
from tile360.harness import StreamWorld, probs_schedule, run_bb_episode
from tile360.qoe import QoeWeights
from tile360.synth import TraceSpec, TrajectorySpec, synthesize_traces, synthesize_trajectories

GRID = TileGrid(2, 2)
LEVELS = (0.5, 2.0, 4.0)
N_SEGMENTS = 3  # exhaustive search over 3^(4*3) plays per episode


def build_world(seed=0):
    traces = [
        t.augmented()
        for t in synthesize_traces(TraceSpec(duration_s=60.0, seed=seed + 50), 10)
    ]
    manifests, schedules = [], []
    for v in range(4):
        manifests.append(VideoManifest.synthetic(GRID, N_SEGMENTS, level_mbps=LEVELS, seed=seed + v))
        traj = synthesize_trajectories(
            TrajectorySpec(users=1, duration_s=N_SEGMENTS + 2.0, seed=seed + 100 + v)
        )[0]
        actual = probs_schedule(traj, GRID, (100.0, 100.0), N_SEGMENTS, 1.0)
        schedules.append((actual, actual))
    return StreamWorld(
        manifests=manifests, traces=traces, schedules=schedules,
        weights=QoeWeights(), buffer_cap_s=6.0,
    )


def main():
    world = build_world()
    episodes = [world.episode(k % 4, k % 10, reset_seed=1000 + 7 * k) for k in range(10)]

    print("exhaustive oracle over all 531441 plays per episode ...")
    oracle = float(
        np.mean(
            [
                brute_force_oracle(ep.env, ep.actual, reset_seed=ep.reset_seed)[1] / N_SEGMENTS
                for ep in episodes
            ]
        )
    )
    bb = float(np.mean([run_bb_episode(ep)["mean_qoe"] for ep in episodes]))
    print(f"  oracle mean QoE {oracle:+.4f}; buffer-based baseline {bb:+.4f}")

    config = TrainConfig(
        max_iterations=60_000,
        workers=4,
        seed=0,
        entropy_init=0.5,
        entropy_decay=0.3,
        entropy_decay_interval=10_000,
        filters=32,
        scalar_units=32,
    )
    print(f"training for {config.max_iterations} segment decisions ...")
    result = train(world.episode_factory(), world.encoder(), config)
    curve = [row["mean_qoe"] for row in result.log_rows]
    k = max(len(curve) // 10, 1)
    print(f"  episode QoE, first tenth {np.mean(curve[:k]):+.3f} -> last tenth {np.mean(curve[-k:]):+.3f}")

    agent = evaluate_policy(result.policy, episodes)["mean_qoe"]
    print(
        f"\ngreedy rollout of the trained policy: {agent:+.4f} "
        f"({100 * agent / oracle:.0f}% of the oracle, vs {bb:+.4f} for buffer-based)"
    )


if __name__ == "__main__":
    main()
