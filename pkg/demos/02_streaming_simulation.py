"""Play one tiled video over a throughput trace with two classic controllers.

Shows the streaming half of the toolkit end to end: a synthetic chunk
ladder, an augmented network trace, per-segment viewing probabilities from a
head-movement trajectory, and the buffer-based and greedy-knapsack
controllers scored by the four-term QoE model. Ends with the environment's
time-conservation ledger.

Run:  python demos/02_streaming_simulation.py     (a few seconds)
"""


from tile360.agent import EpisodeWorld
from tile360.environment import StreamEnv, VideoManifest
from tile360.geometry import TileGrid
from tile360.harness import probs_schedule, run_bb_episode, run_greedy_episode
from tile360.qoe import QoeWeights
from tile360.synth import TraceSpec, TrajectorySpec, synthesize_traces, synthesize_trajectories

GRID = TileGrid(3, 3)
N_SEGMENTS = 30


def main():
    manifest = VideoManifest.synthetic(
        GRID, N_SEGMENTS, level_mbps=(0.5, 1.0, 2.0, 4.0, 8.0), seed=0, video_id="demo"
    )
    trace = synthesize_traces(TraceSpec(duration_s=90.0, seed=4), 1)[0].augmented()
    print(
        f"video: {N_SEGMENTS} segments x {GRID.n_tiles} tiles x "
        f"{manifest.n_levels} levels; trace {trace.throughput_mbps.min():.1f}-"
        f"{trace.throughput_mbps.max():.1f} Mbps after augmentation"
    )

    viewer = synthesize_trajectories(
        TrajectorySpec(users=1, duration_s=N_SEGMENTS + 2.0, seed=7), video_id="demo"
    )[0]
    probs = probs_schedule(viewer, GRID, (100.0, 100.0), N_SEGMENTS, 1.0)

    for name, runner in (("buffer-based", run_bb_episode), ("greedy knapsack", run_greedy_episode)):
        env = StreamEnv(manifest, trace, weights=QoeWeights(), buffer_cap_s=6.0)
        world = EpisodeWorld(env=env, predicted=probs, actual=probs, reset_seed=0)
        stats = runner(world)
        acct = env.account
        print(f"\n{name}:")
        print(
            f"  mean QoE {stats['mean_qoe']:+.3f}   "
            f"(quality {stats['q1']:.3f}, temporal {stats['q2']:.3f}, "
            f"spatial {stats['q3']:.3f}, stall {stats['q4']:.3f} s/segment)"
        )
        print(
            f"  time ledger: playing-download {acct.playing_download_s:.2f} s + "
            f"stalls {acct.rebuffer_s:.2f} s + idle {acct.idle_s:.2f} s = "
            f"{acct.wall_clock_s:.2f} s wall clock "
            f"(trace consumed {acct.trace_consumed_s:.2f} s)"
        )
    print(
        "\nthe greedy allocator spends its byte budget on high-probability"
        " tiles, trading a little stall risk for viewport quality"
    )


if __name__ == "__main__":
    main()
