"""Synthetic head-movement trajectories and network throughput traces.

Head movement per video follows one shared latent attention path built from
three archetypes: fixations (hold with jitter), smooth pans (constant
angular velocity), and saccades (fast repositioning). Each user replays the
latent path with a personal time lag, gain, and smooth noise, so users of
the same video are genuinely correlated and cross-user samples carry real
information about any one user's future.

Throughput traces are mean-reverting lognormal random walks sampled once a
second, which mimics the burstiness of commuter cellular captures at desk
scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import NetworkTrace
from .errors import ParameterError
from .geometry import Trajectory, clamp_latitude, wrap_longitude

Array = np.ndarray


@dataclass(frozen=True)
class TrajectorySpec:
    """Knobs for one video's worth of correlated user trajectories."""

    users: int = 20
    duration_s: float = 40.0
    cadence_hz: float = 6.0
    # archetype mix (relative weights of segment types along the latent path)
    fixation_weight: float = 0.4
    pan_weight: float = 0.45
    saccade_weight: float = 0.15
    # kinematics
    fixation_dwell_s: tuple[float, float] = (0.5, 2.5)
    pan_speed_deg_s: tuple[float, float] = (8.0, 45.0)
    pan_duration_s: tuple[float, float] = (0.8, 3.0)
    saccade_jump_deg: tuple[float, float] = (25.0, 90.0)
    saccade_duration_s: tuple[float, float] = (0.2, 0.4)
    lat_amplitude_deg: float = 25.0
    # per-user deviations from the latent path
    user_lag_s: tuple[float, float] = (0.0, 0.4)
    user_gain: tuple[float, float] = (0.9, 1.1)
    user_noise_deg: float = 4.0
    noise_smoothing: float = 0.9  # AR(1) coefficient per sample
    seed: int = 0

    def __post_init__(self) -> None:
        if self.users < 1 or self.duration_s <= 0 or self.cadence_hz <= 0:
            raise ParameterError("users, duration, and cadence must be positive")


def _latent_path(spec: TrajectorySpec, rng: np.random.Generator, n: int) -> tuple[Array, Array]:
    """Unwrapped-longitude and latitude latent series of length n."""
    dt = 1.0 / spec.cadence_hz
    weights = np.array([spec.fixation_weight, spec.pan_weight, spec.saccade_weight])
    weights = weights / weights.sum()
    lon = np.empty(n)
    lat = np.empty(n)
    lon[0] = rng.uniform(-180.0, 180.0)
    lat[0] = rng.uniform(-spec.lat_amplitude_deg / 2, spec.lat_amplitude_deg / 2)
    k = 1
    lat_target = lat[0]
    while k < n:
        archetype = rng.choice(3, p=weights)
        if archetype == 0:  # fixation
            steps = max(1, int(rng.uniform(*spec.fixation_dwell_s) / dt))
            v_lon = 0.0
        elif archetype == 1:  # smooth pan
            steps = max(1, int(rng.uniform(*spec.pan_duration_s) / dt))
            v_lon = rng.uniform(*spec.pan_speed_deg_s) * rng.choice([-1.0, 1.0])
        else:  # saccade
            steps = max(1, int(rng.uniform(*spec.saccade_duration_s) / dt))
            jump = rng.uniform(*spec.saccade_jump_deg) * rng.choice([-1.0, 1.0])
            v_lon = jump / (steps * dt)
        lat_target = float(
            np.clip(
                lat_target + rng.normal(0.0, spec.lat_amplitude_deg / 4),
                -spec.lat_amplitude_deg,
                spec.lat_amplitude_deg,
            )
        )
        for _ in range(steps):
            if k >= n:
                break
            lon[k] = lon[k - 1] + v_lon * dt
            lat[k] = lat[k - 1] + 0.15 * (lat_target - lat[k - 1])
            k += 1
    return lon, lat


def synthesize_trajectories(spec: TrajectorySpec, video_id: str = "synth") -> list[Trajectory]:
    """Correlated multi-user trajectories for one video.

    All users derive from a single latent path; with zero noise, zero lag,
    and unit gain they are identical.
    """
    rng = np.random.default_rng(spec.seed)
    dt = 1.0 / spec.cadence_hz
    n = int(round(spec.duration_s * spec.cadence_hz))
    pad = int(np.ceil(max(spec.user_lag_s) / dt)) + 1
    lon_lat = _latent_path(spec, rng, n + pad)
    base_lon, base_lat = lon_lat
    t_base = np.arange(n + pad) * dt
    t_out = np.arange(n) * dt

    out: list[Trajectory] = []
    for u in range(spec.users):
        lag = rng.uniform(*spec.user_lag_s)
        gain = rng.uniform(*spec.user_gain)
        lon_u = np.interp(t_out + lag, t_base, base_lon)
        lat_u = np.interp(t_out + lag, t_base, base_lat)
        center = lon_u[0]
        lon_u = center + gain * (lon_u - center)
        if spec.user_noise_deg > 0:
            sigma_step = spec.user_noise_deg * np.sqrt(1 - spec.noise_smoothing**2)
            noise_lon = np.empty(n)
            noise_lat = np.empty(n)
            noise_lon[0] = rng.normal(0.0, spec.user_noise_deg)
            noise_lat[0] = rng.normal(0.0, spec.user_noise_deg / 2)
            for k in range(1, n):
                noise_lon[k] = spec.noise_smoothing * noise_lon[k - 1] + rng.normal(
                    0.0, sigma_step
                )
                noise_lat[k] = spec.noise_smoothing * noise_lat[k - 1] + rng.normal(
                    0.0, sigma_step / 2
                )
            lon_u = lon_u + noise_lon
            lat_u = lat_u + noise_lat
        out.append(
            Trajectory(
                user_id=f"user{u:03d}",
                timestamps=t_out,
                lons=np.array([wrap_longitude(v) for v in lon_u]),
                lats=np.array([clamp_latitude(v) for v in lat_u]),
                sample_rate=spec.cadence_hz,
                video_id=video_id,
            )
        )
    return out


@dataclass(frozen=True)
class TraceSpec:
    """Knobs for synthetic throughput traces (pre-augmentation units)."""

    duration_s: float = 120.0
    step_s: float = 1.0
    mean_mbps: float = 2.5
    volatility: float = 0.35     # lognormal step scale
    reversion: float = 0.25      # pull toward the mean per step
    floor_mbps: float = 0.1
    ceil_mbps: float = 20.0
    seed: int = 0


def synthesize_traces(spec: TraceSpec, count: int = 1) -> list[NetworkTrace]:
    """Mean-reverting lognormal throughput walks, one trace per index."""
    out: list[NetworkTrace] = []
    n = max(2, int(round(spec.duration_s / spec.step_s)))
    for i in range(count):
        rng = np.random.default_rng(spec.seed + i)
        log_mean = np.log(spec.mean_mbps)
        x = log_mean + rng.normal(0.0, spec.volatility)
        values = np.empty(n)
        for k in range(n):
            x = x + spec.reversion * (log_mean - x) + rng.normal(0.0, spec.volatility)
            values[k] = np.exp(x)
        values = np.clip(values, spec.floor_mbps, spec.ceil_mbps)
        out.append(
            NetworkTrace(
                timestamps=np.arange(n) * spec.step_s,
                throughput_mbps=values,
                name=f"synth{i:03d}",
            )
        )
    return out
