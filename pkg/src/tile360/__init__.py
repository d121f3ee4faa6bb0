"""Tile-based 360-degree adaptive streaming: simulator, predictors, agent.

The package is organized as a numpy library:

  * :mod:`tile360.nn`          - float64 kernels with analytic gradients
  * :mod:`tile360.geometry`    - viewpoints, tile grids, viewing probabilities
  * :mod:`tile360.predictors`  - static / least-squares / KNN / attentive net
  * :mod:`tile360.qoe`         - the four-term per-segment QoE model
  * :mod:`tile360.environment` - trace-driven download and buffer simulator
  * :mod:`tile360.sequential`  - per-tile decision ordering, state, rewards
  * :mod:`tile360.agent`       - sequential actor-critic bitrate controller
  * :mod:`tile360.baselines`   - buffer-based rule, greedy knapsack, oracle
  * :mod:`tile360.synth`       - synthetic trajectories and network traces
  * :mod:`tile360.harness`     - experiments, file formats, reports, sweeps
"""

from .environment import NetworkTrace, StreamEnv, StreamState, VideoManifest
from .errors import (
    ConfigurationError,
    InfeasibleError,
    ParameterError,
    PredictionError,
    ProtocolError,
    ShapeError,
    Tile360Error,
    TrainingError,
)
from .geometry import (
    TileGrid,
    Trajectory,
    Viewpoint,
    angular_errors,
    hit_rate,
    one_hop_neighbors,
    viewing_probabilities,
    wrap_longitude_distance,
)
from .qoe import QoeBreakdown, QoeWeights, SegmentDecision, qoe_score

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InfeasibleError",
    "NetworkTrace",
    "ParameterError",
    "PredictionError",
    "ProtocolError",
    "QoeBreakdown",
    "QoeWeights",
    "SegmentDecision",
    "ShapeError",
    "StreamEnv",
    "StreamState",
    "TileGrid",
    "Tile360Error",
    "Trajectory",
    "TrainingError",
    "VideoManifest",
    "Viewpoint",
    "angular_errors",
    "hit_rate",
    "one_hop_neighbors",
    "qoe_score",
    "viewing_probabilities",
    "wrap_longitude_distance",
]
