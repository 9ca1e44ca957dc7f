"""Multi-robot acoustic source seeking: simulator, search algorithms, campaigns."""

from .env import (
    AcousticSource,
    ArenaBounds,
    DEFAULT_ARENA,
    GridField,
    NoiseConfig,
    PointSourceField,
    Position,
    acoustic_spl,
    grid_scan,
)
from .deciders import register_algorithm
from .mission import MissionConfig, run_mission
from .campaign import parse_config, run_campaign

__version__ = "0.1.0"

__all__ = [
    "AcousticSource",
    "ArenaBounds",
    "DEFAULT_ARENA",
    "GridField",
    "MissionConfig",
    "NoiseConfig",
    "PointSourceField",
    "Position",
    "acoustic_spl",
    "grid_scan",
    "parse_config",
    "register_algorithm",
    "run_mission",
    "run_campaign",
]
