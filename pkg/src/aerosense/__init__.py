"""AeroSense: terminal-airspace traffic counts predicted from sets of aircraft states."""

from .geometry import AirspaceConfig, default_airspace
from .model import AeroSense, ModelConfig, load_params, save_params
from .simulator import SimConfig, generate_traffic
from .snapshots import build_snapshot, chronological_split, make_dataset
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AeroSense", "AirspaceConfig", "ModelConfig", "SimConfig", "TrainConfig",
    "build_snapshot", "chronological_split", "default_airspace", "evaluate",
    "generate_traffic", "load_params", "make_dataset", "save_params", "train",
]
