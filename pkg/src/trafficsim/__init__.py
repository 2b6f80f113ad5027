"""Microscopic traffic simulation with deterministic parallel stepping."""

from .config import EngineConfig, load_config
from .engine import Engine, create_engine
from .errors import (ConfigError, ContractViolation, InvariantViolation,
                     ParseError, RouteError, SemanticError, TrafficSimError)
from .kinematics import VehicleParams
from .roadnet import RoadNet, parse_roadnet, parse_roadnet_file

__version__ = "0.1.0"

__all__ = [
    "Engine", "EngineConfig", "VehicleParams", "RoadNet",
    "create_engine", "load_config", "parse_roadnet", "parse_roadnet_file",
    "TrafficSimError", "ParseError", "SemanticError", "ConfigError",
    "RouteError", "ContractViolation", "InvariantViolation",
    "__version__",
]
