"""Simulation of a nano-UAV swarm doing on-board SLAM, ICP map alignment and camera-coverage exploration."""

from .errors import (BandwidthViolation, ConfigError, DegenerateConfigurationError,
                     ExcludedInitialCondition, InvalidPoseError, MissionTimeExhausted,
                     NoCorrespondenceError, ScenarioError, SwarmSimError, SyncFailure)
from .world import EnvironmentMap, LidarScan, Pose2D, load_scenario, parse_scenario
from .slam import SlamMap, SlamParams, ScanMatchParams
from .icp import IcpParams, PointSet, RigidTransform2D
from .explore import ControlGains, CoverageMap, ExploreParams
from .swarm import MissionLog, SimConfig, run_mission

__version__ = "0.1.0"

__all__ = [
    "BandwidthViolation", "ConfigError", "DegenerateConfigurationError", "ExcludedInitialCondition",
    "InvalidPoseError", "MissionTimeExhausted", "NoCorrespondenceError", "ScenarioError",
    "SwarmSimError", "SyncFailure", "EnvironmentMap", "LidarScan", "Pose2D", "load_scenario",
    "parse_scenario", "SlamMap", "SlamParams", "ScanMatchParams", "IcpParams", "PointSet",
    "RigidTransform2D", "ControlGains", "CoverageMap", "ExploreParams", "MissionLog", "SimConfig",
    "run_mission",
]
