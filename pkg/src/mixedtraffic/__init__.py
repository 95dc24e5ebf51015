"""Mixed human/automated platoon simulation with speed-harmonizing control."""
from mixedtraffic.core import (ControllerParams, EnergyParams, IdmParams, Kind, LaneChangeParams,
                               LeadingTrajectory, SimConfig, VehicleState, load_config,
                               validate_config)
from mixedtraffic.energy import Metrics, compare_runs, fuel_rate, mpg
from mixedtraffic.models import (CollisionError, MicroObservation, command_speed, idm_accel,
                                 idm_desired_gap, kernel_average_speed, safety_speed)
from mixedtraffic.scenarios import PRESETS, Scenario, generate_synthetic_trajectory
from mixedtraffic.sim import RunResult, init_platoon, run, step
from mixedtraffic.traffic_state import SpeedField, ingest_segments, plan_target_profile

__version__ = "0.1.0"

__all__ = [
    "CollisionError", "ControllerParams", "EnergyParams", "IdmParams", "Kind",
    "LaneChangeParams", "LeadingTrajectory", "Metrics", "MicroObservation", "PRESETS",
    "RunResult", "Scenario", "SimConfig", "SpeedField", "VehicleState", "command_speed",
    "compare_runs", "fuel_rate", "generate_synthetic_trajectory", "idm_accel",
    "idm_desired_gap", "ingest_segments", "init_platoon", "kernel_average_speed",
    "load_config", "mpg", "plan_target_profile", "run", "safety_speed", "step",
    "validate_config",
]
