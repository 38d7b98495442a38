"""Tick-based simulation of the BMS daisy chain (MPU, controllers, packs, LMUs)."""

from .frames import Frame, crc16_ccitt, decode_frame
from .med import MedProfile, med_sample
from .sim import (
    MAX_RETRIES,
    EcSpec,
    FaultSpec,
    ScenarioConfig,
    Sim,
    SimResult,
    build_sim,
    config_to_dict,
    demo_config,
    inject_fault,
    run,
)

__all__ = [
    "MAX_RETRIES",
    "EcSpec",
    "FaultSpec",
    "Frame",
    "MedProfile",
    "ScenarioConfig",
    "Sim",
    "SimResult",
    "build_sim",
    "config_to_dict",
    "crc16_ccitt",
    "decode_frame",
    "demo_config",
    "inject_fault",
    "med_sample",
    "run",
]
