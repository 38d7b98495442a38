"""Battery pack model acting as the monitored embedded device."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields

from ..errors import BadConfig
from ..records import Sample

TEMP_PERIOD = 64


@dataclass
class MedProfile:
    initial_voltage_mv: int = 4100
    discharge_mv_per_tick: int = 1
    temp_base_centi_c: int = 2500
    temp_amplitude: int = 300
    fault_schedule: list[tuple[int, int]] = field(default_factory=list)
    empty_voltage_mv: int = 3000
    full_voltage_mv: int = 4200
    current_ma: int = -1500
    current_noise_ma: int = 0

    def __post_init__(self) -> None:
        self.fault_schedule = [(int(t), int(code)) for t, code in self.fault_schedule]
        if self.initial_voltage_mv < 0 or self.discharge_mv_per_tick < 0:
            raise BadConfig("voltages and discharge rate must be non-negative")
        if self.full_voltage_mv <= self.empty_voltage_mv:
            raise BadConfig("full_voltage_mv must exceed empty_voltage_mv")
        if self.current_noise_ma < 0:
            raise BadConfig("current_noise_ma must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "MedProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise BadConfig(f"unknown MED profile fields: {sorted(unknown)}")
        return cls(**data)


def triangle(phase: int, period: int = TEMP_PERIOD) -> int:
    """Integer triangle wave on ``0..period/2``: 0 at phase 0, peak at period/2."""
    half = period // 2
    return phase if phase <= half else period - phase


def med_sample(profile: MedProfile, tick: int, rng: random.Random | None = None) -> Sample:
    voltage = max(0, profile.initial_voltage_mv - profile.discharge_mv_per_tick * tick)
    half = TEMP_PERIOD // 2
    temp = profile.temp_base_centi_c + profile.temp_amplitude * triangle(tick % TEMP_PERIOD) // half
    span = profile.full_voltage_mv - profile.empty_voltage_mv
    soc = min(1000, max(0, (voltage - profile.empty_voltage_mv) * 1000 // span))
    current = profile.current_ma
    if profile.current_noise_ma and rng is not None:
        current += rng.randint(-profile.current_noise_ma, profile.current_noise_ma)
    return Sample(voltage_mv=voltage, current_ma=current, temp_centi_c=temp, soc_permille=soc)
