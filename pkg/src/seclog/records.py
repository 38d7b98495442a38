"""Plaintext log records produced by an embedded controller about its device.

Wire form: ``timestamp u64 | record_type u8 | payload_len u16 | payload``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

from .errors import MalformedRecord

_PREFIX = struct.Struct("<QBH")
_SAMPLE = struct.Struct("<IihH")
_EVENT = struct.Struct("<HI")
_META = struct.Struct("<QIIiI")

# event codes
EVENT_LINK_FAILURE = 0x0001
EVENT_CAPACITY_EXHAUSTED = 0x0002


class RecordType(IntEnum):
    SAMPLE = 0x01
    EVENT = 0x02
    SESSION_META = 0x03


@dataclass(frozen=True)
class Sample:
    voltage_mv: int
    current_ma: int
    temp_centi_c: int
    soc_permille: int

    def pack(self) -> bytes:
        return _SAMPLE.pack(self.voltage_mv, self.current_ma, self.temp_centi_c, self.soc_permille)


@dataclass(frozen=True)
class Event:
    event_code: int
    detail: int = 0

    def pack(self) -> bytes:
        return _EVENT.pack(self.event_code, self.detail)


@dataclass(frozen=True)
class SessionMeta:
    record_count: int
    min_voltage_mv: int
    max_voltage_mv: int
    max_temp_centi_c: int
    fault_count: int

    def pack(self) -> bytes:
        return _META.pack(
            self.record_count, self.min_voltage_mv, self.max_voltage_mv,
            self.max_temp_centi_c, self.fault_count,
        )


Payload = Union[Sample, Event, SessionMeta]

_PAYLOAD_TYPES = {
    RecordType.SAMPLE: (Sample, _SAMPLE),
    RecordType.EVENT: (Event, _EVENT),
    RecordType.SESSION_META: (SessionMeta, _META),
}
_TYPE_OF = {cls: rtype for rtype, (cls, _) in _PAYLOAD_TYPES.items()}


@dataclass(frozen=True)
class LogRecord:
    timestamp: int
    record_type: RecordType
    payload: bytes

    @classmethod
    def of(cls, timestamp: int, body: Payload) -> "LogRecord":
        return cls(timestamp, _TYPE_OF[type(body)], body.pack())

    def pack(self) -> bytes:
        return _PREFIX.pack(self.timestamp, self.record_type, len(self.payload)) + self.payload

    def decode(self) -> Payload:
        cls, layout = _PAYLOAD_TYPES[self.record_type]
        return cls(*layout.unpack(self.payload))

    @property
    def size(self) -> int:
        return _PREFIX.size + len(self.payload)


def parse_record(data: bytes) -> LogRecord:
    if len(data) < _PREFIX.size:
        raise MalformedRecord(f"record shorter than its {_PREFIX.size}-byte prefix")
    timestamp, raw_type, payload_len = _PREFIX.unpack_from(data, 0)
    try:
        rtype = RecordType(raw_type)
    except ValueError:
        raise MalformedRecord(f"invalid record_type {raw_type:#04x}") from None
    layout = _PAYLOAD_TYPES[rtype][1]
    if payload_len != layout.size:
        raise MalformedRecord(f"{rtype.name} payload must be {layout.size} bytes, got {payload_len}")
    if len(data) != _PREFIX.size + payload_len:
        raise MalformedRecord("record length does not match payload_len")
    record = LogRecord(timestamp, rtype, bytes(data[_PREFIX.size:]))
    body = record.decode()
    if isinstance(body, Sample) and body.soc_permille > 1000:
        raise MalformedRecord(f"soc_permille {body.soc_permille} > 1000")
    if isinstance(body, SessionMeta) and not -0x8000 <= body.max_temp_centi_c <= 0x7FFF:
        raise MalformedRecord("max_temp_centi_c outside the signed 16-bit range")
    return record


def record_to_dict(record: LogRecord, *, ec_id: bytes, seq: int) -> dict:
    """Stable JSON shape shared by the oracle trace and record export."""
    body = record.decode()
    return {
        "ec_id": ec_id.hex(),
        "seq": seq,
        "timestamp": record.timestamp,
        "type": record.record_type.name.lower(),
        "fields": dict(vars(body)),
    }


def record_json_line(record: LogRecord, *, ec_id: bytes, seq: int) -> str:
    return json.dumps(record_to_dict(record, ec_id=ec_id, seq=seq), separators=(",", ":"))
