"""Framed serial bus used between MPU, controllers and monitored devices.

Frame layout::

    sync 0x7E | dest u8 | src u8 | hop_count u8 | length u16 LE | payload | crc u16 LE

The CRC is CRC-16/CCITT (poly 0x1021, init 0xFFFF, no reflection, no final
xor) over every field except the sync byte.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass, replace

from ..errors import FrameError

SYNC = 0x7E
BROADCAST = 0xFF
MPU_ADDR = 0x00

_HEAD = struct.Struct("<BBBBH")
_CRC = struct.Struct("<H")
MIN_FRAME = _HEAD.size + _CRC.size


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    return binascii.crc_hqx(data, init)


@dataclass(frozen=True)
class Frame:
    dest: int
    src: int
    payload: bytes
    hop_count: int = 0

    def encode(self) -> bytes:
        if len(self.payload) > 0xFFFF:
            raise ValueError("payload too long for a frame")
        head = _HEAD.pack(SYNC, self.dest, self.src, self.hop_count, len(self.payload))
        body = head[1:] + self.payload
        return head[:1] + body + _CRC.pack(crc16_ccitt(body))

    def hopped(self) -> "Frame":
        return replace(self, hop_count=min(self.hop_count + 1, 0xFF))


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame, raising FrameError on any inconsistency."""
    if len(data) < MIN_FRAME:
        raise FrameError(f"frame shorter than {MIN_FRAME} bytes")
    sync, dest, src, hops, length = _HEAD.unpack_from(data, 0)
    if sync != SYNC:
        raise FrameError(f"bad sync byte {sync:#04x}")
    if len(data) != MIN_FRAME + length:
        raise FrameError("length field does not match frame size")
    body = data[1:_HEAD.size + length]
    (crc,) = _CRC.unpack_from(data, _HEAD.size + length)
    if crc != crc16_ccitt(body):
        raise FrameError("crc mismatch")
    return Frame(dest=dest, src=src, payload=bytes(data[_HEAD.size:_HEAD.size + length]), hop_count=hops)


# -- message payloads carried inside frames -----------------------------------

MSG_COMMAND = 0x10
MSG_SAMPLE_REQ = 0x20
MSG_SAMPLE_RESP = 0x21
MSG_MED_EVENT = 0x22
MSG_STATUS = 0x30

CMD_START, CMD_STOP, CMD_SLEEP, CMD_WAKE, CMD_STATUS = 1, 2, 3, 4, 5

_CMD = struct.Struct("<BBH")
_REQ = struct.Struct("<BI")
_EVT = struct.Struct("<BHI")
_STATUS = struct.Struct("<BBII")


def command_msg(code: int, arg: int = 0) -> bytes:
    return _CMD.pack(MSG_COMMAND, code, arg)


def parse_command_msg(payload: bytes) -> tuple[int, int]:
    _, code, arg = _CMD.unpack(payload)
    return code, arg


def sample_request_msg(req_id: int) -> bytes:
    return _REQ.pack(MSG_SAMPLE_REQ, req_id)


def sample_response_msg(req_id: int, sample: bytes) -> bytes:
    return _REQ.pack(MSG_SAMPLE_RESP, req_id) + sample


def parse_request_id(payload: bytes) -> int:
    return _REQ.unpack_from(payload, 0)[1]


def med_event_msg(code: int, detail: int) -> bytes:
    return _EVT.pack(MSG_MED_EVENT, code, detail)


def parse_med_event_msg(payload: bytes) -> tuple[int, int]:
    _, code, detail = _EVT.unpack(payload)
    return code, detail


def status_msg(phase_index: int, seq: int, update_counter: int) -> bytes:
    return _STATUS.pack(MSG_STATUS, phase_index, seq, update_counter)


def parse_status_msg(payload: bytes) -> tuple[int, int, int]:
    _, phase, seq, counter = _STATUS.unpack(payload)
    return phase, seq, counter
