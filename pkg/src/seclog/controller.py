"""Embedded controller: the start / run / close logging lifecycle.

The controller owns one LMU image. It is driven entirely from outside
(commands from the MPU, clock ticks, sample responses from the MED), so a
run is a deterministic function of the inputs it is fed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from . import secmod
from .errors import AuthError, CapacityExceeded, IntegrityMismatch, InvalidTransition, ParseError
from .lmu_format import KeySection, LmuImage, append_block, header_digest
from .records import (
    EVENT_CAPACITY_EXHAUSTED,
    Event,
    LogRecord,
    RecordType,
    SessionMeta,
)

log = logging.getLogger(__name__)

DEFAULT_INTEGRITY_UPDATE_INTERVAL = 8


class Phase(Enum):
    INIT = "init"
    CONNECTED = "connected"
    LOGGING = "logging"
    IDLE = "idle"
    SLEEP = "sleep"
    CLOSING = "closing"
    CLOSED = "closed"


# -- commands from the MPU ----------------------------------------------------

@dataclass(frozen=True)
class StartLogging:
    sample_interval: int


@dataclass(frozen=True)
class Stop:
    pass


@dataclass(frozen=True)
class Sleep:
    pass


@dataclass(frozen=True)
class Wake:
    pass


@dataclass(frozen=True)
class Status:
    pass


Command = Union[StartLogging, Stop, Sleep, Wake, Status]

# (phase, command type) -> next phase. Status is handled separately.
TRANSITIONS: dict[tuple[Phase, type], Phase] = {
    (Phase.CONNECTED, StartLogging): Phase.LOGGING,
    (Phase.LOGGING, Stop): Phase.CLOSING,
    (Phase.LOGGING, Sleep): Phase.SLEEP,
    (Phase.SLEEP, Wake): Phase.LOGGING,
}


# -- actions emitted by the controller -----------------------------------------

@dataclass(frozen=True)
class SampleRequest:
    req_id: int


@dataclass(frozen=True)
class StatusReport:
    phase: Phase
    seq: int
    block_count: int
    update_counter: int


@dataclass(frozen=True)
class Rejected:
    what: str
    phase: Phase
    reason: str


@dataclass(frozen=True)
class CapacityExhausted:
    block_count: int


Action = Union[SampleRequest, StatusReport, Rejected, CapacityExhausted]


@dataclass
class EcConfig:
    ec_id: bytes
    integrity_update_interval: int = DEFAULT_INTEGRITY_UPDATE_INTERVAL

    def __post_init__(self) -> None:
        if len(self.ec_id) != 16:
            raise ValueError("ec_id must be 16 bytes")
        if self.integrity_update_interval < 1:
            raise ValueError("integrity_update_interval must be >= 1")


@dataclass
class SessionStats:
    record_count: int = 0
    min_voltage_mv: Optional[int] = None
    max_voltage_mv: Optional[int] = None
    max_temp_centi_c: Optional[int] = None
    fault_count: int = 0

    def add(self, record: LogRecord) -> None:
        self.record_count += 1
        body = record.decode()
        if record.record_type is RecordType.SAMPLE:
            v, t = body.voltage_mv, body.temp_centi_c
            self.min_voltage_mv = v if self.min_voltage_mv is None else min(self.min_voltage_mv, v)
            self.max_voltage_mv = v if self.max_voltage_mv is None else max(self.max_voltage_mv, v)
            self.max_temp_centi_c = t if self.max_temp_centi_c is None else max(self.max_temp_centi_c, t)
        elif record.record_type is RecordType.EVENT:
            self.fault_count += 1

    def summary(self) -> SessionMeta:
        return SessionMeta(
            record_count=self.record_count,
            min_voltage_mv=self.min_voltage_mv or 0,
            max_voltage_mv=self.max_voltage_mv or 0,
            max_temp_centi_c=self.max_temp_centi_c or 0,
            fault_count=self.fault_count,
        )


class EmbeddedController:
    """State machine of one EC and the LMU attached to it.

    ``trace`` collects every record sealed into the image, in order, as
    ``(seq, record)`` pairs.
    """

    def __init__(self, config: EcConfig) -> None:
        self.config = config
        self.phase = Phase.INIT
        self.image: Optional[LmuImage] = None
        self.keys: Optional[secmod.SessionKeys] = None
        self.sample_interval = 0
        self.appends_since_integrity = 0
        self.stats = SessionStats()
        self.outstanding: Optional[int] = None
        self.now = 0
        self.trace: list[tuple[int, LogRecord]] = []
        self._next_req_id = 0
        self._digest = b""
        self._chain = b""

    @property
    def seq(self) -> int:
        return self.image.block_count if self.image is not None else 0

    # -- starting phase -------------------------------------------------------

    def connect(self, master: bytes, image: LmuImage, rng: secmod.RandomSource) -> None:
        """Derive session keys and attach to ``image``.

        A fresh image gets a newly generated DEK, wrapped into its key section,
        and a genesis integrity section. A used image is resumed only after its
        DEK unwraps and its full chain verifies.
        """
        if self.phase is not Phase.INIT:
            raise InvalidTransition(f"connect in phase {self.phase.value}")
        hdr = image.header
        self._digest = header_digest(hdr)
        fresh = image.block_count == 0 and image.key_section == KeySection()
        if fresh:
            dek = rng.randbytes(secmod.KEY_LEN)
            keys = secmod.derive_session_keys(master, hdr.lmu_id, hdr.svd_id, dek)
            image.key_section = secmod.wrap_dek(keys.kek, dek, self._digest, rng)
            self._chain = secmod.chain_genesis(keys.ik, self._digest)
            image.integrity = secmod.seal_integrity(keys.ik, 0, self._chain, 0)
        else:
            probe = secmod.derive_session_keys(master, hdr.lmu_id, hdr.svd_id, b"")
            dek = secmod.unwrap_dek(probe.kek, image.key_section, self._digest)
            keys = secmod.derive_session_keys(master, hdr.lmu_id, hdr.svd_id, dek)
            if not secmod.integrity_matches(keys.ik, self._digest, image.integrity, image.blocks):
                raise IntegrityMismatch("stored integrity chain does not match the image blocks")
            # the chain covers tags only; opening each block covers the ciphertext
            for block in image.blocks:
                try:
                    self.stats.add(secmod.decrypt_record(dek, self._digest, block))
                except (AuthError, ParseError):
                    raise IntegrityMismatch(f"block {block.seq} does not authenticate") from None
            self._chain = image.integrity.chain_tag
        self.image = image
        self.keys = keys
        self.phase = Phase.CONNECTED

    # -- commands -------------------------------------------------------------

    def handle_command(self, cmd: Command) -> list[Action]:
        if isinstance(cmd, Status):
            return [self.status()]
        target = TRANSITIONS.get((self.phase, type(cmd)))
        if target is None or (isinstance(cmd, StartLogging) and cmd.sample_interval < 1):
            err = InvalidTransition(f"{type(cmd).__name__} not valid in phase {self.phase.value}")
            log.debug("%s: %s", self.config.ec_id.hex(), err)
            return [Rejected(type(cmd).__name__, self.phase, "InvalidTransition")]
        if isinstance(cmd, StartLogging):
            self.sample_interval = cmd.sample_interval
        if isinstance(cmd, Sleep):
            # a late answer to this request must not land inside the sleep
            self.outstanding = None
        self.phase = target
        return []

    def status(self) -> StatusReport:
        counter = self.image.integrity.update_counter if self.image is not None else 0
        return StatusReport(self.phase, self.seq, self.seq, counter)

    # -- run phase ------------------------------------------------------------

    def tick(self, now: int) -> list[Action]:
        self.now = now
        if self.phase is not Phase.LOGGING or now % self.sample_interval != 0:
            return []
        if self.outstanding is not None:
            return []
        self._next_req_id += 1
        self.outstanding = self._next_req_id
        return [SampleRequest(self.outstanding)]

    def on_sample(self, record: LogRecord, req_id: Optional[int] = None) -> list[Action]:
        """Seal and store one sample record.

        ``req_id`` (when given) must match the outstanding request.
        """
        if self.phase is not Phase.LOGGING:
            return [Rejected("sample", self.phase, "InvalidTransition")]
        if record.record_type is not RecordType.SAMPLE:
            return [Rejected("sample", self.phase, "NotASample")]
        if req_id is not None and req_id != self.outstanding:
            return [Rejected("sample", self.phase, "UnexpectedResponse")]
        self.outstanding = None
        try:
            self._append(record)
        except CapacityExceeded:
            return self._capacity_exhausted()
        return []

    def on_request_failed(self, req_id: int) -> None:
        if self.outstanding == req_id:
            self.outstanding = None

    def log_event(self, event_code: int, detail: int = 0, now: Optional[int] = None) -> bool:
        """Append an event record; returns False when not logging."""
        if self.phase is not Phase.LOGGING:
            return False
        record = LogRecord.of(self.now if now is None else now, Event(event_code, detail))
        try:
            self._append(record)
        except CapacityExceeded:
            self._capacity_exhausted()
            return False
        return True

    def _capacity_exhausted(self) -> list[Action]:
        image = self.image
        self.phase = Phase.CLOSING
        if image.block_count < image.header.capacity_blocks:
            self._append(LogRecord.of(self.now, Event(EVENT_CAPACITY_EXHAUSTED, image.block_count)))
        return [CapacityExhausted(image.block_count)]

    def _append(self, record: LogRecord, periodic: bool = True) -> None:
        image = self.image
        if image.block_count >= image.header.capacity_blocks:
            raise CapacityExceeded(f"image full ({image.header.capacity_blocks} blocks)")
        seq = image.block_count
        block = secmod.encrypt_record(self.keys, self._digest, seq, record, image.header.record_payload_max)
        append_block(image, block)
        self._chain = secmod.chain_extend(self.keys.ik, self._chain, block)
        self.trace.append((seq, record))
        self.stats.add(record)
        self.appends_since_integrity += 1
        if periodic and self.appends_since_integrity >= self.config.integrity_update_interval:
            self.update_integrity()

    def update_integrity(self) -> None:
        """Rewrite the integrity section so it covers every stored block."""
        image = self.image
        image.integrity = secmod.seal_integrity(
            self.keys.ik, image.block_count, self._chain, image.integrity.update_counter + 1,
        )
        self.appends_since_integrity = 0

    # -- closing phase --------------------------------------------------------

    def close(self, now: Optional[int] = None) -> None:
        """Append the session summary, finalize the chain and go to Closed.

        Raises CapacityExceeded when the summary does not fit; the image is
        still chain-finalized over the blocks it holds.
        """
        if self.phase not in (Phase.LOGGING, Phase.IDLE, Phase.CLOSING):
            raise InvalidTransition(f"close in phase {self.phase.value}")
        if now is not None:
            self.now = now
        meta = LogRecord.of(self.now, self.stats.summary())
        try:
            self._append(meta, periodic=False)
        finally:
            self.update_integrity()
            self.phase = Phase.CLOSED
            self.outstanding = None


def ec_connect(config: EcConfig, master: bytes, image: LmuImage, rng: secmod.RandomSource) -> EmbeddedController:
    ec = EmbeddedController(config)
    ec.connect(master, image, rng)
    return ec


def ec_close(ec: EmbeddedController, now: Optional[int] = None) -> LmuImage:
    ec.close(now)
    return ec.image

