"""Deterministic tick-based simulation of an MPU driving daisy-chained
controllers, each with its own battery pack (MED) and log memory (LMU).

One tick is one bus slot. Within a tick the order is fixed: scripted kills,
frame arrivals on every channel, node activity (MPU script, controller
clocks, scheduled MED events), then transmissions. Every random choice comes
from a named stream derived from the scenario seed, so a run is a pure
function of ``(config, seed, ticks)``.
"""

from __future__ import annotations

import json
import logging
import os
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import lmu_format
from ..controller import (
    CapacityExhausted,
    EcConfig,
    EmbeddedController,
    Phase,
    Rejected,
    SampleRequest,
    Sleep,
    StartLogging,
    Status,
    StatusReport,
    Stop,
    Wake,
)
from ..errors import BadConfig, CapacityExceeded, FrameError, UnknownLink
from ..records import EVENT_LINK_FAILURE, LogRecord, RecordType, record_json_line
from ..secmod import SvdCredential
from . import frames as fr
from .med import MedProfile, med_sample

log = logging.getLogger(__name__)

MAX_RETRIES = 3
PPM = 1_000_000
DEFAULT_PAYLOAD_MAX = 64

_COMMAND_CODES = {"start": fr.CMD_START, "stop": fr.CMD_STOP, "sleep": fr.CMD_SLEEP,
                  "wake": fr.CMD_WAKE, "status": fr.CMD_STATUS}
_PHASES = list(Phase)


def rng_stream(seed: int, name: str) -> random.Random:
    # str seeds are hashed with SHA-512, independent of PYTHONHASHSEED
    return random.Random(f"{seed}/{name}")


# -- configuration ------------------------------------------------------------

@dataclass
class EcSpec:
    ec_id: bytes
    address: int
    sample_interval: int = 4
    integrity_update_interval: int = 8
    capacity_blocks: int = 128
    record_payload_max: int = DEFAULT_PAYLOAD_MAX
    med: MedProfile = field(default_factory=MedProfile)

    @classmethod
    def from_dict(cls, data: dict) -> "EcSpec":
        data = dict(data)
        try:
            ec_id = bytes.fromhex(data.pop("ec_id_hex"))
        except (KeyError, ValueError) as exc:
            raise BadConfig(f"ec entry needs a valid ec_id_hex: {exc}") from None
        med = MedProfile.from_dict(data.pop("med", {}))
        try:
            return cls(ec_id=ec_id, med=med, **data)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None

    @property
    def med_address(self) -> int:
        return 0x80 | self.address


@dataclass
class FaultSpec:
    """Link fault. ``kind`` is corrupt, drop or delay.

    The fault fires either on the listed ``ticks`` or, per transmitted frame,
    with probability ``ppm`` parts per million.
    """

    kind: str
    link: str
    ppm: Optional[int] = None
    ticks: Optional[list[int]] = None
    delay_ticks: int = 0
    start_tick: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("corrupt", "drop", "delay"):
            raise BadConfig(f"unknown fault kind {self.kind!r}")
        if (self.ppm is None) == (self.ticks is None):
            raise BadConfig("fault needs exactly one of ppm or ticks")
        if self.ppm is not None and not 0 <= self.ppm <= PPM:
            raise BadConfig(f"ppm out of range: {self.ppm}")
        if self.kind == "delay" and self.delay_ticks < 1:
            raise BadConfig("delay fault needs delay_ticks >= 1")
        if self.ticks is not None:
            self.ticks = sorted(set(int(t) for t in self.ticks))

    def fires(self, tick: int, rng: random.Random) -> bool:
        if tick < self.start_tick:
            return False
        if self.ticks is not None:
            return tick in self.ticks
        if self.ppm == 0:
            return False
        return rng.randrange(PPM) < self.ppm

    @classmethod
    def from_dict(cls, data: dict) -> "FaultSpec":
        try:
            return cls(**data)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None


@dataclass
class ScenarioConfig:
    ecs: list[EcSpec]
    seed: int = 0
    ticks: int = 256
    stop_margin_ticks: int = 32
    faults: list[FaultSpec] = field(default_factory=list)
    kill: list[dict] = field(default_factory=list)
    commands: list[dict] = field(default_factory=list)
    topology: str = "daisy"

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        try:
            ecs = [EcSpec.from_dict(e) for e in data.pop("ecs")]
        except KeyError:
            raise BadConfig("scenario needs an 'ecs' list") from None
        faults = [FaultSpec.from_dict(f) for f in data.pop("faults", [])]
        try:
            return cls(ecs=ecs, faults=faults, **data)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise BadConfig("config must be a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if not self.ecs:
            raise BadConfig("need at least one EC")
        addresses = [e.address for e in self.ecs]
        if len(set(addresses)) != len(addresses):
            raise BadConfig(f"duplicate EC addresses: {addresses}")
        if any(not 1 <= a <= 0x7F for a in addresses):
            raise BadConfig("EC addresses must be in 1..127")
        ids = [e.ec_id for e in self.ecs]
        if any(len(i) != 16 for i in ids) or len(set(ids)) != len(ids):
            raise BadConfig("ec ids must be unique 16-byte values")
        for e in self.ecs:
            if e.sample_interval < 1 or e.integrity_update_interval < 1:
                raise BadConfig("sample and integrity intervals must be >= 1")
        if self.ticks < 1:
            raise BadConfig("ticks must be >= 1")
        if not 0 <= self.stop_margin_ticks < self.ticks:
            raise BadConfig("stop_margin_ticks must be in [0, ticks)")
        if self.topology not in ("daisy", "flat"):
            raise BadConfig(f"unknown topology {self.topology!r}")
        for k in self.kill:
            if k.get("address") not in addresses or "tick" not in k:
                raise BadConfig(f"bad kill entry {k}")
        for c in self.commands:
            if c.get("command") not in _COMMAND_CODES or "tick" not in c:
                raise BadConfig(f"bad scripted command {c}")


# -- bus ----------------------------------------------------------------------

@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    crc_failures: int = 0
    dropped: int = 0
    link_failures: int = 0


class Channel:
    """One direction of a point-to-point link, stop-and-wait with retries."""

    def __init__(self, link: "Link", sender: str, receiver: str) -> None:
        self.link = link
        self.sender = sender
        self.receiver = receiver
        self.queue: deque[fr.Frame] = deque()
        self.current: Optional[fr.Frame] = None
        self.failures = 0
        self.next_send: Optional[int] = None
        self.arrival: Optional[tuple[int, Optional[bytes]]] = None

    def send(self, frame: fr.Frame) -> None:
        self.queue.append(frame)


class Link:
    def __init__(self, name: str, a: str, b: str, seed: int) -> None:
        self.name = name
        self.a = a
        self.b = b
        self.faults: list[FaultSpec] = []
        self.rng = rng_stream(seed, f"link:{name}")
        self.stats = LinkStats()
        self.forward = Channel(self, a, b)
        self.backward = Channel(self, b, a)

    def channel_from(self, node: str) -> Channel:
        return self.forward if node == self.a else self.backward


# -- nodes --------------------------------------------------------------------

@dataclass
class _EcNode:
    spec: EcSpec
    ec: EmbeddedController
    credential: SvdCredential
    up: Link
    down: Optional[Link] = None
    alive: bool = True
    close_error: Optional[str] = None

    @property
    def name(self) -> str:
        return f"ec:{self.spec.address}"


@dataclass
class SimResult:
    images: dict[int, bytes]
    credentials: dict[int, bytes]
    ec_ids: dict[int, bytes]
    oracle: dict[int, list[tuple[int, LogRecord]]]
    events: list[dict]
    link_stats: dict[str, LinkStats]
    ticks: int

    def oracle_lines(self, address: Optional[int] = None) -> list[str]:
        lines = []
        for addr in sorted(self.oracle):
            if address is not None and addr != address:
                continue
            ec_id = self.ec_ids[addr]
            lines.extend(record_json_line(rec, ec_id=ec_id, seq=seq) for seq, rec in self.oracle[addr])
        return lines

    def write(self, out_dir: str | os.PathLike) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for addr in sorted(self.images):
            for suffix, blob in ((".lmu", self.images[addr]), (".svd", self.credentials[addr])):
                path = out / f"ec{addr:02d}{suffix}"
                path.write_bytes(blob)
                written.append(path)
        oracle = out / "oracle.jsonl"
        oracle.write_text("".join(line + "\n" for line in self.oracle_lines()))
        events = out / "events.jsonl"
        events.write_text("".join(json.dumps(e, separators=(",", ":")) + "\n" for e in self.events))
        return written + [oracle, events]


class Sim:
    def __init__(self, config: ScenarioConfig, seed: int) -> None:
        config.validate()
        self.config = config
        self.seed = seed
        self.now = 0
        self.events: list[dict] = []
        self.links: dict[str, Link] = {}
        self.nodes: dict[int, _EcNode] = {}
        self._meds: dict[int, tuple[EcSpec, random.Random]] = {}
        self._med_events: dict[int, list[tuple[int, int]]] = {}
        self._build()
        for fault in config.faults:
            self.inject_fault(fault, start_tick=fault.start_tick)

    # topology MPU - EC1 - ... - ECn, each EC also linked to its MED
    def _build(self) -> None:
        prev = "mpu"
        for spec in self.config.ecs:
            name = f"ec:{spec.address}"
            up_peer = prev if self.config.topology == "daisy" else "mpu"
            up = self._add_link(f"chain:{spec.address}", up_peer, name)
            if up_peer != "mpu":
                self.nodes[int(up_peer.split(":")[1])].down = up
            self._add_link(f"med:{spec.address}", name, f"med:{spec.address}")

            rng = rng_stream(self.seed, name)
            lmu_id, med_id, svd_id = rng.randbytes(16), rng.randbytes(16), rng.randbytes(16)
            master = rng.randbytes(32)
            image = lmu_format.create_image(
                lmu_id=lmu_id, ec_id=spec.ec_id, med_id=med_id, svd_id=svd_id,
                capacity_blocks=spec.capacity_blocks, record_payload_max=spec.record_payload_max,
                created_at=0,
            )
            ec = EmbeddedController(EcConfig(spec.ec_id, spec.integrity_update_interval))
            ec.connect(master, image, rng)
            cred = SvdCredential(svd_id=svd_id, lmu_id=lmu_id, master=master)
            self.nodes[spec.address] = _EcNode(spec, ec, cred, up)
            self._meds[spec.address] = (spec, rng_stream(self.seed, f"med:{spec.address}"))
            for tick, code in spec.med.fault_schedule:
                self._med_events.setdefault(tick, []).append((spec.address, code))
            self._event("connect", address=spec.address, lmu_id=lmu_id.hex())
            prev = name

    def _add_link(self, name: str, a: str, b: str) -> Link:
        link = Link(name, a, b, self.seed)
        self.links[name] = link
        return link

    def _event(self, kind: str, **fields) -> None:
        self.events.append({"tick": self.now, "kind": kind, **fields})

    # -- faults ---------------------------------------------------------------

    def inject_fault(self, spec: FaultSpec, start_tick: Optional[int] = None) -> "Sim":
        link = self.links.get(spec.link)
        if link is None:
            raise UnknownLink(f"no link named {spec.link!r}; have {sorted(self.links)}")
        spec.start_tick = self.now if start_tick is None else start_tick
        link.faults.append(spec)
        return self

    def _transmit(self, ch: Channel) -> None:
        link, t = ch.link, self.now
        data = ch.current.encode()
        dropped, delay = False, 0
        for fault in link.faults:
            if not fault.fires(t, link.rng):
                continue
            if fault.kind == "drop":
                dropped = True
            elif fault.kind == "corrupt":
                bit = link.rng.randrange(len(data) * 8)
                buf = bytearray(data)
                buf[bit // 8] ^= 1 << (bit % 8)
                data = bytes(buf)
            else:
                delay += fault.delay_ticks
        link.stats.sent += 1
        ch.arrival = (t + 1 + delay, None if dropped else data)
        ch.next_send = None

    # -- main loop ------------------------------------------------------------

    def _channels(self):
        for link in self.links.values():
            yield link.forward
            yield link.backward

    def step(self) -> None:
        t = self.now
        for k in self.config.kill:
            if k["tick"] == t and self.nodes[k["address"]].alive:
                self.nodes[k["address"]].alive = False
                self._event("ec_killed", address=k["address"])

        for ch in self._channels():
            if ch.arrival is not None and ch.arrival[0] == t:
                self._resolve(ch)

        self._mpu_script(t)
        for addr, node in self.nodes.items():
            if node.alive:
                self._apply(node, node.ec.tick(t))
        for addr, code in self._med_events.get(t, []):
            spec = self._meds[addr][0]
            self.links[f"med:{addr}"].channel_from(f"med:{addr}").send(
                fr.Frame(dest=addr, src=spec.med_address, payload=fr.med_event_msg(code, t)))

        for ch in self._channels():
            if ch.current is None and ch.queue:
                ch.current = ch.queue.popleft()
                ch.failures = 0
                ch.next_send = t
            if ch.current is not None and ch.next_send == t:
                self._transmit(ch)
        self.now += 1

    def _resolve(self, ch: Channel) -> None:
        link = ch.link
        data = ch.arrival[1]
        ch.arrival = None
        frame = None
        if data is None:
            link.stats.dropped += 1
        else:
            try:
                frame = fr.decode_frame(data)
            except FrameError:
                link.stats.crc_failures += 1
        if frame is not None:
            link.stats.delivered += 1
            ch.current = None
            self._deliver(ch, frame)
            return
        ch.failures += 1
        if ch.failures <= MAX_RETRIES:
            ch.next_send = self.now + 1
            return
        failed, ch.current = ch.current, None
        link.stats.link_failures += 1
        self._event("link_failure", link=link.name, sender=ch.sender, dest=failed.dest,
                    msg=failed.payload[0], attempts=ch.failures)
        self._link_failed(ch, failed)

    def _link_failed(self, ch: Channel, frame: fr.Frame) -> None:
        # on a MED link the EC is bus master and notices either direction;
        # on the chain only the sending EC knows its frame was lost
        ec_end = ch.link.a if ch.link.name.startswith("med:") else ch.sender
        if not ec_end.startswith("ec:"):
            return
        node = self.nodes[int(ec_end.split(":")[1])]
        if not node.alive:
            return
        if frame.payload[0] in (fr.MSG_SAMPLE_REQ, fr.MSG_SAMPLE_RESP):
            node.ec.on_request_failed(fr.parse_request_id(frame.payload))
        detail = frame.dest | (frame.payload[0] << 8)
        node.ec.log_event(EVENT_LINK_FAILURE, detail, now=self.now)
        self._maybe_close(node)

    def _deliver(self, ch: Channel, frame: fr.Frame) -> None:
        receiver = ch.receiver
        if receiver == "mpu":
            if frame.payload[0] == fr.MSG_STATUS:
                phase, seq, counter = fr.parse_status_msg(frame.payload)
                self._event("status", address=frame.src, phase=_PHASES[phase].value, seq=seq,
                            update_counter=counter, hops=frame.hop_count)
            return
        if receiver.startswith("med:"):
            addr = int(receiver.split(":")[1])
            if frame.payload[0] == fr.MSG_SAMPLE_REQ:
                spec, rng = self._meds[addr]
                sample = med_sample(spec.med, self.now, rng)
                req_id = fr.parse_request_id(frame.payload)
                ch.link.channel_from(receiver).send(fr.Frame(
                    dest=addr, src=spec.med_address, payload=fr.sample_response_msg(req_id, sample.pack())))
            return

        node = self.nodes[int(receiver.split(":")[1])]
        addr = node.spec.address
        if ch.link.name.startswith("med:"):
            if node.alive:
                self._from_med(node, frame)
            return
        if ch.link is node.up:
            # downward traffic: consume if addressed here, relay the rest
            if frame.dest in (addr, fr.BROADCAST) and node.alive:
                self._command(node, frame)
            if frame.dest != addr and node.down is not None:
                node.down.channel_from(receiver).send(frame.hopped())
        else:
            node.up.channel_from(receiver).send(frame.hopped())

    def _from_med(self, node: _EcNode, frame: fr.Frame) -> None:
        kind = frame.payload[0]
        if kind == fr.MSG_SAMPLE_RESP:
            req_id = fr.parse_request_id(frame.payload)
            record = LogRecord(self.now, RecordType.SAMPLE, bytes(frame.payload[5:]))
            self._apply(node, node.ec.on_sample(record, req_id))
        elif kind == fr.MSG_MED_EVENT:
            code, detail = fr.parse_med_event_msg(frame.payload)
            node.ec.log_event(code, detail, now=self.now)
            self._maybe_close(node)

    def _command(self, node: _EcNode, frame: fr.Frame) -> None:
        if frame.payload[0] != fr.MSG_COMMAND:
            return
        code, arg = fr.parse_command_msg(frame.payload)
        cmd = {fr.CMD_START: lambda: StartLogging(arg), fr.CMD_STOP: Stop, fr.CMD_SLEEP: Sleep,
               fr.CMD_WAKE: Wake, fr.CMD_STATUS: Status}[code]()
        node.ec.now = self.now
        self._apply(node, node.ec.handle_command(cmd))

    def _apply(self, node: _EcNode, actions: list) -> None:
        addr = node.spec.address
        for action in actions:
            if isinstance(action, SampleRequest):
                self.links[f"med:{addr}"].channel_from(node.name).send(fr.Frame(
                    dest=node.spec.med_address, src=addr, payload=fr.sample_request_msg(action.req_id)))
            elif isinstance(action, StatusReport):
                node.up.channel_from(node.name).send(fr.Frame(
                    dest=fr.MPU_ADDR, src=addr,
                    payload=fr.status_msg(_PHASES.index(action.phase), action.seq, action.update_counter)))
            elif isinstance(action, Rejected):
                self._event("rejected", address=addr, what=action.what, phase=action.phase.value,
                            reason=action.reason)
            elif isinstance(action, CapacityExhausted):
                self._event("capacity_exhausted", address=addr, block_count=action.block_count)
        self._maybe_close(node)

    def _maybe_close(self, node: _EcNode) -> None:
        if node.ec.phase is not Phase.CLOSING:
            return
        try:
            node.ec.close(self.now)
            meta_written = True
        except CapacityExceeded as exc:
            node.close_error = str(exc)
            meta_written = False
        self._event("session_closed", address=node.spec.address, block_count=node.ec.seq,
                    meta_written=meta_written)

    def _mpu_script(self, t: int) -> None:
        sends: list[tuple[int, bytes]] = []
        if t == 0:
            sends += [(e.address, fr.command_msg(fr.CMD_START, e.sample_interval)) for e in self.config.ecs]
        if t == self.config.ticks - self.config.stop_margin_ticks:
            sends += [(e.address, fr.command_msg(fr.CMD_STOP)) for e in self.config.ecs]
        for c in self.config.commands:
            if c["tick"] == t:
                sends.append((c.get("address", fr.BROADCAST),
                              fr.command_msg(_COMMAND_CODES[c["command"]], c.get("arg", 0))))
        for dest, payload in sends:
            for link in self._mpu_links(dest):
                link.channel_from("mpu").send(fr.Frame(dest=dest, src=fr.MPU_ADDR, payload=payload))

    def _mpu_links(self, dest: int) -> list[Link]:
        if self.config.topology == "daisy":
            return [self.nodes[self.config.ecs[0].address].up]
        if dest == fr.BROADCAST:
            return [n.up for n in self.nodes.values()]
        return [self.nodes[dest].up] if dest in self.nodes else []

    def result(self) -> SimResult:
        return SimResult(
            images={a: lmu_format.serialize_image(n.ec.image) for a, n in self.nodes.items()},
            credentials={a: n.credential.to_bytes() for a, n in self.nodes.items()},
            ec_ids={a: n.spec.ec_id for a, n in self.nodes.items()},
            oracle={a: list(n.ec.trace) for a, n in self.nodes.items()},
            events=list(self.events),
            link_stats={name: link.stats for name, link in self.links.items()},
            ticks=self.now,
        )

    def run(self, ticks: Optional[int] = None) -> SimResult:
        remaining = self.config.ticks - self.now if ticks is None else ticks
        if remaining < 1 and ticks is not None:
            raise ValueError("ticks must be >= 1")
        for _ in range(max(remaining, 0)):
            self.step()
        return self.result()


def build_sim(config: ScenarioConfig, seed: Optional[int] = None) -> Sim:
    return Sim(config, config.seed if seed is None else seed)


def run(sim: Sim, ticks: Optional[int] = None) -> SimResult:
    return sim.run(ticks)


def inject_fault(sim: Sim, spec: FaultSpec) -> Sim:
    return sim.inject_fault(spec)


def demo_config(n_ecs: int = 4, ticks: int = 256, seed: int = 7) -> ScenarioConfig:
    ecs = [
        EcSpec(
            ec_id=bytes([0xEC, i]) + bytes(14),
            address=i,
            sample_interval=4,
            capacity_blocks=96,
            med=MedProfile(initial_voltage_mv=4150 - 20 * i, temp_base_centi_c=2400 + 50 * i,
                           current_noise_ma=25, fault_schedule=[(100 + 10 * i, 0x0100)]),
        )
        for i in range(1, n_ecs + 1)
    ]
    return ScenarioConfig(ecs=ecs, seed=seed, ticks=ticks, stop_margin_ticks=32)


def config_to_dict(config: ScenarioConfig) -> dict:
    return {
        "seed": config.seed,
        "ticks": config.ticks,
        "stop_margin_ticks": config.stop_margin_ticks,
        "topology": config.topology,
        "ecs": [
            {
                "ec_id_hex": e.ec_id.hex(),
                "address": e.address,
                "sample_interval": e.sample_interval,
                "integrity_update_interval": e.integrity_update_interval,
                "capacity_blocks": e.capacity_blocks,
                "record_payload_max": e.record_payload_max,
                "med": {**vars(e.med), "fault_schedule": [list(x) for x in e.med.fault_schedule]},
            }
            for e in config.ecs
        ],
        "faults": [{k: v for k, v in vars(f).items() if v is not None} for f in config.faults],
        "kill": list(config.kill),
        "commands": list(config.commands),
    }
