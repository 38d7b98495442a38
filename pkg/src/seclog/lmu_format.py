"""Byte-exact container for a logging memory unit (LMU).

Layout, all integers little-endian::

    offset 0    header            96 bytes
    offset 96   key section       64 bytes
    offset 160  integrity section 64 bytes
    offset 224  block slots       capacity_blocks * (28 + record_payload_max)

Each slot is ``seq u64 | payload_len u32 | ciphertext (padded) | tag[16]``.
Unused slots and ciphertext padding are all-zero, and the parser insists on
it, so every byte of the image is either authenticated or structurally
checked.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .errors import (
    BadMagic,
    BadParams,
    BadVersion,
    CapacityExceeded,
    InvariantViolation,
    SeqMismatch,
    Truncated,
)

MAGIC = b"SELM"
VERSION = 1
ID_LEN = 16
TAG_LEN = 16
DIGEST_LEN = 32

HEADER_SIZE = 96
KEY_SECTION_SIZE = 64
INTEGRITY_SIZE = 64
BLOCKS_OFFSET = HEADER_SIZE + KEY_SECTION_SIZE + INTEGRITY_SIZE  # 224
KEY_SECTION_OFFSET = HEADER_SIZE
INTEGRITY_OFFSET = HEADER_SIZE + KEY_SECTION_SIZE
SLOT_OVERHEAD = 8 + 4 + TAG_LEN

MIN_PAYLOAD_MAX = 16
MAX_PAYLOAD_MAX = 4096

_HEADER = struct.Struct("<4sHH16s16s16s16sQII8s")
_KEY_SECTION = struct.Struct("<12s32s16s4s")
_INTEGRITY = struct.Struct("<Q32sQ16s")
_SLOT_HEAD = struct.Struct("<QI")

assert _HEADER.size == HEADER_SIZE
assert _KEY_SECTION.size == KEY_SECTION_SIZE
assert _INTEGRITY.size == INTEGRITY_SIZE


@dataclass(frozen=True)
class LmuHeader:
    lmu_id: bytes
    ec_id: bytes
    med_id: bytes
    svd_id: bytes
    created_at: int
    capacity_blocks: int
    record_payload_max: int
    version: int = VERSION
    flags: int = 0

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            self.version,
            self.flags,
            self.lmu_id,
            self.ec_id,
            self.med_id,
            self.svd_id,
            self.created_at,
            self.capacity_blocks,
            self.record_payload_max,
            bytes(8),
        )

    @property
    def slot_size(self) -> int:
        return SLOT_OVERHEAD + self.record_payload_max

    @property
    def image_size(self) -> int:
        return BLOCKS_OFFSET + self.capacity_blocks * self.slot_size


@dataclass(frozen=True)
class KeySection:
    wrap_nonce: bytes = bytes(12)
    wrapped_dek: bytes = bytes(32)
    wrap_tag: bytes = bytes(TAG_LEN)

    def pack(self) -> bytes:
        return _KEY_SECTION.pack(self.wrap_nonce, self.wrapped_dek, self.wrap_tag, bytes(4))


@dataclass
class IntegritySection:
    """Unencrypted integrity block, rewritten in place as the log grows.

    ``section_tag`` occupies the trailing 16 bytes and authenticates the
    other three fields under the integrity key (see ``secmod.section_tag``).
    """

    block_count: int = 0
    chain_tag: bytes = bytes(DIGEST_LEN)
    update_counter: int = 0
    section_tag: bytes = bytes(16)

    def pack(self) -> bytes:
        return _INTEGRITY.pack(self.block_count, self.chain_tag, self.update_counter, self.section_tag)


@dataclass(frozen=True)
class EncryptedBlock:
    seq: int
    ciphertext: bytes
    tag: bytes

    @property
    def payload_len(self) -> int:
        return len(self.ciphertext)

    def pack(self, record_payload_max: int) -> bytes:
        pad = record_payload_max - len(self.ciphertext)
        return _SLOT_HEAD.pack(self.seq, len(self.ciphertext)) + self.ciphertext + bytes(pad) + self.tag


@dataclass
class LmuImage:
    header: LmuHeader
    key_section: KeySection = field(default_factory=KeySection)
    integrity: IntegritySection = field(default_factory=IntegritySection)
    blocks: list[EncryptedBlock] = field(default_factory=list)

    @property
    def block_count(self) -> int:
        return self.integrity.block_count


def block_offset(header: LmuHeader, index: int) -> int:
    return BLOCKS_OFFSET + index * header.slot_size


def _check_id(name: str, value: bytes) -> None:
    if len(value) != ID_LEN:
        raise BadParams(f"{name} must be {ID_LEN} bytes, got {len(value)}")


def create_image(
    *,
    lmu_id: bytes,
    ec_id: bytes,
    med_id: bytes,
    svd_id: bytes,
    capacity_blocks: int,
    record_payload_max: int,
    created_at: int = 0,
) -> LmuImage:
    """Return an empty image with zeroed key and integrity sections."""
    for name, value in (("lmu_id", lmu_id), ("ec_id", ec_id), ("med_id", med_id), ("svd_id", svd_id)):
        _check_id(name, value)
    if not 1 <= capacity_blocks <= 0xFFFFFFFF:
        raise BadParams(f"capacity_blocks out of range: {capacity_blocks}")
    if not MIN_PAYLOAD_MAX <= record_payload_max <= MAX_PAYLOAD_MAX:
        raise BadParams(f"record_payload_max out of range: {record_payload_max}")
    if not 0 <= created_at < 2**64:
        raise BadParams(f"created_at out of range: {created_at}")
    header = LmuHeader(
        lmu_id=bytes(lmu_id),
        ec_id=bytes(ec_id),
        med_id=bytes(med_id),
        svd_id=bytes(svd_id),
        created_at=created_at,
        capacity_blocks=capacity_blocks,
        record_payload_max=record_payload_max,
    )
    return LmuImage(header=header)


def serialize_image(image: LmuImage) -> bytes:
    header = image.header
    out = bytearray(header.image_size)
    out[0:HEADER_SIZE] = header.pack()
    out[KEY_SECTION_OFFSET:INTEGRITY_OFFSET] = image.key_section.pack()
    out[INTEGRITY_OFFSET:BLOCKS_OFFSET] = image.integrity.pack()
    for i, block in enumerate(image.blocks):
        start = block_offset(header, i)
        out[start:start + header.slot_size] = block.pack(header.record_payload_max)
    return bytes(out)


def parse_header(data: bytes) -> LmuHeader:
    if len(data) < 4:
        raise Truncated(f"need at least 4 bytes, got {len(data)}")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:4])!r}")
    if len(data) < HEADER_SIZE:
        raise Truncated(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    (_, version, flags, lmu_id, ec_id, med_id, svd_id,
     created_at, capacity, payload_max, reserved) = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if flags != 0:
        raise InvariantViolation(f"reserved flags set: {flags:#06x}")
    if reserved != bytes(8):
        raise InvariantViolation("reserved header bytes are not zero")
    if capacity < 1:
        raise InvariantViolation("capacity_blocks must be >= 1")
    if not MIN_PAYLOAD_MAX <= payload_max <= MAX_PAYLOAD_MAX:
        raise InvariantViolation(f"record_payload_max out of range: {payload_max}")
    return LmuHeader(
        lmu_id=lmu_id,
        ec_id=ec_id,
        med_id=med_id,
        svd_id=svd_id,
        created_at=created_at,
        capacity_blocks=capacity,
        record_payload_max=payload_max,
        version=version,
        flags=flags,
    )


def parse_image(data: bytes) -> LmuImage:
    """Decode ``data`` or raise a :class:`~seclog.errors.ParseError` subclass."""
    data = bytes(data)
    header = parse_header(data)
    size = header.image_size
    if len(data) < size:
        raise Truncated(f"image needs {size} bytes, got {len(data)}")
    if len(data) > size:
        raise InvariantViolation(f"{len(data) - size} trailing bytes after image")

    wrap_nonce, wrapped_dek, wrap_tag, key_pad = _KEY_SECTION.unpack_from(data, KEY_SECTION_OFFSET)
    if key_pad != bytes(4):
        raise InvariantViolation("key section padding is not zero")
    block_count, chain_tag, update_counter, section_tag = _INTEGRITY.unpack_from(data, INTEGRITY_OFFSET)
    if block_count > header.capacity_blocks:
        raise InvariantViolation(f"block_count {block_count} exceeds capacity {header.capacity_blocks}")

    payload_max = header.record_payload_max
    blocks = []
    for i in range(header.capacity_blocks):
        start = block_offset(header, i)
        slot = data[start:start + header.slot_size]
        if i >= block_count:
            if any(slot):
                raise InvariantViolation(f"unused slot {i} is not zeroed")
            continue
        seq, payload_len = _SLOT_HEAD.unpack_from(slot, 0)
        if seq != i:
            raise InvariantViolation(f"slot {i} carries seq {seq}")
        if payload_len > payload_max:
            raise InvariantViolation(f"slot {i} payload_len {payload_len} > {payload_max}")
        body = slot[12:12 + payload_max]
        if any(body[payload_len:]):
            raise InvariantViolation(f"slot {i} padding is not zero")
        blocks.append(EncryptedBlock(seq=seq, ciphertext=body[:payload_len], tag=slot[12 + payload_max:]))

    return LmuImage(
        header=header,
        key_section=KeySection(wrap_nonce, wrapped_dek, wrap_tag),
        integrity=IntegritySection(block_count, chain_tag, update_counter, section_tag),
        blocks=blocks,
    )


def append_block(image: LmuImage, block: EncryptedBlock) -> int:
    """Store ``block`` in the next slot and return its seq.

    The chain tag is left alone; refreshing it is the caller's job.
    """
    count = image.integrity.block_count
    if count >= image.header.capacity_blocks:
        raise CapacityExceeded(f"image full ({image.header.capacity_blocks} blocks)")
    if block.seq != count:
        raise SeqMismatch(f"block seq {block.seq} != next seq {count}")
    if block.payload_len > image.header.record_payload_max:
        raise InvariantViolation(f"ciphertext of {block.payload_len} bytes does not fit the slot")
    if len(block.tag) != TAG_LEN:
        raise InvariantViolation("tag must be 16 bytes")
    image.blocks.append(block)
    image.integrity.block_count = count + 1
    return count


def header_digest(header: LmuHeader) -> bytes:
    return hashlib.sha256(header.pack()).digest()
