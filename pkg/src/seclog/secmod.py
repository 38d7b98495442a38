"""Security module: AEAD sealing of records, key derivation and wrapping,
the integrity chain, and symmetric challenge/response for the SVD.

Primitive suite (pinned by known-answer tests):

* AEAD:  AES-256-GCM, 12-byte nonce, 16-byte tag
* hash:  SHA-256
* MAC:   HMAC-SHA-256
* KDF:   HKDF-SHA-256 (extract-then-expand, empty salt)

Random sources are always passed in explicitly. Anything with a
``randbytes(n)`` method works: ``random.Random`` for reproducible
simulation, ``random.SystemRandom`` otherwise.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterable, Protocol

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthError, BadCredential, RecordTooLarge
from .lmu_format import EncryptedBlock, IntegritySection, KeySection
from .records import LogRecord, parse_record

KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
CHALLENGE_LEN = 16

LABEL_KEK = b"lmu-kek"
LABEL_CHAIN = b"log-chain"
LABEL_AUTH = b"svd-auth"

SVD_MAGIC = b"SVD1"
SVD_FILE_SIZE = 4 + 16 + 16 + KEY_LEN

_U64 = struct.Struct("<Q")


class RandomSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


# -- primitives ---------------------------------------------------------------

def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def hkdf_sha256(ikm: bytes, salt: bytes | None, info: bytes, length: int) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def kdf_derive(master: bytes, label: bytes, context: bytes) -> bytes:
    """Derive a 32-byte subkey bound to ``label`` and ``context``."""
    if not 1 <= len(label) <= 16:
        raise ValueError("label must be 1..16 bytes")
    return hkdf_sha256(master, None, label + context, KEY_LEN)


def aead_seal(key: bytes, nonce: bytes, aad: bytes, plaintext: bytes) -> tuple[bytes, bytes]:
    sealed = AESGCM(key).encrypt(nonce, plaintext, aad)
    return sealed[:-TAG_LEN], sealed[-TAG_LEN:]


def aead_open(key: bytes, nonce: bytes, aad: bytes, ciphertext: bytes, tag: bytes) -> bytes:
    if len(tag) != TAG_LEN or len(nonce) != NONCE_LEN:
        raise AuthError()
    try:
        return AESGCM(key).decrypt(nonce, ciphertext + tag, aad)
    except InvalidTag:
        raise AuthError() from None


# -- keys ---------------------------------------------------------------------

@dataclass(frozen=True)
class SessionKeys:
    dek: bytes
    kek: bytes
    ik: bytes
    ak: bytes


def derive_session_keys(master: bytes, lmu_id: bytes, svd_id: bytes, dek: bytes) -> SessionKeys:
    return SessionKeys(
        dek=dek,
        kek=kdf_derive(master, LABEL_KEK, lmu_id),
        ik=kdf_derive(master, LABEL_CHAIN, lmu_id),
        ak=kdf_derive(master, LABEL_AUTH, svd_id),
    )


def wrap_dek(kek: bytes, dek: bytes, header_digest: bytes, rng: RandomSource) -> KeySection:
    nonce = rng.randbytes(NONCE_LEN)
    wrapped, tag = aead_seal(kek, nonce, header_digest, dek)
    return KeySection(wrap_nonce=nonce, wrapped_dek=wrapped, wrap_tag=tag)


def unwrap_dek(kek: bytes, key_section: KeySection, header_digest: bytes) -> bytes:
    return aead_open(kek, key_section.wrap_nonce, header_digest, key_section.wrapped_dek, key_section.wrap_tag)


# -- records ------------------------------------------------------------------

def block_nonce(seq: int) -> bytes:
    return bytes(4) + _U64.pack(seq)


def block_aad(header_digest: bytes, seq: int) -> bytes:
    return header_digest + _U64.pack(seq)


def encrypt_record(
    keys: SessionKeys,
    header_digest: bytes,
    seq: int,
    record: LogRecord,
    record_payload_max: int,
) -> EncryptedBlock:
    plaintext = record.pack()
    if len(plaintext) > record_payload_max:
        raise RecordTooLarge(f"record of {len(plaintext)} bytes exceeds slot payload {record_payload_max}")
    ct, tag = aead_seal(keys.dek, block_nonce(seq), block_aad(header_digest, seq), plaintext)
    return EncryptedBlock(seq=seq, ciphertext=ct, tag=tag)


def decrypt_record(dek: bytes, header_digest: bytes, block: EncryptedBlock) -> LogRecord:
    plaintext = aead_open(
        dek, block_nonce(block.seq), block_aad(header_digest, block.seq), block.ciphertext, block.tag,
    )
    return parse_record(plaintext)


# -- integrity chain ----------------------------------------------------------

def chain_genesis(ik: bytes, header_digest: bytes) -> bytes:
    return mac(ik, header_digest)


def chain_extend(ik: bytes, chain_tag: bytes, block: EncryptedBlock) -> bytes:
    return mac(ik, chain_tag + _U64.pack(block.seq) + block.tag)


def chain_over(ik: bytes, header_digest: bytes, blocks: Iterable[EncryptedBlock]) -> bytes:
    tag = chain_genesis(ik, header_digest)
    for block in blocks:
        tag = chain_extend(ik, tag, block)
    return tag


def section_tag(ik: bytes, block_count: int, chain_tag: bytes, update_counter: int) -> bytes:
    """Truncated MAC over the integrity section's own fields."""
    return mac(ik, b"integrity" + _U64.pack(block_count) + chain_tag + _U64.pack(update_counter))[:16]


def seal_integrity(ik: bytes, block_count: int, chain_tag: bytes, update_counter: int) -> IntegritySection:
    return IntegritySection(
        block_count=block_count,
        chain_tag=chain_tag,
        update_counter=update_counter,
        section_tag=section_tag(ik, block_count, chain_tag, update_counter),
    )


def integrity_matches(ik: bytes, header_digest: bytes, integrity: IntegritySection,
                      blocks: list[EncryptedBlock]) -> bool:
    """Full chain recompute plus section tag check, both constant-time compared."""
    if len(blocks) != integrity.block_count:
        return False
    expected_chain = chain_over(ik, header_digest, blocks)
    expected_tag = section_tag(ik, integrity.block_count, integrity.chain_tag, integrity.update_counter)
    chain_ok = hmac.compare_digest(expected_chain, integrity.chain_tag)
    tag_ok = hmac.compare_digest(expected_tag, integrity.section_tag)
    return chain_ok and tag_ok


# -- source verification device -----------------------------------------------

@dataclass(frozen=True)
class SvdCredential:
    """Identity plus master secret of the device bound to one LMU.

    The simulator keeps this in a plaintext file; a real SVD would be a
    secure element that never releases the secret.
    """

    svd_id: bytes
    lmu_id: bytes
    master: bytes

    def to_bytes(self) -> bytes:
        return SVD_MAGIC + self.svd_id + self.lmu_id + self.master

    @classmethod
    def from_bytes(cls, data: bytes) -> "SvdCredential":
        if len(data) != SVD_FILE_SIZE:
            raise BadCredential(f"credential must be {SVD_FILE_SIZE} bytes, got {len(data)}")
        if data[:4] != SVD_MAGIC:
            raise BadCredential("bad credential magic")
        return cls(svd_id=bytes(data[4:20]), lmu_id=bytes(data[20:36]), master=bytes(data[36:68]))


@dataclass(frozen=True)
class Challenge:
    nonce: bytes


@dataclass(frozen=True)
class AuthResponse:
    mac: bytes


def new_challenge(rng: RandomSource) -> Challenge:
    return Challenge(rng.randbytes(CHALLENGE_LEN))


def _auth_mac(ak: bytes, challenge: Challenge, svd_id: bytes, header_digest: bytes) -> bytes:
    return mac(ak, challenge.nonce + svd_id + header_digest)


def svd_respond(cred: SvdCredential, challenge: Challenge, header_digest: bytes) -> AuthResponse:
    ak = kdf_derive(cred.master, LABEL_AUTH, cred.svd_id)
    return AuthResponse(_auth_mac(ak, challenge, cred.svd_id, header_digest))


def verify_response(ak: bytes, challenge: Challenge, response: AuthResponse,
                    svd_id: bytes, header_digest: bytes) -> bool:
    return hmac.compare_digest(_auth_mac(ak, challenge, svd_id, header_digest), response.mac)
