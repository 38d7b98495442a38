"""Verification of an LMU and its SVD after moving them to a new platform.

The new platform trusts the image only after every stage passes, in this
order: parse, identity binding, SVD challenge/response, DEK unwrap, full
chain recompute, and authenticated decryption of every block. The first
failing stage names the rejection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import secmod
from .errors import AuthError, ExportRefused, ParseError
from .lmu_format import LmuImage, header_digest, parse_image, serialize_image
from .records import LogRecord
from .secmod import SvdCredential


class Verdict(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


class RejectReason(str, Enum):
    AUTH_FAILURE = "AuthFailure"
    KEY_UNWRAP_FAILURE = "KeyUnwrapFailure"
    INTEGRITY_MISMATCH = "IntegrityMismatch"
    HEADER_MISMATCH = "HeaderMismatch"
    PARSE_ERROR = "ParseError"


@dataclass
class VerificationReport:
    verdict: Verdict
    reject_reason: Optional[RejectReason] = None
    blocks_checked: int = 0
    first_bad_seq: Optional[int] = None
    transcript: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPTED

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reject_reason": self.reject_reason.value if self.reject_reason else None,
            "blocks_checked": self.blocks_checked,
            "first_bad_seq": self.first_bad_seq,
            "transcript": self.transcript,
            "detail": self.detail,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class PortingInputs:
    """What the new platform holds when an LMU arrives.

    ``platform_master`` is the secret provisioned into the new platform's
    security module. When it is None the platform takes it from the
    credential file, which is how the simulator delivers keys; in that mode a
    counterfeit SVD surfaces as a key unwrap failure instead of an
    authentication failure.
    """

    image: bytes
    credential: SvdCredential
    platform_master: Optional[bytes] = None


def _reject(reason: RejectReason, detail: str, **kw) -> VerificationReport:
    return VerificationReport(Verdict.REJECTED, reason, detail=detail, **kw)


def verify_and_decrypt(inputs: PortingInputs, rng: secmod.RandomSource) -> tuple[VerificationReport, list[LogRecord]]:
    """Run the full pipeline; records are returned only when Accepted."""
    try:
        image: LmuImage = parse_image(inputs.image)
    except ParseError as exc:
        return _reject(RejectReason.PARSE_ERROR, f"{type(exc).__name__}: {exc}"), []

    hdr = image.header
    cred = inputs.credential
    if cred.lmu_id != hdr.lmu_id or cred.svd_id != hdr.svd_id:
        return _reject(RejectReason.HEADER_MISMATCH, "credential is bound to a different LMU/SVD pair"), []

    digest = header_digest(hdr)
    master = cred.master if inputs.platform_master is None else inputs.platform_master
    keys = secmod.derive_session_keys(master, hdr.lmu_id, hdr.svd_id, b"")

    challenge = secmod.new_challenge(rng)
    response = secmod.svd_respond(cred, challenge, digest)
    transcript = {
        "challenge_sha256": secmod.sha256(challenge.nonce).hex(),
        "response_sha256": secmod.sha256(response.mac).hex(),
    }
    if not secmod.verify_response(keys.ak, challenge, response, hdr.svd_id, digest):
        return _reject(RejectReason.AUTH_FAILURE, "SVD response did not verify", transcript=transcript), []

    try:
        dek = secmod.unwrap_dek(keys.kek, image.key_section, digest)
    except AuthError:
        return _reject(RejectReason.KEY_UNWRAP_FAILURE, "key section did not authenticate",
                       transcript=transcript), []

    if not secmod.integrity_matches(keys.ik, digest, image.integrity, image.blocks):
        return _reject(RejectReason.INTEGRITY_MISMATCH, "integrity section does not match the blocks",
                       transcript=transcript), []

    records = []
    for block in image.blocks:
        try:
            records.append(secmod.decrypt_record(dek, digest, block))
        except (AuthError, ParseError) as exc:
            return _reject(
                RejectReason.INTEGRITY_MISMATCH, f"block {block.seq}: {type(exc).__name__}",
                blocks_checked=len(records), first_bad_seq=block.seq, transcript=transcript,
            ), []

    report = VerificationReport(Verdict.ACCEPTED, blocks_checked=len(records), transcript=transcript)
    return report, records


def verify_port(inputs: PortingInputs, rng: secmod.RandomSource) -> VerificationReport:
    return verify_and_decrypt(inputs, rng)[0]


def export_records(inputs: PortingInputs, rng: secmod.RandomSource) -> list[LogRecord]:
    """Plaintext records in seq order, or ExportRefused if verification fails."""
    report, records = verify_and_decrypt(inputs, rng)
    if not report.accepted:
        raise ExportRefused(report.reject_reason.value)
    return records


def truncate_image(data: bytes, k: int) -> bytes:
    """Attacker model: drop the last ``k`` blocks and patch block_count.

    The removed slots are zeroed so the result still parses; without the
    integrity key the chain tag cannot be recomputed to match.
    """
    image = parse_image(data)
    if not 0 <= k <= image.block_count:
        raise ValueError(f"cannot drop {k} of {image.block_count} blocks")
    if k:
        del image.blocks[-k:]
        image.integrity.block_count -= k
    return serialize_image(image)
