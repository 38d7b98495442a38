import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seclog import secmod
from seclog.errors import ExportRefused
from seclog.lmu_format import BLOCKS_OFFSET, KEY_SECTION_OFFSET, header_digest, parse_image, serialize_image
from seclog.porting import (
    PortingInputs,
    RejectReason,
    Verdict,
    export_records,
    truncate_image,
    verify_and_decrypt,
    verify_port,
)
from seclog.records import RecordType
from seclog.secmod import SvdCredential

from conftest import closed_session, log_samples, new_session


def flip(data, pos, mask=0xFF):
    out = bytearray(data)
    out[pos] ^= mask
    return bytes(out)


def test_untampered_is_accepted(rng):
    s = closed_session(7)
    report = verify_port(s.inputs(), rng)
    assert report.verdict is Verdict.ACCEPTED
    assert report.reject_reason is None
    assert report.blocks_checked == 8
    assert report.first_bad_seq is None


def test_counterfeit_svd_is_auth_failure(rng):
    s = closed_session(3)
    fake = SvdCredential(s.credential.svd_id, s.credential.lmu_id, bytes(32))
    report = verify_port(PortingInputs(s.data, fake, platform_master=s.master), rng)
    assert report.reject_reason is RejectReason.AUTH_FAILURE


def test_wrong_master_without_platform_secret_is_unwrap_failure(rng):
    s = closed_session(3)
    fake = SvdCredential(s.credential.svd_id, s.credential.lmu_id, bytes(32))
    assert verify_port(PortingInputs(s.data, fake), rng).reject_reason is RejectReason.KEY_UNWRAP_FAILURE


def test_binding_mismatch(rng):
    s = closed_session(3)
    cred = s.credential
    for bad in (SvdCredential(cred.svd_id, bytes(16), cred.master),
                SvdCredential(bytes(16), cred.lmu_id, cred.master)):
        assert verify_port(PortingInputs(s.data, bad), rng).reject_reason is RejectReason.HEADER_MISMATCH


def test_parse_error(rng):
    s = closed_session(3)
    assert verify_port(s.inputs(b"nope"), rng).reject_reason is RejectReason.PARSE_ERROR
    assert verify_port(s.inputs(s.data[:-1]), rng).reject_reason is RejectReason.PARSE_ERROR


def test_key_section_flip_is_unwrap_failure(rng):
    s = closed_session(3)
    report = verify_port(s.inputs(flip(s.data, KEY_SECTION_OFFSET + 20)), rng)
    assert report.reject_reason is RejectReason.KEY_UNWRAP_FAILURE


def test_ciphertext_flip_names_first_bad_seq(rng):
    s = closed_session(8, payload_max=64)
    pos = BLOCKS_OFFSET + 5 * (28 + 64) + 12 + 3
    report = verify_port(s.inputs(flip(s.data, pos)), rng)
    assert report.reject_reason is RejectReason.INTEGRITY_MISMATCH
    assert report.first_bad_seq == 5
    assert report.blocks_checked == 5


def test_every_byte_flip_in_blocks_and_integrity_is_rejected(rng):
    s = closed_session(15, capacity=16, payload_max=40)
    data = s.data
    assert parse_image(data).block_count == 16
    allowed = {RejectReason.INTEGRITY_MISMATCH, RejectReason.PARSE_ERROR}
    for pos in range(160, len(data)):
        report = verify_port(s.inputs(flip(data, pos, 0x01)), rng)
        assert report.reject_reason in allowed, pos


def test_truncation(rng):
    s = closed_session(7)
    for k in range(1, 9):
        report = verify_port(s.inputs(truncate_image(s.data, k)), rng)
        assert report.reject_reason is RejectReason.INTEGRITY_MISMATCH, k
    assert verify_port(s.inputs(truncate_image(s.data, 0)), rng).accepted


def test_truncate_bounds():
    s = closed_session(2)
    with pytest.raises(ValueError):
        truncate_image(s.data, 4)


def test_stage_order_with_multiple_faults(rng):
    s = closed_session(4)
    cred = s.credential
    block_flip = BLOCKS_OFFSET + 12
    tampered = flip(s.data, block_flip)
    unwrap_and_block = flip(tampered, KEY_SECTION_OFFSET + 20)
    fake = SvdCredential(cred.svd_id, cred.lmu_id, bytes(32))
    cases = [
        (PortingInputs(flip(tampered, 0), SvdCredential(bytes(16), cred.lmu_id, bytes(32))),
         RejectReason.PARSE_ERROR),
        (PortingInputs(unwrap_and_block, SvdCredential(bytes(16), cred.lmu_id, cred.master)),
         RejectReason.HEADER_MISMATCH),
        (PortingInputs(unwrap_and_block, fake, platform_master=s.master), RejectReason.AUTH_FAILURE),
        (PortingInputs(unwrap_and_block, cred), RejectReason.KEY_UNWRAP_FAILURE),
        (PortingInputs(tampered, cred), RejectReason.INTEGRITY_MISMATCH),
    ]
    for inputs, reason in cases:
        assert verify_port(inputs, rng).reject_reason is reason


def test_transcript_is_present_and_fresh():
    s = closed_session(2)
    a = verify_port(s.inputs(), random.Random(1)).transcript
    b = verify_port(s.inputs(), random.Random(2)).transcript
    assert set(a) == {"challenge_sha256", "response_sha256"}
    assert a != b
    assert a == verify_port(s.inputs(), random.Random(1)).transcript


def test_report_json_keys():
    s = closed_session(2)
    doc = json.loads(verify_port(s.inputs(), random.Random(0)).to_json())
    assert list(doc)[:4] == ["verdict", "reject_reason", "blocks_checked", "first_bad_seq"]
    assert doc["verdict"] == "Accepted" and doc["reject_reason"] is None


def test_export_five_sample_session(rng):
    s = closed_session(5)
    records = export_records(s.inputs(), rng)
    assert len(records) == 6
    assert records[-1].record_type is RecordType.SESSION_META
    assert records == [r for _, r in s.ec.trace]


def test_export_refused(rng):
    s = closed_session(5)
    with pytest.raises(ExportRefused) as exc:
        export_records(s.inputs(flip(s.data, BLOCKS_OFFSET + 13)), rng)
    assert exc.value.reason == "IntegrityMismatch"


def test_unclosed_but_synced_session_is_accepted(rng):
    s = new_session()
    log_samples(s, 16)  # two periodic updates, none pending
    assert verify_port(s.inputs(), rng).accepted


def test_unsynced_tail_is_rejected(rng):
    s = new_session()
    log_samples(s, 5)  # appended past the last integrity update
    assert verify_port(s.inputs(), rng).reject_reason is RejectReason.INTEGRITY_MISMATCH


@given(st.integers(0, 20), st.integers(1, 6), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_completeness_and_soundness(n, interval, seed):
    s = new_session(capacity=24, interval=interval, seed=seed)
    log_samples(s, n)
    s.ec.close(n)
    data = s.data
    report, records = verify_and_decrypt(s.inputs(), random.Random(seed))
    assert report.accepted and report.blocks_checked == n + 1
    # re-encrypting the exported plaintext reproduces the stored block bytes
    image = parse_image(data)
    digest = header_digest(image.header)
    keys = secmod.derive_session_keys(s.master, image.header.lmu_id, image.header.svd_id, b"")
    dek = secmod.unwrap_dek(keys.kek, image.key_section, digest)
    keys = secmod.derive_session_keys(s.master, image.header.lmu_id, image.header.svd_id, dek)
    for seq, record in enumerate(records):
        image.blocks[seq] = secmod.encrypt_record(keys, digest, seq, record, image.header.record_payload_max)
    assert serialize_image(image) == data
