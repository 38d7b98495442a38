import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from seclog.errors import MalformedRecord
from seclog.records import (
    Event,
    LogRecord,
    RecordType,
    Sample,
    SessionMeta,
    parse_record,
    record_json_line,
    record_to_dict,
)


def test_sample_wire_layout():
    rec = LogRecord.of(7, Sample(4100, -1500, 2512, 917))
    raw = rec.pack()
    assert raw[:8] == (7).to_bytes(8, "little")
    assert raw[8] == 0x01
    assert raw[9:11] == (12).to_bytes(2, "little")
    assert struct.unpack("<IihH", raw[11:]) == (4100, -1500, 2512, 917)
    assert rec.size == 23


def test_payload_sizes_are_fixed_per_type():
    assert len(Sample(0, 0, 0, 0).pack()) == 12
    assert len(Event(1).pack()) == 6
    assert len(SessionMeta(0, 0, 0, 0, 0).pack()) == 24


def test_reserved_type_zero_is_malformed():
    raw = bytearray(LogRecord.of(1, Event(1)).pack())
    raw[8] = 0
    with pytest.raises(MalformedRecord):
        parse_record(bytes(raw))


def test_wrong_length_for_type():
    raw = LogRecord(1, RecordType.EVENT, bytes(12)).pack()
    with pytest.raises(MalformedRecord):
        parse_record(raw)


def test_short_and_overlong():
    raw = LogRecord.of(1, Event(1)).pack()
    with pytest.raises(MalformedRecord):
        parse_record(raw[:5])
    with pytest.raises(MalformedRecord):
        parse_record(raw + b"\x00")


def test_soc_over_1000_rejected():
    with pytest.raises(MalformedRecord):
        parse_record(LogRecord.of(0, Sample(1, 1, 1, 1001)).pack())


def test_json_shape():
    rec = LogRecord.of(3, Event(0x0001, 0x2105))
    d = record_to_dict(rec, ec_id=b"\x01" * 16, seq=4)
    assert list(d) == ["ec_id", "seq", "timestamp", "type", "fields"]
    assert d["type"] == "event"
    assert d["fields"] == {"event_code": 1, "detail": 0x2105}
    assert " " not in record_json_line(rec, ec_id=b"\x01" * 16, seq=4)


payloads = st.one_of(
    st.builds(Sample, st.integers(0, 2**32 - 1), st.integers(-2**31, 2**31 - 1),
              st.integers(-2**15, 2**15 - 1), st.integers(0, 1000)),
    st.builds(Event, st.integers(0, 0xFFFF), st.integers(0, 2**32 - 1)),
    st.builds(SessionMeta, st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1),
              st.integers(0, 2**32 - 1), st.integers(-2**15, 2**15 - 1), st.integers(0, 2**32 - 1)),
)


@given(st.integers(0, 2**64 - 1), payloads)
def test_round_trip(ts, body):
    rec = LogRecord.of(ts, body)
    back = parse_record(rec.pack())
    assert back == rec
    assert back.decode() == body


@given(st.binary(max_size=64))
def test_parse_is_total(data):
    try:
        parse_record(data)
    except MalformedRecord:
        pass
