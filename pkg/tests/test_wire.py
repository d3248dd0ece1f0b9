import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mavsession.dialect import bundled_dialect
from mavsession.refinement import EnumV, FloatV, IntV, StrV
from mavsession.wire import (
    FieldMap,
    FieldOutOfRange,
    Frame,
    MissingField,
    NeedMoreBytes,
    PayloadTooLong,
    Resync,
    StreamDecoder,
    X25Crc,
    crc16_x25,
    decode_frame,
    decode_payload,
    encode_frame,
    encode_payload,
    zero_fields,
)

from wire_fuzz import bitwise_crc16, random_fieldmaps

mavlink = pytest.importorskip("pymavlink.dialects.v20.common")

COMMON = bundled_dialect("common")


def test_crc_check_value():
    assert bitwise_crc16(b"123456789") == 0x6F91
    assert crc16_x25(b"123456789") == 0x6F91
    assert crc16_x25(b"") == 0xFFFF


@given(st.binary(max_size=200), st.data())
def test_crc_incremental_matches_one_shot(data, draw):
    cut = draw.draw(st.integers(0, len(data)))
    acc = X25Crc().accumulate(data[:cut]).accumulate(data[cut:])
    assert acc.value == crc16_x25(data) == bitwise_crc16(data)


# -- payloads -------------------------------------------------------------------


def _fm(name, **values):
    schema = COMMON.message(name)
    fields = zero_fields(schema)
    fields.update(values)
    return FieldMap(schema, fields)


def test_mission_count_hand_packed():
    fm = _fm("MISSION_COUNT", count=IntV(2), target_system=IntV(1), target_component=IntV(1))
    # wire order: count(uint16) target_system target_component mission_type
    assert encode_payload(fm.schema, fm) == b"\x02\x00\x01\x01"
    decoded = decode_payload(fm.schema, b"\x02\x00\x01\x01", COMMON.enums)
    assert decoded["count"] == IntV(2)
    assert decoded["mission_type"] == EnumV("MAV_MISSION_TYPE", "MAV_MISSION_TYPE_MISSION", 0)


def test_empty_payload_decodes_to_zeros():
    fm = decode_payload(COMMON.message("MISSION_ITEM_INT"), b"")
    assert all(v in (IntV(0), FloatV(0.0)) for v in fm.values())
    assert len(fm) == len(COMMON.message("MISSION_ITEM_INT").fields)


def test_enum_decoding_and_warning():
    schema = COMMON.message("MISSION_ACK")
    ok = decode_payload(schema, encode_payload(schema, _fm("MISSION_ACK", type=IntV(1))), COMMON.enums)
    assert ok["type"] == EnumV("MAV_MISSION_RESULT", "MAV_MISSION_ERROR", 1)
    odd = decode_payload(schema, encode_payload(schema, _fm("MISSION_ACK", type=IntV(200))), COMMON.enums)
    assert odd["type"] == IntV(200)
    assert "type" in odd.warnings


def test_bitmask_enum_stays_integer():
    schema = COMMON.message("HEARTBEAT")
    fm = decode_payload(schema, encode_payload(schema, _fm("HEARTBEAT", base_mode=IntV(0x81))), COMMON.enums)
    assert fm["base_mode"] == IntV(0x81)
    assert "base_mode" not in fm.warnings


def test_out_of_range_and_missing():
    schema = COMMON.message("MISSION_COUNT")
    with pytest.raises(FieldOutOfRange):
        encode_payload(schema, _fm("MISSION_COUNT", count=IntV(65536)))
    with pytest.raises(FieldOutOfRange):
        encode_payload(schema, _fm("MISSION_COUNT", count=FloatV(1.0)))
    with pytest.raises(MissingField):
        encode_payload(schema, {"count": IntV(1)})
    with pytest.raises(FieldOutOfRange):
        encode_payload(COMMON.message("PARAM_SET"), _fm("PARAM_SET", param_id=StrV("X" * 17)))
    with pytest.raises(FieldOutOfRange):
        encode_payload(COMMON.message("PARAM_SET"), _fm("PARAM_SET", param_value=FloatV(1e39)))


def test_char_array_zero_padded_like_reference():
    mav = mavlink.MAVLink(None, srcSystem=255, srcComponent=190)
    ref = mav.param_set_encode(1, 1, b"MC_PITCH_P", 6.5, 9).pack(mav)
    fm = _fm("PARAM_SET", target_system=IntV(1), target_component=IntV(1),
             param_id=StrV("MC_PITCH_P"), param_value=FloatV(6.5), param_type=IntV(9))
    ours = encode_frame(23, fm, seq=0, sys_id=255, comp_id=190, crc_extra=COMMON.message("PARAM_SET").crc_extra)
    assert ours == ref
    assert decode_payload(fm.schema, fm_payload(ours))["param_id"] == StrV("MC_PITCH_P")


def fm_payload(frame_bytes):
    return frame_bytes[10:10 + frame_bytes[1]]


@pytest.mark.parametrize("seq", [0, 7, 255])
def test_frames_match_reference_encoder(seq):
    mav = mavlink.MAVLink(None, srcSystem=1, srcComponent=1)
    mav.seq = seq
    ref = mav.mission_count_encode(255, 190, 2, 0).pack(mav)
    fm = _fm("MISSION_COUNT", target_system=IntV(255), target_component=IntV(190), count=IntV(2))
    ours = encode_frame(44, fm, seq=seq, sys_id=1, comp_id=1, crc_extra=COMMON.message("MISSION_COUNT").crc_extra)
    assert ours == ref


def test_reference_heartbeat_decodes():
    mav = mavlink.MAVLink(None, srcSystem=1, srcComponent=1)
    raw = mav.heartbeat_encode(2, 3, 0x81, 5, 4).pack(mav)
    frame, used = decode_frame(raw, COMMON.crc_extras)
    assert used == len(raw) and frame.verified
    fm = decode_payload(COMMON.messages[frame.msg_id], frame.payload, COMMON.enums)
    assert fm["custom_mode"] == IntV(5)
    assert fm["base_mode"] == IntV(0x81)
    assert fm["mavlink_version"] == IntV(3)


def test_zero_payload_truncates_to_one_byte():
    raw = encode_frame(0, bytes(8), crc_extra=50)
    assert raw[1] == 1
    mav = mavlink.MAVLink(None, srcSystem=0, srcComponent=0)
    ref = mav.heartbeat_encode(0, 0, 0, 0, 0, 0).pack(mav)
    assert ref[1] == 1 and encode_frame(0, _fm("HEARTBEAT"), crc_extra=50) == ref


def test_payload_too_long():
    with pytest.raises(PayloadTooLong):
        encode_frame(1, b"\x01" * 256)


def test_payload_round_trip_fuzz():
    for fm in random_fieldmaps(2000, seed=11):
        raw = encode_payload(fm.schema, fm)
        assert decode_payload(fm.schema, raw) == fm
        assert encode_payload(fm.schema, decode_payload(fm.schema, raw, COMMON.enums)) == raw


def test_frame_round_trip():
    for i, fm in enumerate(random_fieldmaps(300, seed=5)):
        raw = encode_frame(fm.schema.id, fm, seq=i % 256, sys_id=1, comp_id=2, crc_extra=fm.schema.crc_extra)
        frame, used = decode_frame(raw, COMMON.crc_extras)
        assert isinstance(frame, Frame) and frame.verified and used == len(raw)
        assert frame.to_bytes() == raw
        assert decode_frame(frame.to_bytes(), COMMON.crc_extras)[0] == frame


# -- streaming -----------------------------------------------------------------


def _stream(n=20, seed=1):
    frames = []
    for i, fm in enumerate(random_fieldmaps(n, seed)):
        frames.append(encode_frame(fm.schema.id, fm, seq=i, sys_id=1, comp_id=1, crc_extra=fm.schema.crc_extra))
    return frames


def test_short_input_needs_more_bytes():
    raw = _stream(1)[0]
    assert decode_frame(raw[:5], COMMON.crc_extras) == (NeedMoreBytes, 0)
    assert decode_frame(raw[:-1], COMMON.crc_extras) == (NeedMoreBytes, 0)
    assert decode_frame(b"", COMMON.crc_extras) == (NeedMoreBytes, 0)


def test_garbage_then_frame():
    raw = _stream(1)[0]
    out = StreamDecoder(COMMON.crc_extras).feed(b"\x01\x02\x03" + raw)
    assert out[0] == Resync(3, "garbage")
    assert isinstance(out[1], Frame) and out[1].to_bytes() == raw


def test_v1_and_signed_frames_are_skipped():
    mav = mavlink.MAVLink(None, srcSystem=1, srcComponent=1)
    mav.WIRE_PROTOCOL_VERSION = "1.0"
    good = _stream(1)[0]
    signed = bytearray(good)
    signed[2] = 0x01
    out = StreamDecoder(COMMON.crc_extras).feed(bytes(signed) + good)
    frames = [x for x in out if isinstance(x, Frame)]
    assert [f.to_bytes() for f in frames] == [good]
    assert any(isinstance(x, Resync) and "incompat" in x.reason for x in out)
    v1 = b"\xfe\x09\x00\x01\x01\x00" + bytes(9) + b"\x00\x00"
    out = StreamDecoder(COMMON.crc_extras).feed(v1 + good)
    assert [f.to_bytes() for f in out if isinstance(f, Frame)] == [good]


def test_unknown_message_id_passes_unverified():
    raw = encode_frame(0xABCDE, b"\x05\x06", crc_extra=17)
    frame, _ = decode_frame(raw, COMMON.crc_extras)
    assert isinstance(frame, Frame) and not frame.verified and frame.payload == b"\x05\x06"
    item, _ = decode_frame(raw, COMMON.crc_extras, pass_unknown=False)
    assert isinstance(item, Resync)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=60), st.binary(max_size=8))
def test_chunked_feeding_is_equivalent(cuts, noise):
    stream = noise.replace(b"\xfd", b"") + b"".join(_stream(8, seed=2))
    whole = [x for x in StreamDecoder(COMMON.crc_extras).feed(stream) if isinstance(x, Frame)]
    dec = StreamDecoder(COMMON.crc_extras)
    chunked, pos, i = [], 0, 0
    while pos < len(stream):
        step = cuts[i % len(cuts)]
        chunked += [x for x in dec.feed(stream[pos:pos + step]) if isinstance(x, Frame)]
        pos += step
        i += 1
    assert chunked == whole
    assert len(whole) == 8


def test_single_bit_flips_are_rejected():
    rng = random.Random(2024)
    frames = _stream(60, seed=9)
    silent = unverified = 0
    for trial in range(2000):
        raw = bytearray(rng.choice(frames))
        bit = rng.randrange(len(raw) * 8)
        raw[bit // 8] ^= 1 << (bit % 8)
        strict = [x for x in StreamDecoder(COMMON.crc_extras, pass_unknown=False).feed(bytes(raw)) if isinstance(x, Frame)]
        silent += len(strict)
        loose = [x for x in StreamDecoder(COMMON.crc_extras).feed(bytes(raw)) if isinstance(x, Frame)]
        silent += sum(1 for f in loose if f.verified)
        unverified += len(loose)
    assert silent == 0
    assert unverified < 2000
