import random

import pytest
from hypothesis import given, settings, strategies as st

from macrerand.frames import (BROADCAST, MAX_PN, MAX_SN, BadFcs, EncodeError, Frame,
                              FrameType, MacAddress, MalformedFrame, TruncatedFrame,
                              UnknownType, compute_fcs, decode_frame, encode_frame,
                              pack_ccmp, unpack_ccmp)


def crc32_bitwise(data: bytes) -> int:
    # reflected 0x04C11DB7, one bit at a time
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xEDB88320 if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def with_fcs(body: bytes) -> bytes:
    return body + crc32_bitwise(body).to_bytes(4, "little")


STA = MacAddress("02:00:00:00:00:01")
AP = MacAddress("00:0f:ac:00:00:01")


class TestFcs:
    def test_check_value(self):
        assert compute_fcs(b"123456789") == 0xCBF43926

    def test_empty(self):
        assert compute_fcs(b"") == 0

    @given(st.binary(max_size=300))
    def test_matches_bitwise_oracle(self, data):
        assert compute_fcs(data) == crc32_bitwise(data)


class TestMacAddress:
    def test_parse_forms(self):
        assert MacAddress("02-00-00-00-00-01") == STA
        assert MacAddress(bytes.fromhex("020000000001")) == STA
        assert str(STA) == "02:00:00:00:00:01"

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            MacAddress(b"\x00" * 5)

    def test_random_is_local_unicast(self):
        rng = random.Random(3)
        for _ in range(200):
            assert MacAddress.random(rng).is_randomized

    def test_flags(self):
        assert BROADCAST.is_broadcast and BROADCAST.is_multicast
        assert not AP.is_local


class TestLayout:
    def test_ack(self):
        want = with_fcs(bytes.fromhex("d4000000") + STA)
        assert encode_frame(Frame(FrameType.ACK, STA)) == want
        assert len(want) == 14

    def test_rts(self):
        want = with_fcs(bytes.fromhex("b4002c01") + AP + STA)
        assert encode_frame(Frame(FrameType.RTS, AP, STA, duration=300)) == want

    def test_data_header(self):
        f = Frame(FrameType.DATA, AP, STA, AP, sn=5, frag=2, pn=0x060504030201,
                  key_id=1, payload=b"hi")
        body = (bytes.fromhex("08000000") + AP + STA + AP + bytes.fromhex("5200")
                + bytes.fromhex("0102006003040506") + b"hi")
        assert encode_frame(f) == with_fcs(body)

    def test_assoc_req(self):
        f = Frame(FrameType.ASSOC_REQ, AP, STA, AP, sn=4095)
        body = bytes.fromhex("00000000") + AP + STA + AP + bytes.fromhex("f0ff")
        assert encode_frame(f) == with_fcs(body)

    def test_ccmp_helpers(self):
        hdr = pack_ccmp(0xAABBCCDDEEFF, 3)
        assert hdr == bytes.fromhex("ffee00e0ddccbbaa")
        assert unpack_ccmp(hdr) == (0xAABBCCDDEEFF, 3)


class TestEncodeErrors:
    @pytest.mark.parametrize("field,value", [
        ("sn", MAX_SN), ("sn", -1), ("pn", MAX_PN), ("frag", 16), ("key_id", 4),
        ("duration", 1 << 16),
    ])
    def test_out_of_range(self, field, value):
        f = Frame(FrameType.DATA, AP, STA, AP, **{field: value})
        with pytest.raises(EncodeError) as exc:
            encode_frame(f)
        assert exc.value.field == field

    def test_missing_addr3(self):
        with pytest.raises(EncodeError):
            encode_frame(Frame(FrameType.DATA, AP, STA))

    def test_control_with_payload(self):
        with pytest.raises(EncodeError):
            encode_frame(Frame(FrameType.ACK, STA, payload=b"x"))


class TestDecodeErrors:
    def test_truncated(self):
        with pytest.raises(TruncatedFrame):
            decode_frame(b"\xd4\x00" * 6)

    def test_truncated_data(self):
        with pytest.raises(TruncatedFrame):
            decode_frame(with_fcs(bytes.fromhex("08000000") + AP + STA + AP + b"\x00\x00"))

    def test_bad_fcs(self):
        raw = bytearray(encode_frame(Frame(FrameType.ACK, STA)))
        raw[-1] ^= 0xFF
        with pytest.raises(BadFcs):
            decode_frame(bytes(raw))

    def test_unknown_type(self):
        with pytest.raises(UnknownType):
            decode_frame(with_fcs(bytes.fromhex("e4000000") + STA))

    def test_flags_rejected(self):
        with pytest.raises(MalformedFrame):
            decode_frame(with_fcs(bytes.fromhex("d4080000") + STA))

    def test_ack_trailing(self):
        with pytest.raises(MalformedFrame):
            decode_frame(with_fcs(bytes.fromhex("d4000000") + STA + b"\x00"))

    def test_ccmp_without_ext_iv(self):
        body = (bytes.fromhex("08000000") + AP + STA + AP + b"\x00\x00"
                + bytes.fromhex("0102000003040506"))
        with pytest.raises(MalformedFrame):
            decode_frame(with_fcs(body))


macs = st.binary(min_size=6, max_size=6).map(MacAddress)


@st.composite
def frames(draw):
    ft = draw(st.sampled_from(list(FrameType)))
    a1 = draw(macs)
    if ft in (FrameType.ACK, FrameType.CTS):
        return Frame(ft, a1, duration=draw(st.integers(0, 0xFFFF)))
    if ft is FrameType.RTS:
        return Frame(ft, a1, draw(macs), duration=draw(st.integers(0, 0xFFFF)))
    kw = dict(duration=draw(st.integers(0, 0xFFFF)), sn=draw(st.integers(0, MAX_SN - 1)),
              frag=draw(st.integers(0, 15)), payload=draw(st.binary(max_size=64)))
    if ft is FrameType.DATA:
        kw.update(pn=draw(st.integers(0, MAX_PN - 1)), key_id=draw(st.integers(0, 3)))
    return Frame(ft, a1, draw(macs), draw(macs), **kw)


@given(frames())
def test_round_trip(frame):
    data = encode_frame(frame)
    back = decode_frame(data)
    assert back == frame
    assert back.fcs == crc32_bitwise(data[:-4])
    assert encode_frame(back) == data


@settings(max_examples=50)
@given(frames(), st.data())
def test_single_bit_flip_caught(frame, data):
    raw = bytearray(encode_frame(frame))
    bit = data.draw(st.integers(0, len(raw) * 8 - 1))
    raw[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises((BadFcs, TruncatedFrame)):
        decode_frame(bytes(raw))


def test_evolve_clears_fcs():
    f = decode_frame(encode_frame(Frame(FrameType.DATA, AP, STA, AP, sn=1)))
    g = f.evolve(addr2=AP)
    assert g.addr2 == AP and g.fcs is None and g.sn == 1 and f.addr2 == STA
