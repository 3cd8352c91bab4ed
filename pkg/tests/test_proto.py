"""Codec: framing layout, streaming, and round-trip properties."""

import random

import pytest
from hypothesis import given, strategies as st

from hearth.proto import (
    MAX_BODY_LEN,
    EncodeError,
    Frame,
    MessageKind,
    ProtocolError,
    StreamDecoder,
    decode_body,
    decode_frame,
    encode_body,
    encode_frame,
)

KINDS = list(MessageKind)


def make_frame(kind, msg_id, body=b""):
    return Frame(MessageKind(kind), msg_id, body)


class TestWireLayout:
    def test_ping_empty_body(self):
        assert encode_frame(Frame(MessageKind.PING, 1)) == bytes(
            [0x06, 0x00, 0x01, 0x00, 0x00])

    def test_response_200(self):
        assert encode_frame(Frame(MessageKind.RESPONSE, 1, b"200")) == bytes(
            [0x00, 0x00, 0x01, 0x00, 0x03, 0x32, 0x30, 0x30])

    def test_big_endian_msg_id_and_length(self):
        raw = encode_frame(Frame(MessageKind.HW_WRITE, 0x0102, b"x" * 0x0304))
        assert raw[1:3] == b"\x01\x02"
        assert raw[3:5] == b"\x03\x04"

    def test_body_too_long_rejected(self):
        with pytest.raises(EncodeError):
            Frame(MessageKind.HW_WRITE, 1, b"x" * (MAX_BODY_LEN + 1))

    def test_max_body_accepted(self):
        f = Frame(MessageKind.HW_WRITE, 1, b"x" * MAX_BODY_LEN)
        decoded, consumed = decode_frame(encode_frame(f))
        assert decoded == f
        assert consumed == 5 + MAX_BODY_LEN

    def test_msg_id_zero_reserved(self):
        with pytest.raises(EncodeError):
            Frame(MessageKind.PING, 0)

    def test_msg_id_zero_allowed_for_notify(self):
        f = Frame(MessageKind.NOTIFY, 0, b"hi")
        assert decode_frame(encode_frame(f))[0] == f


class TestDecode:
    def test_incomplete_header(self):
        assert decode_frame(bytes([0x06, 0x00, 0x01, 0x00])) is None

    def test_trailing_bytes_untouched(self):
        frame, consumed = decode_frame(bytes([0x06, 0x00, 0x01, 0x00, 0x00, 0xFF]))
        assert frame == Frame(MessageKind.PING, 1)
        assert consumed == 5

    def test_unknown_kind(self):
        with pytest.raises(ProtocolError):
            decode_frame(bytes([0xFF, 0x00, 0x01, 0x00, 0x00]))

    def test_unknown_kind_detected_from_first_byte(self):
        with pytest.raises(ProtocolError):
            decode_frame(b"\xff")

    def test_oversize_declared_length(self):
        with pytest.raises(ProtocolError):
            decode_frame(bytes([0x06, 0x00, 0x01, 0x80, 0x01]))

    def test_empty_buffer(self):
        assert decode_frame(b"") is None

    def test_incomplete_body(self):
        raw = encode_frame(Frame(MessageKind.HW_WRITE, 7, b"abcdef"))
        assert decode_frame(raw[:-1]) is None

    def test_never_reads_past_declared_length(self):
        two = encode_frame(Frame(MessageKind.PING, 1)) + encode_frame(
            Frame(MessageKind.PING, 2))
        frame, consumed = decode_frame(two)
        assert frame.msg_id == 1
        frame2, _ = decode_frame(two[consumed:])
        assert frame2.msg_id == 2


class TestBody:
    def test_vw_separator_layout(self):
        assert encode_body(["vw", "4", "153.2"]) == b"vw\x004\x00153.2"

    def test_empty_list(self):
        assert encode_body([]) == b""
        assert decode_body(b"") == []

    def test_embedded_nul_rejected(self):
        with pytest.raises(EncodeError):
            encode_body(["a\x00b"])

    def test_empty_fields_inside_list(self):
        assert decode_body(encode_body(["a", "", "b"])) == ["a", "", "b"]

    @given(st.lists(st.text().filter(lambda s: "\x00" not in s)).filter(
        lambda l: l != [""]))
    def test_round_trip_property(self, fields):
        assert decode_body(encode_body(fields)) == fields


def random_frame(rng: random.Random) -> Frame:
    kind = rng.choice(KINDS)
    msg_id = 0 if kind == MessageKind.NOTIFY and rng.random() < 0.1 else \
        rng.randint(1, 0xFFFF)
    n = rng.choice([0, rng.randint(1, 40), rng.randint(41, 300)])
    return Frame(kind, msg_id, rng.randbytes(n))


class TestRoundTrip:
    @given(st.sampled_from(KINDS), st.integers(1, 0xFFFF), st.binary(max_size=600))
    def test_property(self, kind, msg_id, body):
        f = Frame(kind, msg_id, body)
        decoded, consumed = decode_frame(encode_frame(f))
        assert decoded == f
        assert consumed == len(encode_frame(f))

    def test_seeded_bulk(self):
        rng = random.Random(0xBEEF)
        for _ in range(2000):
            f = random_frame(rng)
            decoded, _ = decode_frame(encode_frame(f))
            assert decoded == f


class TestStreaming:
    def test_concatenation_byte_at_a_time(self):
        rng = random.Random(42)
        frames = [random_frame(rng) for _ in range(200)]
        stream = b"".join(encode_frame(f) for f in frames)
        decoder = StreamDecoder()
        got = []
        for i in range(len(stream)):
            got.extend(decoder.feed(stream[i:i + 1]))
        assert got == frames
        assert decoder.pending == 0

    def test_chunked_feed(self):
        rng = random.Random(43)
        frames = [random_frame(rng) for _ in range(500)]
        stream = b"".join(encode_frame(f) for f in frames)
        decoder = StreamDecoder()
        got = []
        i = 0
        while i < len(stream):
            n = rng.randint(1, 17)
            got.extend(decoder.feed(stream[i:i + n]))
            i += n
        assert got == frames

    def test_garbage_mid_stream_raises(self):
        decoder = StreamDecoder()
        decoder.feed(encode_frame(Frame(MessageKind.PING, 1)))
        with pytest.raises(ProtocolError):
            decoder.feed(b"\xde\xad")
