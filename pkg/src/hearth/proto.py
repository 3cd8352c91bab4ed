"""Framed binary virtual-pin protocol shared by the gateway and device nodes.

Wire layout (the normative contract, bit-exact):

    +------+-----------+-----------+----------------+
    | kind | msg_id    | body_len  | body           |
    | 1 B  | 2 B big-e | 2 B big-e | body_len bytes |
    +------+-----------+-----------+----------------+

Bodies are lists of UTF-8 fields joined by single 0x00 bytes, e.g. a pin
write is ``["vw", "4", "153.2"]``.  No checksum: TCP provides integrity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

HEADER_LEN = 5
MAX_BODY_LEN = 32768

_HEADER = struct.Struct(">BHH")


class MessageKind(IntEnum):
    RESPONSE = 0
    LOGIN = 2
    PING = 6
    NOTIFY = 14
    HW_SYNC = 16
    HW_WRITE = 20


_KIND_CODES = {k.value for k in MessageKind}

# RESPONSE body status strings
STATUS_OK = "200"
STATUS_ILLEGAL_COMMAND = "2"
STATUS_INVALID_TOKEN = "9"


class ProtocolError(Exception):
    """Unrecoverable wire garbage; the caller must drop the connection."""


class EncodeError(Exception):
    """The frame or body violates its invariants and cannot be encoded."""


@dataclass(frozen=True)
class Frame:
    """One wire message.

    msg_id 0 is reserved for unsolicited pushes and only NOTIFY may carry
    it; every other kind needs 1-65535.
    """

    kind: MessageKind
    msg_id: int
    body: bytes = b""

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise EncodeError(f"unknown message kind {self.kind!r}")
        if not 0 <= self.msg_id <= 0xFFFF:
            raise EncodeError(f"msg_id {self.msg_id} out of range")
        if self.msg_id == 0 and self.kind != MessageKind.NOTIFY:
            raise EncodeError(f"msg_id 0 is reserved (kind={self.kind.name})")
        if len(self.body) > MAX_BODY_LEN:
            raise EncodeError(f"body of {len(self.body)} bytes exceeds {MAX_BODY_LEN}")


def encode_frame(frame: Frame) -> bytes:
    """Encode a frame to its exact wire bytes."""
    # Frame invariants are enforced at construction; re-check length in case
    # the caller built the dataclass via object.__new__ tricks.
    if len(frame.body) > MAX_BODY_LEN:
        raise EncodeError(f"body of {len(frame.body)} bytes exceeds {MAX_BODY_LEN}")
    return _HEADER.pack(frame.kind, frame.msg_id, len(frame.body)) + frame.body


def decode_frame(buffer: bytes | bytearray) -> tuple[Frame, int] | None:
    """Decode one frame from the start of ``buffer``.

    Returns ``(frame, consumed_bytes)`` for a complete frame, or ``None``
    when the buffer is a strict prefix of a well-formed frame (feed more
    bytes).  Trailing bytes past the frame are left untouched.

    Raises ProtocolError for bytes that can never become a valid frame:
    unknown kind code, declared body length over the cap, or a reserved
    msg_id.  The caller must drop the connection.
    """
    if len(buffer) == 0:
        return None
    kind_code = buffer[0]
    if kind_code not in _KIND_CODES:
        raise ProtocolError(f"unknown kind code 0x{kind_code:02x}")
    if len(buffer) < HEADER_LEN:
        return None
    _, msg_id, body_len = _HEADER.unpack_from(buffer)
    if body_len > MAX_BODY_LEN:
        raise ProtocolError(f"declared body length {body_len} exceeds {MAX_BODY_LEN}")
    kind = MessageKind(kind_code)
    if msg_id == 0 and kind != MessageKind.NOTIFY:
        raise ProtocolError(f"msg_id 0 on {kind.name} frame")
    total = HEADER_LEN + body_len
    if len(buffer) < total:
        return None
    return Frame(kind, msg_id, bytes(buffer[HEADER_LEN:total])), total


def encode_body(fields: list[str]) -> bytes:
    """Join UTF-8 fields with single 0x00 separators. Empty list -> b''."""
    encoded = []
    for f in fields:
        raw = f.encode("utf-8")
        if b"\x00" in raw:
            raise EncodeError(f"field {f!r} contains the 0x00 separator")
        encoded.append(raw)
    return b"\x00".join(encoded)


def decode_body(body: bytes) -> list[str]:
    """Exact inverse of encode_body (b'' -> [])."""
    if body == b"":
        return []
    try:
        return [part.decode("utf-8") for part in body.split(b"\x00")]
    except UnicodeDecodeError as e:
        raise ProtocolError(f"body is not valid UTF-8: {e}") from e


class StreamDecoder:
    """Incremental decoder for a TCP byte stream.

    Feed arbitrary chunks; complete frames come out in order.  A
    ProtocolError from the underlying decode poisons the stream and the
    connection must be dropped.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        frames: list[Frame] = []
        while True:
            result = decode_frame(self._buf)
            if result is None:
                break
            frame, consumed = result
            frames.append(frame)
            del self._buf[:consumed]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)
