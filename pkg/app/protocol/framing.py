"""Length-prefixed binary frames.

Frame layout: ``u32 length`` (big-endian, counts the bytes after it),
``u8 version``, ``u8 kind``, then the body::

    u32 n_labels    n_labels * 32 bytes
    u32 n_payloads  n_payloads * (u32 len, bytes)
    u32 n_indices   n_indices * u32
    u8  has_endpoint [32 bytes]
    u32 text_len    utf-8 text
"""
from __future__ import annotations

import struct

from app import config
from app.codec import LABEL_CT_BYTES, LabelCiphertext
from app.exceptions import EncodingError, FramingError, PopeError
from app.protocol.messages import Message, MessageKind, validate

WIRE_VERSION = 1
LENGTH = struct.Struct(">I")
HEADER = struct.Struct(">BB")
U32 = struct.Struct(">I")


class ByteReader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, data: bytes, error: type[PopeError] = FramingError):
        self._view = memoryview(data)
        self._pos = 0
        self._error = error

    @property
    def remaining(self) -> int:
        return len(self._view) - self._pos

    def take(self, size: int) -> bytes:
        if size < 0 or size > self.remaining:
            raise self._error(f"truncated: wanted {size} bytes, {self.remaining} left")
        chunk = bytes(self._view[self._pos : self._pos + size])
        self._pos += size
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return U32.unpack(self.take(4))[0]

    def label(self) -> LabelCiphertext:
        return LabelCiphertext.from_bytes(self.take(LABEL_CT_BYTES))

    def count(self, item_size: int) -> int:
        """Read a u32 element count, rejecting counts the buffer cannot hold."""
        n = self.u32()
        if n * item_size > self.remaining:
            raise self._error(f"count {n} exceeds the remaining {self.remaining} bytes")
        return n


def _body(message: Message) -> bytes:
    parts = [U32.pack(len(message.labels))]
    parts.extend(label.raw for label in message.labels)
    parts.append(U32.pack(len(message.payloads)))
    for payload in message.payloads:
        parts.append(U32.pack(len(payload)))
        parts.append(payload)
    parts.append(U32.pack(len(message.indices)))
    parts.extend(U32.pack(i) for i in message.indices)
    if message.endpoint is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(message.endpoint.raw)
    text = message.text.encode()
    parts.append(U32.pack(len(text)))
    parts.append(text)
    return b"".join(parts)


def frame(message: Message) -> bytes:
    validate(message)
    inner = HEADER.pack(WIRE_VERSION, message.kind) + _body(message)
    if len(inner) > config.max_frame_bytes():
        raise FramingError(f"frame of {len(inner)} bytes exceeds the maximum")
    return LENGTH.pack(len(inner)) + inner


def _parse(inner: bytes) -> Message:
    reader = ByteReader(inner)
    version, raw_kind = reader.u8(), reader.u8()
    if version != WIRE_VERSION:
        raise FramingError(f"unsupported wire version {version}")
    try:
        kind = MessageKind(raw_kind)
    except ValueError:
        raise FramingError(f"unknown message kind {raw_kind}")
    try:
        labels = tuple(reader.label() for _ in range(reader.count(LABEL_CT_BYTES)))
        payloads = tuple(reader.take(reader.u32()) for _ in range(reader.count(4)))
        indices = tuple(reader.u32() for _ in range(reader.count(4)))
        flag = reader.u8()
        if flag not in (0, 1):
            raise FramingError(f"bad endpoint flag {flag}")
        endpoint = reader.label() if flag else None
        text = reader.take(reader.u32()).decode()
    except (EncodingError, UnicodeDecodeError) as exc:
        raise FramingError(f"malformed body: {exc}") from exc
    if reader.remaining:
        raise FramingError(f"{reader.remaining} trailing bytes after body")
    return validate(Message(kind, labels, payloads, indices, endpoint, text))


def unframe(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < LENGTH.size:
        raise FramingError("truncated length prefix")
    (length,) = LENGTH.unpack_from(data)
    if length > config.max_frame_bytes():
        raise FramingError(f"declared frame length {length} exceeds the maximum")
    if len(data) - LENGTH.size != length:
        raise FramingError(
            f"declared frame length {length}, got {len(data) - LENGTH.size} bytes"
        )
    return _parse(data[LENGTH.size :])


class FrameDecoder:
    """Incremental decoder for a byte stream carrying many frames.

    A complete frame that fails to parse is dropped and reported; the
    decoder stays usable for the frames that follow it.
    """

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> None:
        self._buffer.extend(data)

    @property
    def pending(self) -> int:
        return len(self._buffer)

    @property
    def next_length(self) -> int | None:
        """Declared length of the frame at the head of the buffer, once known."""
        if len(self._buffer) < LENGTH.size:
            return None
        return LENGTH.unpack_from(self._buffer)[0]

    def next_message(self) -> Message | None:
        if len(self._buffer) < LENGTH.size:
            return None
        (length,) = LENGTH.unpack_from(self._buffer)
        if length > config.max_frame_bytes():
            self._buffer.clear()
            raise FramingError(f"declared frame length {length} exceeds the maximum")
        end = LENGTH.size + length
        if len(self._buffer) < end:
            return None
        inner = bytes(self._buffer[LENGTH.size : end])
        del self._buffer[:end]
        return _parse(inner)
