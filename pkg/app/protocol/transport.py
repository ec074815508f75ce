"""Server-side view of the client.

The server asks for comparisons through a ``Transport``. ``request`` is one
blocking round; ``stream`` pipelines a header and its chunks and still costs
one round, since the client answers once after the last chunk.
"""
from __future__ import annotations

from typing import Protocol, Sequence

import anyio

from app import config
from app.codec import LabelCiphertext
from app.exceptions import ConfigError, ProtocolViolation
from app.protocol.framing import frame, unframe
from app.protocol.messages import Message, MessageKind
from app.protocol.transcript import Transcript


class ClientHandler(Protocol):
    def handle(self, message: Message) -> Message | None:
        """Answer a server request, or return None while a stream is open."""


class Transport(Protocol):
    transcript: Transcript

    async def request(self, message: Message) -> Message: ...

    async def stream(self, header: Message, chunks: Sequence[Message]) -> Message: ...


class InProcessTransport:
    """Calls the client handler directly; ``wire=True`` round-trips every frame."""

    def __init__(self, handler: ClientHandler, transcript: Transcript, wire: bool = False):
        self.handler = handler
        self.transcript = transcript
        self.wire = wire

    def _deliver(self, message: Message) -> Message | None:
        if self.wire:
            message = unframe(frame(message))
        reply = self.handler.handle(message)
        if reply is not None and self.wire:
            reply = unframe(frame(reply))
        return reply

    async def request(self, message: Message) -> Message:
        reply = self._deliver(message)
        if reply is None:
            raise ProtocolViolation(f"client left {message.kind.name} unanswered")
        self.transcript.record_exchange((message,), reply)
        return reply

    async def stream(self, header: Message, chunks: Sequence[Message]) -> Message:
        sent = [header, *chunks]
        replies = [self._deliver(message) for message in sent]
        answered = [reply for reply in replies if reply is not None]
        if len(answered) != 1 or replies[-1] is None:
            raise ProtocolViolation("client must answer a stream exactly once, at its end")
        self.transcript.record_exchange(sent, answered[0])
        return answered[0]


class LatencyTransport:
    def __init__(self, inner: Transport, delay: float):
        self.inner = inner
        self.delay = delay

    @property
    def transcript(self) -> Transcript:
        return self.inner.transcript

    async def request(self, message: Message) -> Message:
        reply = await self.inner.request(message)
        await anyio.sleep(self.delay)
        return reply

    async def stream(self, header: Message, chunks: Sequence[Message]) -> Message:
        reply = await self.inner.stream(header, chunks)
        await anyio.sleep(self.delay)
        return reply


def simulated_latency(transport: Transport, delay: float) -> Transport:
    """Add ``delay`` seconds of waiting to every round."""
    if delay < 0:
        raise ConfigError(f"latency must be non-negative, got {delay}")
    if delay == 0:
        return transport
    return LatencyTransport(transport, delay)


def _expect(reply: Message, kind: MessageKind) -> Message:
    if reply.kind != kind:
        raise ProtocolViolation(f"expected {kind.name}, got {reply.kind.name}")
    return reply


def _check_index(index: int, pivots: int) -> int:
    if not 1 <= index <= pivots + 1:
        raise ProtocolViolation(f"index {index} outside [1, {pivots + 1}]")
    return index


class ClientOracle:
    """Comparison requests the server may make, with their replies checked."""

    def __init__(self, transport: Transport, chunk_size: int | None = None):
        self.transport = transport
        self.chunk_size = config.chunk_size() if chunk_size is None else chunk_size
        if self.chunk_size < 1:
            raise ConfigError("chunk size must be positive")

    async def sort(self, labels: Sequence[LabelCiphertext]) -> list[LabelCiphertext]:
        request = Message(MessageKind.SORT_REQUEST, labels=tuple(labels))
        reply = _expect(await self.transport.request(request), MessageKind.SORT_REPLY)
        if sorted(x.raw for x in reply.labels) != sorted(x.raw for x in labels):
            raise ProtocolViolation("sort reply is not a permutation of the request")
        return list(reply.labels)

    async def partition(
        self,
        pivots: Sequence[LabelCiphertext],
        labels: Sequence[LabelCiphertext],
        endpoint: LabelCiphertext,
    ) -> tuple[list[int], int]:
        """Child index of every label and of the endpoint, in one round."""
        header = Message(
            MessageKind.SPLIT_PIVOTS,
            labels=tuple(pivots),
            indices=(len(labels),),
            endpoint=endpoint,
        )
        step = self.chunk_size
        chunks = [
            Message(MessageKind.SPLIT_STREAM_ITEM, labels=tuple(labels[i : i + step]))
            for i in range(0, len(labels), step)
        ]
        reply = _expect(
            await self.transport.stream(header, chunks), MessageKind.CLASSIFY_REPLY
        )
        if len(reply.indices) != len(labels) + 1:
            raise ProtocolViolation(
                f"classified {len(reply.indices) - 1} of {len(labels)} items"
            )
        indices = [_check_index(i, len(pivots)) for i in reply.indices]
        return indices[:-1], indices[-1]

    async def locate(
        self, pivots: Sequence[LabelCiphertext], endpoint: LabelCiphertext
    ) -> int:
        request = Message(
            MessageKind.LOCATE_REQUEST, labels=tuple(pivots), endpoint=endpoint
        )
        reply = _expect(await self.transport.request(request), MessageKind.LOCATE_REPLY)
        return _check_index(reply.indices[0], len(pivots))
