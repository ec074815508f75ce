"""TCP transport: the same sessions as in-process, over framed byte streams."""
from __future__ import annotations

from contextlib import asynccontextmanager
from functools import partial
from typing import TYPE_CHECKING, AsyncIterator, Sequence
from uuid import uuid4

import anyio
from anyio.abc import ByteStream, SocketAttribute
from loguru import logger

from app import config
from app.codec import LabelCiphertext
from app.exceptions import ERRORS_BY_CODE, FramingError, PopeError, ProtocolViolation, SessionError
from app.protocol.framing import FrameDecoder, frame
from app.protocol.messages import (
    SERVER_REQUESTS,
    Message,
    MessageKind,
    error_message,
)
from app.pope.tree import EncryptedBlock
from app.protocol.transcript import Transcript
from app.protocol.transport import ClientOracle

if TYPE_CHECKING:
    from app.client import ClientResponder
    from app.protocol.session import Service


_DISCONNECTS = (
    anyio.EndOfStream,
    anyio.BrokenResourceError,
    anyio.ClosedResourceError,
)


class FramedStream:
    """Frames over a byte stream; a malformed frame is dropped whole and reported."""

    def __init__(self, stream: ByteStream):
        self._stream = stream
        self._decoder = FrameDecoder()
        self._limit = config.max_frame_bytes()

    async def send(self, message: Message) -> None:
        await self._stream.send(frame(message))

    async def receive(self) -> Message:
        while True:
            length = self._decoder.next_length
            if length is not None and length > self._limit:
                raise ProtocolViolation(f"peer announced a {length} byte frame")
            message = self._decoder.next_message()
            if message is not None:
                return message
            self._decoder.feed(await self._stream.receive())

    async def aclose(self) -> None:
        await self._stream.aclose()


def _raise_remote(message: Message) -> None:
    code = message.indices[0]
    raise SessionError(f"peer aborted with {ERRORS_BY_CODE.get(code, PopeError).__name__}: {message.text}")


class StreamTransport:
    """Server-side transport writing requests to one client connection."""

    def __init__(self, framed: FramedStream, transcript: Transcript):
        self.framed = framed
        self.transcript = transcript

    async def _reply(self) -> Message:
        reply = await self.framed.receive()
        if reply.kind == MessageKind.ERROR:
            _raise_remote(reply)
        return reply

    async def request(self, message: Message) -> Message:
        await self.framed.send(message)
        reply = await self._reply()
        self.transcript.record_exchange((message,), reply)
        return reply

    async def stream(self, header: Message, chunks: Sequence[Message]) -> Message:
        for message in (header, *chunks):
            await self.framed.send(message)
        reply = await self._reply()
        self.transcript.record_exchange((header, *chunks), reply)
        return reply


async def _reject(framed: FramedStream, exc: FramingError) -> None:
    logger.warning(f"dropped a bad frame: {exc.detail}")
    await framed.send(error_message(exc.code, exc.detail))


async def _serve_one(
    framed: FramedStream, service: Service, message: Message, oracle: ClientOracle
) -> None:
    if message.kind == service.insert_kind:
        block = _block(message)
        if message.kind == MessageKind.MOPE_INSERT:
            await service.insert(block, oracle)
            await framed.send(Message(MessageKind.DONE))
        else:
            await service.insert(block, None)
    elif message.kind == MessageKind.SEARCH:
        left, right = message.labels
        blocks = await service.search(left, right, oracle)
        await framed.send(
            Message(
                MessageKind.RANGE_RESULT,
                labels=tuple(b.label for b in blocks),
                payloads=tuple(b.payload for b in blocks),
            )
        )
    else:
        raise ProtocolViolation(f"unexpected {message.kind.name} from client")


async def serve_connection(
    stream: ByteStream, service: Service, chunk_size: int | None = None
) -> None:
    """Serve one client connection until it closes.

    A malformed frame costs the client the current operation and an ERROR
    reply; the connection stays open. Any other error ends it.
    """
    framed = FramedStream(stream)
    transcript = Transcript()
    with logger.contextualize(session_id=uuid4().hex[:12]):
        logger.info(f"{service.name} connection opened")
        try:
            while True:
                try:
                    message = await framed.receive()
                except _DISCONNECTS:
                    break
                except FramingError as exc:
                    await _reject(framed, exc)
                    continue
                oracle = ClientOracle(StreamTransport(framed, transcript), chunk_size)
                try:
                    await _serve_one(framed, service, message, oracle)
                except FramingError as exc:
                    await _reject(framed, exc)
        except PopeError as exc:
            logger.error(f"session aborted: {exc.detail}")
            try:
                await framed.send(error_message(exc.code, exc.detail))
            except _DISCONNECTS:
                pass
        except _DISCONNECTS as exc:
            logger.warning(f"client went away mid-session: {exc!r}")
        finally:
            logger.info(f"connection closed after {transcript.rounds} rounds")
            await framed.aclose()


def _block(message: Message) -> EncryptedBlock:
    return EncryptedBlock(message.labels[0], message.payloads[0])


class RemoteEndpoint:
    """Client side of a TCP connection; records the transcript as seen on the wire."""

    def __init__(self, framed: FramedStream, insert_kind: MessageKind, delay: float = 0.0):
        self.framed = framed
        self.insert_kind = insert_kind
        self.delay = delay

    async def _answer_requests(
        self, responder: ClientResponder, transcript: Transcript
    ) -> Message:
        pending: list[Message] = []
        while True:
            try:
                message = await self.framed.receive()
            except FramingError as exc:
                await self.framed.send(error_message(exc.code, exc.detail))
                raise
            if message.kind == MessageKind.ERROR:
                _raise_remote(message)
            if message.kind not in SERVER_REQUESTS:
                if pending:
                    raise ProtocolViolation("server finished with a request unanswered")
                transcript.record_call_end(message)
                return message
            pending.append(message)
            try:
                reply = responder.handle(message)
            except PopeError as exc:
                await self.framed.send(error_message(exc.code, exc.detail))
                raise
            if reply is None:
                continue
            if self.delay:
                await anyio.sleep(self.delay)
            await self.framed.send(reply)
            transcript.record_exchange(pending, reply)
            pending = []

    async def insert(
        self, block: EncryptedBlock, responder: ClientResponder, transcript: Transcript
    ) -> None:
        message = Message(self.insert_kind, labels=(block.label,), payloads=(block.payload,))
        await self.framed.send(message)
        if self.insert_kind == MessageKind.INSERT:
            transcript.record_one_way(message)
            return
        transcript.record_call_start(message)
        final = await self._answer_requests(responder, transcript)
        if final.kind != MessageKind.DONE:
            raise ProtocolViolation(f"expected DONE, got {final.kind.name}")

    async def search(
        self,
        left: LabelCiphertext,
        right: LabelCiphertext,
        responder: ClientResponder,
        transcript: Transcript,
    ) -> list[EncryptedBlock]:
        message = Message(MessageKind.SEARCH, labels=(left, right))
        await self.framed.send(message)
        transcript.record_call_start(message)
        final = await self._answer_requests(responder, transcript)
        if final.kind != MessageKind.RANGE_RESULT:
            raise ProtocolViolation(f"expected RANGE_RESULT, got {final.kind.name}")
        return [EncryptedBlock(l, p) for l, p in zip(final.labels, final.payloads)]


@asynccontextmanager
async def serve_tcp(
    service: Service,
    host: str | None = None,
    port: int = 0,
    chunk_size: int | None = None,
) -> AsyncIterator[tuple[str, int]]:
    """Run a listener in the background; yields the bound address."""
    host = host or config.SOCKET_HOST
    listener = await anyio.create_tcp_listener(local_host=host, local_port=port)
    bound = listener.extra(SocketAttribute.local_port)
    handler = partial(serve_connection, service=service, chunk_size=chunk_size)
    # errors from the caller's block must not come back wrapped in an ExceptionGroup
    failure: Exception | None = None
    try:
        async with anyio.create_task_group() as tg:
            tg.start_soon(listener.serve, handler)
            logger.info(f"listening on {host}:{bound}")
            try:
                yield host, bound
            except Exception as exc:
                failure = exc
            finally:
                tg.cancel_scope.cancel()
    finally:
        with anyio.CancelScope(shield=True):
            await listener.aclose()
    if failure is not None:
        raise failure


@asynccontextmanager
async def connect_tcp(
    host: str, port: int, insert_kind: MessageKind, delay: float = 0.0
) -> AsyncIterator[RemoteEndpoint]:
    stream = await anyio.connect_tcp(host, port)
    framed = FramedStream(stream)
    try:
        yield RemoteEndpoint(framed, insert_kind, delay)
    finally:
        await framed.aclose()
