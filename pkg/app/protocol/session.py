"""Running client operations against a server endpoint."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol
from uuid import uuid4

import anyio
from loguru import logger

from app.codec import LabelCiphertext
from app.exceptions import PopeError, SessionError
from app.pope.tree import EncryptedBlock
from app.protocol.messages import Message, MessageKind
from app.protocol.transcript import Transcript
from app.protocol.transport import ClientOracle, InProcessTransport, simulated_latency

if TYPE_CHECKING:
    from app.client import ClientResponder, PopeClient, SearchResult


@dataclass(frozen=True, slots=True)
class InsertOp:
    label: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class RangeOp:
    lo: int
    hi: int


Operation = InsertOp | RangeOp


class Service(Protocol):
    """What a server endpoint drives: ``PopeService`` or ``MopeService``."""

    insert_kind: MessageKind
    name: str

    async def insert(self, block: EncryptedBlock, oracle: ClientOracle | None) -> None: ...

    async def search(
        self, left: LabelCiphertext, right: LabelCiphertext, oracle: ClientOracle
    ) -> list[EncryptedBlock]: ...


class LocalEndpoint:
    """In-process server endpoint; each call gets its own transport."""

    def __init__(
        self,
        service: Service,
        *,
        delay: float = 0.0,
        chunk_size: int | None = None,
        wire: bool = False,
    ):
        self.service = service
        self.delay = delay
        self.chunk_size = chunk_size
        self.wire = wire

    def _oracle(self, responder: ClientResponder, transcript: Transcript) -> ClientOracle:
        transport = InProcessTransport(responder, transcript, wire=self.wire)
        return ClientOracle(simulated_latency(transport, self.delay), self.chunk_size)

    async def insert(
        self, block: EncryptedBlock, responder: ClientResponder, transcript: Transcript
    ) -> None:
        message = Message(
            self.service.insert_kind, labels=(block.label,), payloads=(block.payload,)
        )
        if self.service.insert_kind == MessageKind.INSERT:
            transcript.record_one_way(message)
            await self.service.insert(block, None)
            return
        transcript.record_call_start(message)
        await self.service.insert(block, self._oracle(responder, transcript))
        transcript.record_call_end(Message(MessageKind.DONE))

    async def search(
        self,
        left: LabelCiphertext,
        right: LabelCiphertext,
        responder: ClientResponder,
        transcript: Transcript,
    ) -> list[EncryptedBlock]:
        transcript.record_call_start(Message(MessageKind.SEARCH, labels=(left, right)))
        blocks = await self.service.search(left, right, self._oracle(responder, transcript))
        transcript.record_call_end(
            Message(
                MessageKind.RANGE_RESULT,
                labels=tuple(b.label for b in blocks),
                payloads=tuple(b.payload for b in blocks),
            )
        )
        return blocks


async def run_session(
    client: PopeClient,
    endpoint,
    op: Operation,
    transcript: Transcript | None = None,
) -> tuple[SearchResult | None, Transcript]:
    """Run one insert or range query; returns its result and transcript."""
    transcript = transcript if transcript is not None else Transcript()
    with logger.contextualize(session_id=uuid4().hex[:12]):
        try:
            if isinstance(op, InsertOp):
                transcript.begin_op("insert")
                await client.insert(endpoint, op.label, op.payload, transcript)
                return None, transcript
            transcript.begin_op("search")
            result = await client.search(endpoint, op.lo, op.hi, transcript)
            return result, transcript
        except PopeError as exc:
            logger.warning(f"session aborted: {exc.detail}")
            raise
        except (anyio.BrokenResourceError, anyio.EndOfStream, OSError) as exc:
            logger.warning(f"session lost its connection: {exc!r}")
            raise SessionError(f"connection lost: {exc!r}") from exc
