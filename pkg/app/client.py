"""Key-holding client.

The client keeps only its key and configuration between operations. While
a session runs, a ``ClientResponder`` answers the server's comparison
requests holding at most one node's pivots, one stream chunk and the
endpoint.
"""
from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Protocol, Sequence

from app.codec import (
    LabelCiphertext,
    Origin,
    SecretKey,
    dec_label,
    dec_payload,
    enc_label,
    enc_payload,
)
from app.exceptions import InvalidRangeError, ProtocolViolation
from app.pope.tree import EncryptedBlock
from app.protocol.messages import Message, MessageKind
from app.protocol.transcript import Transcript

OrderKey = Callable[[LabelCiphertext], Any]


class ServerEndpoint(Protocol):
    async def insert(
        self, block: EncryptedBlock, responder: ClientResponder, transcript: Transcript
    ) -> None: ...

    async def search(
        self,
        left: LabelCiphertext,
        right: LabelCiphertext,
        responder: ClientResponder,
        transcript: Transcript,
    ) -> list[EncryptedBlock]: ...


def sort_labels(order: OrderKey, labels: Sequence[LabelCiphertext]) -> list[LabelCiphertext]:
    return sorted(labels, key=order)


def classify(order: OrderKey, sorted_pivots: Sequence[Any], label: LabelCiphertext) -> int:
    """1-based child index ``i`` with ``p[i-1] < x <= p[i]``."""
    return bisect_left(sorted_pivots, order(label)) + 1


class ClientResponder:
    """Answers one session's requests; all of its state is scratch."""

    def __init__(
        self, order: OrderKey, capacity: int, comparison_budget: int | None = None
    ):
        self.order = order
        self.capacity = capacity
        self.comparison_budget = comparison_budget
        self.comparisons = 0
        self.peak_working_set = 0
        self._pivots: list[Any] | None = None
        self._endpoint: LabelCiphertext | None = None
        self._expected = 0
        self._indices: list[int] = []

    def _spend(self, amount: int) -> None:
        self.comparisons += amount
        if self.comparison_budget is not None and self.comparisons > self.comparison_budget:
            raise ProtocolViolation(
                f"server exceeded the comparison budget of {self.comparison_budget}"
            )

    def _hold(self, amount: int) -> None:
        self.peak_working_set = max(self.peak_working_set, amount)

    def _check_pivots(self, pivots: Sequence[LabelCiphertext]) -> None:
        if len(pivots) > self.capacity:
            raise ProtocolViolation(
                f"server sent {len(pivots)} pivots, capacity is {self.capacity}"
            )

    def sort_pivots(self, labels: Sequence[LabelCiphertext]) -> list[LabelCiphertext]:
        self._check_pivots(labels)
        self._spend(len(labels))
        self._hold(len(labels))
        return sort_labels(self.order, labels)

    def locate_endpoint(
        self, sorted_pivots: Sequence[LabelCiphertext], endpoint: LabelCiphertext
    ) -> int:
        self._check_pivots(sorted_pivots)
        self._spend(1)
        self._hold(len(sorted_pivots) + 1)
        return classify(self.order, [self.order(p) for p in sorted_pivots], endpoint)

    def open_split(
        self, sorted_pivots: Sequence[LabelCiphertext], endpoint: LabelCiphertext, expected: int
    ) -> None:
        """Start a partition: keep the pivots until ``expected`` labels are classified."""
        if self._pivots is not None:
            raise ProtocolViolation("new split opened before the previous one closed")
        self._check_pivots(sorted_pivots)
        pivots = [self.order(p) for p in sorted_pivots]
        if any(a >= b for a, b in zip(pivots, pivots[1:])):
            raise ProtocolViolation("split pivots are not sorted")
        self._pivots = pivots
        self._endpoint = endpoint
        self._expected = expected
        self._indices = []
        self._hold(len(pivots) + 1)

    def classify_stream(self, labels: Sequence[LabelCiphertext]) -> list[int]:
        """Child indices of one stream chunk against the open split's pivots."""
        if self._pivots is None:
            raise ProtocolViolation("stream chunk without split pivots")
        if len(self._indices) + len(labels) > self._expected:
            raise ProtocolViolation("stream is longer than announced")
        self._spend(len(labels))
        self._hold(len(self._pivots) + len(labels) + 1)
        indices = [classify(self.order, self._pivots, label) for label in labels]
        self._indices.extend(indices)
        return indices

    @property
    def split_done(self) -> bool:
        return self._pivots is not None and len(self._indices) == self._expected

    def handle(self, message: Message) -> Message | None:
        kind = message.kind
        if kind == MessageKind.SORT_REQUEST:
            ordered = self.sort_pivots(message.labels)
            return Message(MessageKind.SORT_REPLY, labels=tuple(ordered))

        if kind == MessageKind.LOCATE_REQUEST:
            index = self.locate_endpoint(message.labels, message.endpoint)
            return Message(MessageKind.LOCATE_REPLY, indices=(index,))

        if kind == MessageKind.SPLIT_PIVOTS:
            self.open_split(message.labels, message.endpoint, message.indices[0])
        elif kind == MessageKind.SPLIT_STREAM_ITEM:
            self.classify_stream(message.labels)
        else:
            raise ProtocolViolation(f"client cannot answer {kind.name}")
        return self._finish_split() if self.split_done else None

    def _finish_split(self) -> Message:
        self._spend(1)
        endpoint_index = classify(self.order, self._pivots, self._endpoint)
        indices = (*self._indices, endpoint_index)
        self._pivots, self._endpoint, self._indices = None, None, []
        return Message(MessageKind.CLASSIFY_REPLY, indices=indices)


@dataclass(frozen=True, slots=True)
class SearchResult:
    items: list[tuple[int, bytes]]
    peak_working_set: int = 0
    comparisons: int = 0

    @property
    def labels(self) -> list[int]:
        return [label for label, _ in self.items]


class PopeClient:
    """Encrypts, decrypts and answers comparisons; stores no data items."""

    def __init__(
        self,
        key: SecretKey,
        capacity: int,
        *,
        rng: random.Random | None = None,
        comparison_budget: int | None = None,
    ):
        self.key = key
        self.capacity = capacity
        self.comparison_budget = comparison_budget
        self._rng = rng

    def responder(self) -> ClientResponder:
        return ClientResponder(
            partial(dec_label, self.key), self.capacity, self.comparison_budget
        )

    def encrypt_block(self, label: int, payload: bytes) -> EncryptedBlock:
        return EncryptedBlock(
            enc_label(self.key, label, Origin.INSERT, self._rng),
            enc_payload(self.key, payload, self._rng),
        )

    def encrypt_endpoints(self, lo: int, hi: int) -> tuple[LabelCiphertext, LabelCiphertext]:
        if lo > hi:
            raise InvalidRangeError(f"empty range [{lo}, {hi}]")
        return (
            enc_label(self.key, lo, Origin.LEFT, self._rng),
            enc_label(self.key, hi, Origin.RIGHT, self._rng),
        )

    async def insert(
        self,
        server: ServerEndpoint,
        label: int,
        payload: bytes,
        transcript: Transcript | None = None,
    ) -> None:
        await server.insert(
            self.encrypt_block(label, payload),
            self.responder(),
            transcript if transcript is not None else Transcript(),
        )

    async def search(
        self, server: ServerEndpoint, lo: int, hi: int, transcript: Transcript | None = None
    ) -> SearchResult:
        left, right = self.encrypt_endpoints(lo, hi)
        return await self.search_endpoints(server, left, right, transcript)

    async def search_endpoints(
        self,
        server: ServerEndpoint,
        left: LabelCiphertext,
        right: LabelCiphertext,
        transcript: Transcript | None = None,
    ) -> SearchResult:
        responder = self.responder()
        blocks = await server.search(
            left, right, responder, transcript if transcript is not None else Transcript()
        )
        low, high = dec_label(self.key, left), dec_label(self.key, right)
        matches = []
        for block in blocks:
            value = dec_label(self.key, block.label)
            if low < value < high:
                matches.append((value, dec_payload(self.key, block.payload)))
        matches.sort(key=lambda item: item[0])
        return SearchResult(
            [(value.label, payload) for value, payload in matches],
            responder.peak_working_set,
            responder.comparisons,
        )
