"""Server-visible record of a run and the cost counters derived from it.

Only server to client exchanges that block on a client reply count as
rounds. Client to server inserts count as one-way messages; a search or an
mOPE insert request and its final answer count as neither.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from app.exceptions import ProtocolViolation
from app.protocol.messages import Message, MessageKind, ciphertext_count

CLIENT_TO_SERVER = "c2s"
SERVER_TO_CLIENT = "s2c"

CATEGORIES = ("insert", "endpoint", "pivot", "stream", "sort", "locate")


@dataclass(frozen=True, slots=True)
class TranscriptEntry:
    direction: str
    kind: MessageKind
    n_labels: int
    n_payloads: int
    has_endpoint: bool
    indices: tuple[int, ...]
    round_no: int | None = None


@dataclass(slots=True)
class OpCost:
    count: int = 0
    rounds: int = 0
    one_way_msgs: int = 0
    ciphertexts: int = 0

    def __add__(self, other: OpCost) -> OpCost:
        return OpCost(
            self.count + other.count,
            self.rounds + other.rounds,
            self.one_way_msgs + other.one_way_msgs,
            self.ciphertexts + other.ciphertexts,
        )


def _categorise(message: Message) -> dict[str, int]:
    kind = message.kind
    labels = len(message.labels)
    endpoint = int(message.endpoint is not None)
    if kind in (MessageKind.INSERT, MessageKind.MOPE_INSERT):
        return {"insert": labels}
    if kind == MessageKind.SEARCH:
        return {"endpoint": labels}
    if kind in (MessageKind.SPLIT_PIVOTS, MessageKind.LOCATE_REQUEST):
        return {"pivot": labels, "locate": endpoint}
    if kind == MessageKind.SPLIT_STREAM_ITEM:
        return {"stream": labels}
    if kind in (MessageKind.SORT_REQUEST, MessageKind.SORT_REPLY):
        return {"sort": labels}
    return {}


@dataclass
class Transcript:
    keep_messages: bool = False
    entries: list[TranscriptEntry] = field(default_factory=list)
    messages: list[tuple[str, Message]] = field(default_factory=list)
    rounds: int = 0
    one_way_msgs: int = 0
    ciphertexts_sent: int = 0
    categories: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    per_op: dict[str, OpCost] = field(default_factory=dict)
    _op: str | None = field(default=None, repr=False)

    def begin_op(self, name: str) -> None:
        self._op = name
        self.per_op.setdefault(name, OpCost()).count += 1

    def _cost(self) -> OpCost | None:
        return self.per_op.get(self._op) if self._op is not None else None

    def _record(self, direction: str, message: Message, round_no: int | None) -> None:
        self.entries.append(
            TranscriptEntry(
                direction,
                message.kind,
                len(message.labels),
                len(message.payloads),
                message.endpoint is not None,
                message.indices,
                round_no,
            )
        )
        if self.keep_messages:
            self.messages.append((direction, message))
        if message.kind == MessageKind.RANGE_RESULT:
            return
        sent = ciphertext_count(message)
        self.ciphertexts_sent += sent
        for name, amount in _categorise(message).items():
            self.categories[name] += amount
        cost = self._cost()
        if cost is not None:
            cost.ciphertexts += sent

    def record_one_way(self, message: Message) -> None:
        self._record(CLIENT_TO_SERVER, message, None)
        self.one_way_msgs += 1
        cost = self._cost()
        if cost is not None:
            cost.one_way_msgs += 1

    def record_call_start(self, message: Message) -> None:
        self._record(CLIENT_TO_SERVER, message, None)

    def record_call_end(self, message: Message) -> None:
        self._record(SERVER_TO_CLIENT, message, None)

    def record_exchange(self, requests: Sequence[Message], reply: Message) -> None:
        """One blocking round: pipelined server requests, then one reply."""
        if not requests:
            raise ProtocolViolation("a round needs at least one server request")
        self.rounds += 1
        for message in requests:
            self._record(SERVER_TO_CLIENT, message, self.rounds)
        self._record(CLIENT_TO_SERVER, reply, self.rounds)
        cost = self._cost()
        if cost is not None:
            cost.rounds += 1

    def recount_rounds(self) -> int:
        return len({e.round_no for e in self.entries if e.round_no is not None})

    def check_accounting(self) -> None:
        if sum(self.categories.values()) != self.ciphertexts_sent:
            raise ProtocolViolation(
                f"categories sum to {sum(self.categories.values())}, "
                f"ciphertexts sent is {self.ciphertexts_sent}"
            )
        if self.recount_rounds() != self.rounds:
            raise ProtocolViolation("round counter disagrees with the entries")

    def structure(self) -> list[tuple]:
        """Shape of every message with ciphertext bodies erased."""
        return [
            (e.direction, e.kind, e.n_labels, e.n_payloads, e.has_endpoint, e.indices)
            for e in self.entries
        ]


@dataclass(frozen=True)
class Metrics:
    """Aggregated counters; ``merge`` returns a new value."""

    rounds: int = 0
    one_way_msgs: int = 0
    ciphertexts_sent: int = 0
    categories: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    per_op: dict[str, OpCost] = field(default_factory=dict)

    def merge(self, transcript: Transcript) -> Metrics:
        per_op = dict(self.per_op)
        for name, cost in transcript.per_op.items():
            per_op[name] = per_op.get(name, OpCost()) + cost
        return replace(
            self,
            rounds=self.rounds + transcript.rounds,
            one_way_msgs=self.one_way_msgs + transcript.one_way_msgs,
            ciphertexts_sent=self.ciphertexts_sent + transcript.ciphertexts_sent,
            categories={
                name: self.categories.get(name, 0) + transcript.categories.get(name, 0)
                for name in CATEGORIES
            },
            per_op=per_op,
        )

    @classmethod
    def collect(cls, transcripts: Iterable[Transcript]) -> Metrics:
        metrics = cls()
        for transcript in transcripts:
            metrics = metrics.merge(transcript)
        return metrics
