from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from app.codec import LabelCiphertext
from app.exceptions import FramingError

MAX_INDEX = 2**31 - 1


class MessageKind(IntEnum):
    INSERT = 1
    SPLIT_PIVOTS = 2
    SPLIT_STREAM_ITEM = 3
    CLASSIFY_REPLY = 4
    SORT_REQUEST = 5
    SORT_REPLY = 6
    LOCATE_REQUEST = 7
    LOCATE_REPLY = 8
    RANGE_RESULT = 9
    ERROR = 10
    SEARCH = 11
    MOPE_INSERT = 12
    DONE = 13


# server -> client messages that the client must answer (possibly after a stream)
SERVER_REQUESTS = frozenset(
    {
        MessageKind.SPLIT_PIVOTS,
        MessageKind.SPLIT_STREAM_ITEM,
        MessageKind.SORT_REQUEST,
        MessageKind.LOCATE_REQUEST,
    }
)
CLIENT_REPLIES = frozenset(
    {MessageKind.CLASSIFY_REPLY, MessageKind.SORT_REPLY, MessageKind.LOCATE_REPLY}
)


@dataclass(frozen=True, slots=True)
class Message:
    """One protocol message.

    The body is a union of four optional parts; which parts a kind uses is
    fixed by ``validate``. Ciphertext bodies are opaque bytes to the server.
    """

    kind: MessageKind
    labels: tuple[LabelCiphertext, ...] = ()
    payloads: tuple[bytes, ...] = ()
    indices: tuple[int, ...] = ()
    endpoint: LabelCiphertext | None = None
    text: str = ""


def error_message(code: int, detail: str) -> Message:
    return Message(MessageKind.ERROR, indices=(code,), text=detail)


def _require(condition: bool, kind: MessageKind, what: str) -> None:
    if not condition:
        raise FramingError(f"{kind.name}: {what}")


def validate(message: Message) -> Message:
    """Check the per-kind body shape; returns the message for chaining."""
    kind = message.kind
    labels, payloads, indices = message.labels, message.payloads, message.indices
    _require(all(0 <= i <= MAX_INDEX for i in indices), kind, "index out of bounds")

    if kind in (MessageKind.INSERT, MessageKind.MOPE_INSERT):
        _require(len(labels) == 1 and len(payloads) == 1, kind, "needs one block")
        _require(not indices and message.endpoint is None, kind, "unexpected body")
    elif kind == MessageKind.SEARCH:
        _require(len(labels) == 2 and not payloads, kind, "needs two endpoints")
    elif kind == MessageKind.SPLIT_PIVOTS:
        _require(message.endpoint is not None, kind, "missing endpoint")
        _require(len(indices) == 1 and not payloads, kind, "needs the stream length")
    elif kind == MessageKind.SPLIT_STREAM_ITEM:
        _require(len(labels) >= 1 and not payloads and not indices, kind, "empty chunk")
    elif kind == MessageKind.CLASSIFY_REPLY:
        _require(len(indices) >= 1 and not labels, kind, "missing endpoint index")
        _require(min(indices) >= 1, kind, "indices are 1-based")
    elif kind in (MessageKind.SORT_REQUEST, MessageKind.SORT_REPLY):
        _require(not payloads and not indices, kind, "labels only")
    elif kind == MessageKind.LOCATE_REQUEST:
        _require(message.endpoint is not None and not payloads, kind, "missing endpoint")
    elif kind == MessageKind.LOCATE_REPLY:
        _require(len(indices) == 1 and indices[0] >= 1 and not labels, kind, "one index")
    elif kind == MessageKind.RANGE_RESULT:
        _require(len(labels) == len(payloads), kind, "labels and payloads differ")
    elif kind == MessageKind.ERROR:
        _require(len(indices) == 1, kind, "missing error code")
    elif kind == MessageKind.DONE:
        _require(not labels and not payloads and not indices, kind, "must be empty")
    return message


def ciphertext_count(message: Message) -> int:
    """Ciphertexts carried; an inserted block (label + payload) counts once."""
    return len(message.labels) + (message.endpoint is not None)
