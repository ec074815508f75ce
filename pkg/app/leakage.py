"""What the server knows about plaintext order.

``PartialOrderState`` tracks the ordering facts revealed during a run.
Promoted pivots form a chain; every other item is only known to lie
between two pivots (or beyond the outermost ones). Two items are
comparable once their intervals no longer overlap.

The module also has the simulator side of the security argument: a
randomised order oracle, the leakage profile of an operation sequence,
and a simulator producing a transcript from that profile alone.
"""
from __future__ import annotations

import random
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cmp_to_key
from math import comb, log
from typing import Hashable, Iterable, Iterator, Mapping, Sequence

from loguru import logger

from app.client import ClientResponder, PopeClient
from app.codec import (
    EffectiveTuple,
    LabelCiphertext,
    Origin,
    SecretKey,
    dec_label,
    enc_label,
    enc_payload,
    keygen,
)
from app.exceptions import LeakageIntegrityError
from app.pope.service import PopeService
from app.pope.tree import EncryptedBlock
from app.protocol.session import InsertOp, LocalEndpoint, Operation
from app.protocol.transcript import Transcript

ItemId = Hashable

_LOW = Fraction(0)
_HIGH = Fraction(1)
_HEAD = object()


@dataclass(frozen=True, slots=True)
class Fact:
    smaller: ItemId
    larger: ItemId


@dataclass(frozen=True, slots=True)
class BucketRow:
    lo_gap: int
    hi_gap: int
    size: int


@dataclass(frozen=True)
class KnowledgeSnapshot:
    pivot_count: int
    item_count: int
    incomparable_pairs: int
    buckets: list[BucketRow]

    def to_table(self) -> str:
        lines = ["lo_gap\thi_gap\tsize"]
        lines.extend(f"{r.lo_gap}\t{r.hi_gap}\t{r.size}" for r in self.buckets)
        return "\n".join(lines)


class PartialOrderState:
    def __init__(self) -> None:
        self._keys: dict[ItemId, Fraction] = {}
        self._next: dict[ItemId, ItemId | None] = {_HEAD: None}
        self._by_key: dict[Fraction, ItemId] = {}
        self._bounds: dict[ItemId, tuple[ItemId | None, ItemId | None]] = {}
        self.history: list[Fact] = []

    @property
    def item_count(self) -> int:
        return len(self._keys) + len(self._bounds)

    @property
    def pivot_count(self) -> int:
        return len(self._keys)

    def items(self) -> list[ItemId]:
        return [*self._keys, *self._bounds]

    def is_pivot(self, item: ItemId) -> bool:
        return item in self._keys

    def pivots(self) -> list[ItemId]:
        out, item = [], self._next[_HEAD]
        while item is not None:
            out.append(item)
            item = self._next[item]
        return out

    def _lo_key(self, item: ItemId | None) -> Fraction:
        return _LOW if item is None else self._keys[item]

    def _hi_key(self, item: ItemId | None) -> Fraction:
        return _HIGH if item is None else self._keys[item]

    def add_item(self, item: ItemId) -> None:
        if item in self._keys or item in self._bounds:
            raise LeakageIntegrityError(f"item {item!r} added twice")
        self._bounds[item] = (None, None)

    def record_bounds(
        self, item: ItemId, lo: ItemId | None, hi: ItemId | None
    ) -> None:
        """Record that ``lo < item < hi``; ``None`` is unbounded."""
        for pivot in (lo, hi):
            if pivot is not None and pivot not in self._keys:
                raise LeakageIntegrityError(f"bound {pivot!r} is not a pivot")
        if item in self._keys:
            if not self._lo_key(lo) < self._keys[item] < self._hi_key(hi):
                raise LeakageIntegrityError("pivot order contradicts the recorded chain")
            return
        if item not in self._bounds:
            raise LeakageIntegrityError(f"unknown item {item!r}")
        cur_lo, cur_hi = self._bounds[item]
        new_lo = lo if self._lo_key(lo) > self._lo_key(cur_lo) else cur_lo
        new_hi = hi if self._hi_key(hi) < self._hi_key(cur_hi) else cur_hi
        if self._lo_key(new_lo) >= self._hi_key(new_hi):
            raise LeakageIntegrityError(f"item {item!r} has an empty interval")
        self._bounds[item] = (new_lo, new_hi)
        if lo is not None:
            self.history.append(Fact(lo, item))
        if hi is not None:
            self.history.append(Fact(item, hi))

    def record_comparison(self, a: ItemId, b: ItemId, a_is_smaller: bool) -> None:
        if a in self._keys and b in self._keys:
            if (self._keys[a] < self._keys[b]) != a_is_smaller:
                raise LeakageIntegrityError("comparison contradicts the pivot chain")
            self.history.append(Fact(a, b) if a_is_smaller else Fact(b, a))
        elif a in self._keys:
            self.record_bounds(b, a, None) if a_is_smaller else self.record_bounds(b, None, a)
        elif b in self._keys:
            self.record_bounds(a, None, b) if a_is_smaller else self.record_bounds(a, b, None)
        else:
            raise LeakageIntegrityError("only comparisons against a pivot can be recorded")

    def record_pivot_promotion(self, ordered: Sequence[ItemId]) -> None:
        """Promote items, given in ascending order, into one pivot gap."""
        if len(set(ordered)) != len(ordered):
            raise LeakageIntegrityError("promoted items repeat")
        for item in ordered:
            if item not in self._bounds:
                raise LeakageIntegrityError(f"cannot promote {item!r}")
        lo_key = max(self._lo_key(self._bounds[i][0]) for i in ordered)
        hi_key = min(self._hi_key(self._bounds[i][1]) for i in ordered)
        if lo_key >= hi_key:
            raise LeakageIntegrityError("promoted items have disjoint intervals")
        lo = self._by_key.get(lo_key, _HEAD)
        hi = self._by_key.get(hi_key)
        if self._next[lo] != hi:
            raise LeakageIntegrityError("promoted items do not share a single gap")

        step = (hi_key - lo_key) / (len(ordered) + 1)
        chain = [] if lo is _HEAD else [lo]
        prev = lo
        for n, item in enumerate(ordered, start=1):
            del self._bounds[item]
            self._keys[item] = lo_key + step * n
            self._by_key[self._keys[item]] = item
            self._next[prev] = item
            prev = item
            chain.append(item)
        self._next[prev] = hi
        if hi is not None:
            chain.append(hi)
        self.history.extend(Fact(a, b) for a, b in zip(chain, chain[1:]))

    def _gap_spans(self) -> list[tuple[int, int]]:
        rank = {item: n for n, item in enumerate(self.pivots())}
        k = len(rank)
        spans = []
        for lo, hi in self._bounds.values():
            spans.append((0 if lo is None else rank[lo] + 1, k if hi is None else rank[hi]))
        return spans

    def incomparable_pairs(self) -> int:
        spans = self._gap_spans()
        with_pivots = sum(hi - lo for lo, hi in spans)
        starts = sorted(lo for lo, _ in spans)
        comparable = sum(len(starts) - bisect_right(starts, hi) for _, hi in spans)
        return with_pivots + comb(len(spans), 2) - comparable


def closure_incomparable_pairs(items: Iterable[ItemId], facts: Iterable[Fact]) -> int:
    """Brute-force count over the transitive closure of ``facts``."""
    index = {item: n for n, item in enumerate(items)}
    n = len(index)
    larger = [0] * n
    indegree = [0] * n
    for fact in facts:
        a, b = index[fact.smaller], index[fact.larger]
        if not larger[a] >> b & 1:
            larger[a] |= 1 << b
            indegree[b] += 1
    order = [i for i in range(n) if indegree[i] == 0]
    for i in order:
        bits = larger[i]
        while bits:
            low = bits & -bits
            j = low.bit_length() - 1
            indegree[j] -= 1
            if indegree[j] == 0:
                order.append(j)
            bits ^= low
    if len(order) != n:
        raise LeakageIntegrityError("recorded facts contain a cycle")
    reach = [0] * n
    for i in reversed(order):
        bits, acc = larger[i], larger[i]
        while bits:
            low = bits & -bits
            acc |= reach[low.bit_length() - 1]
            bits ^= low
        reach[i] = acc
    return comb(n, 2) - sum(r.bit_count() for r in reach)


def knowledge_snapshot(state: PartialOrderState) -> KnowledgeSnapshot:
    sizes: dict[tuple[int, int], int] = defaultdict(int)
    for span in state._gap_spans():
        sizes[span] += 1
    return KnowledgeSnapshot(
        pivot_count=state.pivot_count,
        item_count=state.item_count,
        incomparable_pairs=state.incomparable_pairs(),
        buckets=[BucketRow(lo, hi, size) for (lo, hi), size in sorted(sizes.items())],
    )


class KnowledgeTracker:
    """Observer for both servers that feeds a ``PartialOrderState``."""

    def __init__(self, state: PartialOrderState | None = None):
        self.state = state or PartialOrderState()

    @staticmethod
    def _id(label: LabelCiphertext | None) -> bytes | None:
        return None if label is None else label.raw

    def on_insert(self, label: LabelCiphertext) -> None:
        self.state.add_item(label.raw)

    def on_classify(self, label, lo, hi) -> None:
        if not self.state.is_pivot(label.raw):
            self.state.record_bounds(label.raw, self._id(lo), self._id(hi))

    def on_promote(self, labels: Sequence[LabelCiphertext]) -> None:
        self.state.record_pivot_promotion([label.raw for label in labels])

    def on_place(self, label, lo, hi) -> None:
        self.state.record_bounds(label.raw, self._id(lo), self._id(hi))
        self.state.record_pivot_promotion([label.raw])


@dataclass(frozen=True)
class IncomparableBound:
    k: int
    measured: int
    closed_form: float
    regime_ok: bool


def incomparable_lower_bound(
    n: int, m: int, capacity: int, k: int, c: float = 1.0
) -> IncomparableBound:
    """Lower bound on incomparable pairs after ``m`` queries over ``n`` items.

    ``measured`` uses the observed pivot count ``k``; ``closed_form`` uses
    the expected ``k ~ c*m*L*log n/log L`` and only means something while
    ``m*L < n``.
    """
    bucket = (n - k) // (k + 1) if n > k else 0
    measured = (k + 1) * comb(bucket, 2)
    if m == 0 or n < 2:
        closed = float(comb(n, 2))
    else:
        expected_k = c * m * capacity * log(n) / log(max(capacity, 2))
        closed = max(0.0, n * n / expected_k - n)
    return IncomparableBound(k, measured, closed, m * capacity < n)


@dataclass(frozen=True, slots=True)
class ProfileOp:
    kind: str
    indices: tuple[int, ...]


def _numbered(ops: Sequence[Operation]) -> Iterator[tuple[Operation, tuple[int, ...]]]:
    """Give every value in ``ops`` the next index, starting at 1."""
    counter = 1
    for op in ops:
        if isinstance(op, InsertOp):
            yield op, (counter,)
            counter += 1
        else:
            yield op, (counter, counter + 1)
            counter += 2


def profile(ops: Sequence[Operation]) -> list[ProfileOp]:
    """Insert/query pattern with every value replaced by a fresh index."""
    return [
        ProfileOp("insert" if isinstance(op, InsertOp) else "range", indices)
        for op, indices in _numbered(ops)
    ]


class RandomizedOrderOracle:
    """Ranks of profile positions under the effective order."""

    def __init__(self, ranks: Mapping[int, int]):
        self._ranks = dict(ranks)
        self.queries: list[tuple[int, int]] = []

    @classmethod
    def from_ops(cls, ops: Sequence[Operation], rng: random.Random) -> RandomizedOrderOracle:
        keyed = []
        for op, indices in _numbered(ops):
            if isinstance(op, InsertOp):
                keyed.append(((op.label, Origin.INSERT, rng.random()), indices[0]))
            else:
                keyed.append(((op.lo, Origin.LEFT, rng.random()), indices[0]))
                keyed.append(((op.hi, Origin.RIGHT, rng.random()), indices[1]))
        keyed.sort()
        return cls({index: rank for rank, (_, index) in enumerate(keyed)})

    @classmethod
    def from_tuples(cls, tuples: Mapping[int, EffectiveTuple]) -> RandomizedOrderOracle:
        ordered = sorted(tuples, key=tuples.__getitem__)
        return cls({index: rank for rank, index in enumerate(ordered)})

    def compare(self, i: int, j: int) -> bool:
        """True when position ``i`` ranks above position ``j``."""
        self.queries.append((i, j))
        return self._ranks[i] > self._ranks[j]

    def rank(self, i: int) -> int:
        return self._ranks[i]


def _order_key(rord: RandomizedOrderOracle, index_of: dict[bytes, int]):
    def cmp(a: int, b: int) -> int:
        if a == b:
            return 0
        return 1 if rord.compare(a, b) else -1

    wrap = cmp_to_key(cmp)
    return lambda label: wrap(index_of[label.raw])


@dataclass
class ViewRecord:
    transcript: Transcript
    key: SecretKey
    positions: dict[int, LabelCiphertext] = field(default_factory=dict)


async def simulate_view(
    ops_profile: Sequence[ProfileOp],
    rord: RandomizedOrderOracle,
    *,
    capacity: int,
    seed: int,
    chunk_size: int | None = None,
    key: SecretKey | None = None,
) -> ViewRecord:
    """Server view built from the profile and order oracle alone.

    Every label is an encryption of zero under a fresh key; the client's
    answers come from ``rord``.
    """
    sim_key = key or keygen()
    index_of: dict[bytes, int] = {}
    record = ViewRecord(Transcript(keep_messages=True), sim_key)
    endpoint = LocalEndpoint(PopeService(capacity, seed=seed), chunk_size=chunk_size)

    def fresh(position: int, origin: Origin) -> LabelCiphertext:
        label = enc_label(sim_key, 0, origin)
        index_of[label.raw] = position
        record.positions[position] = label
        return label

    for op in ops_profile:
        responder = ClientResponder(_order_key(rord, index_of), capacity)
        if op.kind == "insert":
            block = EncryptedBlock(fresh(op.indices[0], Origin.INSERT), enc_payload(sim_key, b""))
            record.transcript.begin_op("insert")
            await endpoint.insert(block, responder, record.transcript)
        else:
            left = fresh(op.indices[0], Origin.LEFT)
            right = fresh(op.indices[1], Origin.RIGHT)
            record.transcript.begin_op("search")
            await endpoint.search(left, right, responder, record.transcript)
    logger.debug(f"simulated {len(ops_profile)} operations with {len(rord.queries)} order queries")
    return record


async def observe_real_run(
    ops: Sequence[Operation],
    *,
    key: SecretKey,
    capacity: int,
    seed: int,
    chunk_size: int | None = None,
) -> tuple[ViewRecord, RandomizedOrderOracle]:
    """Real client against an in-process server, keeping every label sent.

    Returns the server view and the order oracle built from the real
    effective tuples, ready to drive ``simulate_view``.
    """
    client = PopeClient(key, capacity)
    endpoint = LocalEndpoint(PopeService(capacity, seed=seed), chunk_size=chunk_size)
    record = ViewRecord(Transcript(keep_messages=True), key)
    for op, indices in _numbered(ops):
        if isinstance(op, InsertOp):
            block = client.encrypt_block(op.label, op.payload)
            record.positions[indices[0]] = block.label
            record.transcript.begin_op("insert")
            await endpoint.insert(block, client.responder(), record.transcript)
        else:
            left, right = client.encrypt_endpoints(op.lo, op.hi)
            record.positions[indices[0]], record.positions[indices[1]] = left, right
            record.transcript.begin_op("search")
            await client.search_endpoints(endpoint, left, right, record.transcript)
    tuples = {pos: dec_label(key, label) for pos, label in record.positions.items()}
    return record, RandomizedOrderOracle.from_tuples(tuples)


def _canonical(record: ViewRecord) -> list[tuple]:
    """Transcript messages with ciphertexts replaced by profile positions."""
    position_of = {label.raw: pos for pos, label in record.positions.items()}
    rows = []
    for direction, message in record.transcript.messages:
        rows.append(
            (
                direction,
                message.kind,
                tuple(position_of.get(label.raw) for label in message.labels),
                len(message.payloads),
                None if message.endpoint is None else position_of.get(message.endpoint.raw),
                message.indices,
            )
        )
    return rows


def views_match(real: ViewRecord, simulated: ViewRecord) -> bool:
    """Same message structure, and the same label positions in every slot."""
    return _canonical(real) == _canonical(simulated)
