"""Server-side POPE tree.

Every node holds an unsorted buffer of encrypted blocks. Internal nodes
also hold sorted pivot label ciphertexts and one child more than pivots.
The server never learns an order on its own: every comparison goes
through a ``ClientOracle``.

Mutations happen only after the client's full reply has arrived, and a
leaf split rebalances its ancestors before the next round, so an aborted
session leaves a tree every later search can walk.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, Protocol, Sequence

from loguru import logger

from app.codec import LabelCiphertext, PayloadCiphertext
from app.exceptions import ConfigError, PopeError, ProtocolViolation
from app.protocol.transport import ClientOracle


@dataclass(frozen=True, slots=True)
class EncryptedBlock:
    label: LabelCiphertext
    payload: PayloadCiphertext


class OrderObserver(Protocol):
    """Receives every ordering fact the server learns."""

    def on_insert(self, label: LabelCiphertext) -> None: ...

    def on_classify(
        self,
        label: LabelCiphertext,
        lo: LabelCiphertext | None,
        hi: LabelCiphertext | None,
    ) -> None: ...

    def on_promote(self, labels: Sequence[LabelCiphertext]) -> None: ...


@dataclass(eq=False, slots=True)
class PopeNode:
    buffer: list[EncryptedBlock] = field(default_factory=list)
    pivots: list[LabelCiphertext] | None = None
    children: list[PopeNode] | None = None
    parent: PopeNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class TreeCounters:
    blocks_inserted: int = 0
    leaf_splits: int = 0
    internal_flushes: int = 0
    locates: int = 0
    rebalances: int = 0
    promoted_pivots: int = 0


@dataclass(eq=False)
class PopeTree:
    root: PopeNode
    capacity: int
    rng: random.Random
    counters: TreeCounters = field(default_factory=TreeCounters)

    def height(self) -> int:
        depth, node = 0, self.root
        while node.children is not None:
            node = node.children[0]
            depth += 1
        return depth

    def nodes(self) -> Iterator[PopeNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.children is not None:
                stack.extend(reversed(node.children))

    def leaves(self) -> Iterator[PopeNode]:
        return (node for node in self.nodes() if node.is_leaf)

    def blocks(self) -> Iterator[EncryptedBlock]:
        for node in self.nodes():
            yield from node.buffer

    def size(self) -> int:
        return sum(len(node.buffer) for node in self.nodes())


def setup(capacity: int, seed: int | None = None) -> PopeTree:
    if capacity < 2:
        raise ConfigError(f"node capacity must be at least 2, got {capacity}")
    return PopeTree(root=PopeNode(), capacity=capacity, rng=random.Random(seed))


def insert(tree: PopeTree, block: EncryptedBlock) -> None:
    tree.root.buffer.append(block)
    tree.counters.blocks_inserted += 1


def _bounds(
    pivots: Sequence[LabelCiphertext], index: int
) -> tuple[LabelCiphertext | None, LabelCiphertext | None]:
    lo = pivots[index - 2] if index >= 2 else None
    hi = pivots[index - 1] if index <= len(pivots) else None
    return lo, hi


async def _flush_internal(
    tree: PopeTree,
    node: PopeNode,
    endpoint: LabelCiphertext,
    oracle: ClientOracle,
    observer: OrderObserver | None,
) -> PopeNode:
    batch = list(node.buffer)
    if not batch:
        index = await oracle.locate(node.pivots, endpoint)
        tree.counters.locates += 1
        return node.children[index - 1]

    indices, index = await oracle.partition(
        node.pivots, [block.label for block in batch], endpoint
    )
    for block, i in zip(batch, indices):
        node.children[i - 1].buffer.append(block)
        if observer is not None:
            observer.on_classify(block.label, *_bounds(node.pivots, i))
    node.buffer = []
    tree.counters.internal_flushes += 1
    return node.children[index - 1]


def _upper_bound(leaf: PopeNode) -> LabelCiphertext | None:
    node = leaf
    while node.parent is not None:
        pos = node.parent.children.index(node)
        if pos < len(node.parent.pivots):
            return node.parent.pivots[pos]
        node = node.parent
    return None


async def _split_leaf(
    tree: PopeTree,
    leaf: PopeNode,
    endpoint: LabelCiphertext,
    oracle: ClientOracle,
    observer: OrderObserver | None,
) -> PopeNode:
    batch = list(leaf.buffer)
    bound = _upper_bound(leaf)
    # the leaf still stores the block whose label bounds it from above
    eligible = [
        i for i, block in enumerate(batch) if bound is None or block.label.raw != bound.raw
    ]
    picks = tree.rng.sample(eligible, tree.capacity)
    pivots = await oracle.sort([batch[i].label for i in picks])
    indices, index = await oracle.partition(
        pivots, [block.label for block in batch], endpoint
    )

    if observer is not None:
        observer.on_promote(pivots)
    siblings = [PopeNode() for _ in range(len(pivots) + 1)]
    for block, i in zip(batch, indices):
        siblings[i - 1].buffer.append(block)
        if observer is not None:
            observer.on_classify(block.label, *_bounds(pivots, i))

    parent = leaf.parent
    if parent is None:
        parent = PopeNode(pivots=list(pivots))
        parent.children = siblings
        tree.root = parent
    else:
        pos = parent.children.index(leaf)
        parent.children[pos : pos + 1] = siblings
        parent.pivots[pos:pos] = pivots
    for sibling in siblings:
        sibling.parent = parent
    leaf.buffer = []
    leaf.parent = None

    tree.counters.leaf_splits += 1
    tree.counters.promoted_pivots += len(pivots)
    logger.debug(f"leaf split: {len(batch)} blocks into {len(siblings)} leaves")
    return siblings[index - 1]


async def split(
    tree: PopeTree,
    endpoint: LabelCiphertext,
    oracle: ClientOracle,
    observer: OrderObserver | None = None,
) -> PopeNode:
    """Empty the buffers on the root-to-leaf path of ``endpoint``.

    Returns the leaf the endpoint belongs to; its buffer holds at most
    ``capacity`` blocks.
    """
    node = tree.root
    while True:
        if node.is_leaf:
            if len(node.buffer) <= tree.capacity:
                return node
            node = await _split_leaf(tree, node, endpoint, oracle, observer)
            rebalance(tree, node.parent)
        else:
            node = await _flush_internal(tree, node, endpoint, oracle, observer)


def _separator_positions(size: int, capacity: int) -> list[int]:
    positions = list(range(capacity, size, capacity + 1))
    if positions and positions[-1] == size - 1:
        # the last group would be empty: split the final stretch in half
        start = positions[-2] + 1 if len(positions) > 1 else 0
        positions[-1] = (start + size - 1) // 2
    return positions


def rebalance(tree: PopeTree, node: PopeNode | None) -> None:
    """Split over-full pivot lists bottom-up, starting at ``node``."""
    capacity = tree.capacity
    while node is not None and node.pivots is not None and len(node.pivots) > capacity:
        if node.buffer:
            raise PopeError("cannot rebalance a node with a non-empty buffer")
        parent = node.parent
        if parent is None:
            parent = PopeNode(pivots=[], children=[node])
            node.parent = parent
            tree.root = parent

        separators = _separator_positions(len(node.pivots), capacity)
        groups, start = [], 0
        for stop in [*separators, len(node.pivots)]:
            group = PopeNode(
                pivots=node.pivots[start:stop],
                children=node.children[start : stop + 1],
                parent=parent,
            )
            for child in group.children:
                child.parent = group
            groups.append(group)
            start = stop + 1

        pos = parent.children.index(node)
        parent.children[pos : pos + 1] = groups
        parent.pivots[pos:pos] = [node.pivots[s] for s in separators]
        node.parent = None
        tree.counters.rebalances += 1
        node = parent


def leaf_path(tree: PopeTree, node: PopeNode) -> list[int]:
    """Child positions from the root down to ``node``."""
    path = []
    while node.parent is not None:
        path.append(node.parent.children.index(node))
        node = node.parent
    if node is not tree.root:
        raise ProtocolViolation("node is not attached to this tree")
    path.reverse()
    return path


def _collect(
    node: PopeNode,
    lo: list[int] | None,
    hi: list[int] | None,
    out: list[EncryptedBlock],
) -> None:
    out.extend(node.buffer)
    if node.children is None:
        return
    first = lo[0] if lo else 0
    last = hi[0] if hi else len(node.children) - 1
    for i in range(first, last + 1):
        _collect(
            node.children[i],
            lo[1:] if lo and i == first else None,
            hi[1:] if hi and i == last else None,
            out,
        )


def range_collect(
    tree: PopeTree, leaf_left: PopeNode, leaf_right: PopeNode
) -> list[EncryptedBlock]:
    """Blocks from ``leaf_left`` to ``leaf_right`` plus the buffers above them."""
    if not (leaf_left.is_leaf and leaf_right.is_leaf):
        raise ProtocolViolation("range collection needs two leaves")
    lo, hi = leaf_path(tree, leaf_left), leaf_path(tree, leaf_right)
    if lo > hi:
        raise ProtocolViolation("left endpoint leaf lies right of the right endpoint leaf")
    out: list[EncryptedBlock] = []
    _collect(tree.root, lo, hi, out)
    return out
