"""Mutable order-preserving baseline: a B-tree sorted by client descents.

Each insert and each search endpoint walks the tree top-down, asking the
client for the position of the new label among one node's keys per level.
Nodes hold at most ``MAX_KEYS`` keys and split at the median.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Protocol

import anyio
from loguru import logger

from app.codec import LabelCiphertext
from app.pope.tree import EncryptedBlock
from app.protocol.messages import MessageKind
from app.protocol.transport import ClientOracle

MAX_KEYS = 4


class PlacementObserver(Protocol):
    def on_insert(self, label: LabelCiphertext) -> None: ...

    def on_place(
        self,
        label: LabelCiphertext,
        lo: LabelCiphertext | None,
        hi: LabelCiphertext | None,
    ) -> None: ...


@dataclass(eq=False, slots=True)
class MopeNode:
    keys: list[EncryptedBlock] = field(default_factory=list)
    children: list[MopeNode] | None = None
    size: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class MopeTree:
    def __init__(self) -> None:
        self.root = MopeNode()

    def __len__(self) -> int:
        return self.root.size

    def height(self) -> int:
        depth, node = 1, self.root
        while node.children is not None:
            node = node.children[0]
            depth += 1
        return depth

    def in_order(self, node: MopeNode | None = None) -> Iterator[EncryptedBlock]:
        node = node or self.root
        for i, key in enumerate(node.keys):
            if node.children is not None:
                yield from self.in_order(node.children[i])
            yield key
        if node.children is not None:
            yield from self.in_order(node.children[-1])

    def item_at(self, rank: int) -> EncryptedBlock:
        if not 0 <= rank < len(self):
            raise IndexError(rank)
        node = self.root
        while True:
            if node.children is None:
                return node.keys[rank]
            for i, child in enumerate(node.children):
                if rank < child.size:
                    node = child
                    break
                rank -= child.size
                if i < len(node.keys):
                    if rank == 0:
                        return node.keys[i]
                    rank -= 1

    def slice(self, start: int, stop: int) -> list[EncryptedBlock]:
        out: list[EncryptedBlock] = []
        self._slice(self.root, start, stop, out)
        return out

    def _slice(self, node: MopeNode, start: int, stop: int, out: list[EncryptedBlock]) -> None:
        if stop <= 0 or start >= node.size:
            return
        if node.children is None:
            out.extend(node.keys[max(start, 0) : stop])
            return
        offset = 0
        for i, child in enumerate(node.children):
            self._slice(child, start - offset, stop - offset, out)
            offset += child.size
            if i < len(node.keys):
                if start <= offset < stop:
                    out.append(node.keys[i])
                offset += 1


def _recount(node: MopeNode) -> None:
    node.size = len(node.keys) + sum(c.size for c in node.children or ())


def _split(tree: MopeTree, node: MopeNode, parent: MopeNode | None) -> None:
    mid = len(node.keys) // 2
    median = node.keys[mid]
    left = MopeNode(node.keys[:mid], node.children[: mid + 1] if node.children else None)
    right = MopeNode(node.keys[mid + 1 :], node.children[mid + 1 :] if node.children else None)
    _recount(left)
    _recount(right)
    if parent is None:
        tree.root = MopeNode([median], [left, right])
        _recount(tree.root)
        return
    pos = parent.children.index(node)
    parent.children[pos : pos + 1] = [left, right]
    parent.keys.insert(pos, median)


async def _descend(
    tree: MopeTree, oracle: ClientOracle, label: LabelCiphertext
) -> tuple[list[tuple[MopeNode, int]], int]:
    """Path of (node, position) pairs and the number of stored items below ``label``."""
    path, rank, node = [], 0, tree.root
    while True:
        pos = await oracle.locate([key.label for key in node.keys], label) - 1
        path.append((node, pos))
        if node.children is None:
            return path, rank + pos
        rank += pos + sum(child.size for child in node.children[:pos])
        node = node.children[pos]


async def mope_insert(
    tree: MopeTree,
    oracle: ClientOracle,
    block: EncryptedBlock,
    observer: PlacementObserver | None = None,
) -> int:
    """Insert ``block``; returns its rank. Nothing changes if a round fails."""
    path, rank = await _descend(tree, oracle, block.label)
    leaf, pos = path[-1]
    leaf.keys.insert(pos, block)
    for node, _ in path:
        node.size += 1

    if observer is not None:
        observer.on_insert(block.label)
        lo = tree.item_at(rank - 1).label if rank > 0 else None
        hi = tree.item_at(rank + 1).label if rank + 1 < len(tree) else None
        observer.on_place(block.label, lo, hi)

    for depth in range(len(path) - 1, -1, -1):
        node = path[depth][0]
        if len(node.keys) <= MAX_KEYS:
            break
        _split(tree, node, path[depth - 1][0] if depth else None)
    return rank


async def mope_search(
    tree: MopeTree, oracle: ClientOracle, left: LabelCiphertext, right: LabelCiphertext
) -> list[EncryptedBlock]:
    _, start = await _descend(tree, oracle, left)
    _, stop = await _descend(tree, oracle, right)
    return tree.slice(start, stop)


class MopeService:
    insert_kind = MessageKind.MOPE_INSERT
    name = "mope"

    def __init__(self, observer: PlacementObserver | None = None):
        self.tree = MopeTree()
        self.observer = observer
        self.lock = anyio.Lock()

    async def insert(self, block: EncryptedBlock, oracle: ClientOracle) -> None:
        async with self.lock:
            rank = await mope_insert(self.tree, oracle, block, self.observer)
        logger.debug(f"mOPE insert at rank {rank}, height {self.tree.height()}")

    async def search(
        self, left: LabelCiphertext, right: LabelCiphertext, oracle: ClientOracle
    ) -> list[EncryptedBlock]:
        async with self.lock:
            return await mope_search(self.tree, oracle, left, right)

    def stats(self) -> dict[str, int]:
        return {"height": self.tree.height(), "blocks": len(self.tree)}
