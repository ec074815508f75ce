from __future__ import annotations

import anyio
from loguru import logger

from app.codec import LabelCiphertext
from app.pope.tree import (
    EncryptedBlock,
    OrderObserver,
    PopeTree,
    insert,
    range_collect,
    setup,
    split,
)
from app.protocol.messages import MessageKind
from app.protocol.transport import ClientOracle


class PopeService:
    """One POPE tree shared by every session of a server.

    Inserts need no client help. A search splits both endpoint paths and
    collects between them, all under the lock.
    """

    insert_kind = MessageKind.INSERT
    name = "pope"

    def __init__(
        self,
        capacity: int,
        *,
        seed: int | None = None,
        observer: OrderObserver | None = None,
        tree: PopeTree | None = None,
    ):
        self.tree = tree if tree is not None else setup(capacity, seed)
        self.observer = observer
        self.lock = anyio.Lock()

    async def insert(self, block: EncryptedBlock, oracle: ClientOracle | None = None) -> None:
        async with self.lock:
            insert(self.tree, block)
            if self.observer is not None:
                self.observer.on_insert(block.label)

    async def search(
        self, left: LabelCiphertext, right: LabelCiphertext, oracle: ClientOracle
    ) -> list[EncryptedBlock]:
        async with self.lock:
            leaf_left = await split(self.tree, left, oracle, self.observer)
            leaf_right = await split(self.tree, right, oracle, self.observer)
            blocks = range_collect(self.tree, leaf_left, leaf_right)
        logger.debug(f"search returned {len(blocks)} blocks, height {self.tree.height()}")
        return blocks

    def stats(self) -> dict[str, int]:
        counters = self.tree.counters
        fanouts = [len(node.children) for node in self.tree.nodes() if not node.is_leaf]
        return {
            "height": self.tree.height(),
            "min_fanout": min(fanouts, default=0),
            "max_fanout": max(fanouts, default=0),
            "blocks": self.tree.size(),
            "leaf_splits": counters.leaf_splits,
            "internal_flushes": counters.internal_flushes,
            "locates": counters.locates,
            "rebalances": counters.rebalances,
            "promoted_pivots": counters.promoted_pivots,
        }
