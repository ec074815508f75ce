"""Binary dump of a POPE tree, for reloading a populated server."""
from __future__ import annotations

import random
import struct

from app.codec import LABEL_CT_BYTES
from app.exceptions import EncodingError
from app.pope.tree import EncryptedBlock, PopeNode, PopeTree
from app.protocol.framing import ByteReader

MAGIC = b"POPT"
SNAPSHOT_VERSION = 1
U32 = struct.Struct(">I")

LEAF, INTERNAL = 0, 1


def _dump_node(node: PopeNode, out: list[bytes]) -> None:
    out.append(bytes([LEAF if node.is_leaf else INTERNAL]))
    out.append(U32.pack(len(node.buffer)))
    for block in node.buffer:
        out.append(block.label.raw)
        out.append(U32.pack(len(block.payload)))
        out.append(block.payload)
    if node.is_leaf:
        return
    out.append(U32.pack(len(node.pivots)))
    out.extend(pivot.raw for pivot in node.pivots)
    for child in node.children:
        _dump_node(child, out)


def dump_tree(tree: PopeTree) -> bytes:
    out = [MAGIC, bytes([SNAPSHOT_VERSION]), U32.pack(tree.capacity)]
    _dump_node(tree.root, out)
    return b"".join(out)


def _load_node(reader: ByteReader, parent: PopeNode | None, depth: int) -> PopeNode:
    if depth > 64:
        raise EncodingError("snapshot nests too deeply")
    kind = reader.u8()
    if kind not in (LEAF, INTERNAL):
        raise EncodingError(f"unknown node kind {kind}")
    node = PopeNode(parent=parent)
    for _ in range(reader.count(LABEL_CT_BYTES + 4)):
        label = reader.label()
        node.buffer.append(EncryptedBlock(label, reader.take(reader.u32())))
    if kind == INTERNAL:
        node.pivots = [reader.label() for _ in range(reader.count(LABEL_CT_BYTES))]
        node.children = [
            _load_node(reader, node, depth + 1) for _ in range(len(node.pivots) + 1)
        ]
    return node


def load_tree(data: bytes, seed: int | None = None) -> PopeTree:
    reader = ByteReader(data, error=EncodingError)
    if reader.take(len(MAGIC)) != MAGIC:
        raise EncodingError("not a tree snapshot")
    version = reader.u8()
    if version != SNAPSHOT_VERSION:
        raise EncodingError(f"unsupported snapshot version {version}")
    capacity = reader.u32()
    root = _load_node(reader, None, 0)
    if reader.remaining:
        raise EncodingError(f"{reader.remaining} trailing bytes in snapshot")
    tree = PopeTree(root=root, capacity=capacity, rng=random.Random(seed))
    tree.counters.blocks_inserted = tree.size()
    return tree
