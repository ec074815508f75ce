"""Decrypt-everything checker for tests and benchmark runs.

Only a key holder can run it; the server never does.
"""
from __future__ import annotations

from collections import Counter
from typing import Iterable

from app.codec import EffectiveTuple, SecretKey, dec_label
from app.pope.tree import PopeNode, PopeTree


def _in_bounds(
    value: EffectiveTuple, lo: EffectiveTuple | None, hi: EffectiveTuple | None
) -> bool:
    return (lo is None or lo < value) and (hi is None or value <= hi)


def verify_tree(
    tree: PopeTree, key: SecretKey, expected: Iterable[bytes] | None = None
) -> list[str]:
    """Return every structural violation found; empty means the tree is sound.

    ``expected`` is the multiset of inserted label ciphertexts (raw bytes).
    """
    problems: list[str] = []
    leaf_depths: set[int] = set()
    stored: Counter[bytes] = Counter()

    def walk(node: PopeNode, lo, hi, depth: int, name: str) -> None:
        for block in node.buffer:
            stored[block.label.raw] += 1
            if not _in_bounds(dec_label(key, block.label), lo, hi):
                problems.append(f"{name}: buffered block outside the node interval")
        if node.is_leaf:
            leaf_depths.add(depth)
            return
        pivots = [dec_label(key, p) for p in node.pivots]
        if len(pivots) > tree.capacity:
            problems.append(f"{name}: {len(pivots)} pivots exceed capacity {tree.capacity}")
        if len(node.children) != len(pivots) + 1:
            problems.append(f"{name}: {len(node.children)} children for {len(pivots)} pivots")
            return
        if any(a >= b for a, b in zip(pivots, pivots[1:])):
            problems.append(f"{name}: pivots not strictly increasing")
        if any(not _in_bounds(p, lo, hi) for p in pivots):
            problems.append(f"{name}: pivot outside the node interval")
        elif hi is not None and pivots and pivots[-1] == hi:
            problems.append(f"{name}: pivot repeats the bound above it")
        bounds = [lo, *pivots, hi]
        for i, child in enumerate(node.children):
            if child.parent is not node:
                problems.append(f"{name}/{i}: broken parent pointer")
            walk(child, bounds[i], bounds[i + 1], depth + 1, f"{name}/{i}")

    if tree.root.parent is not None:
        problems.append("root has a parent")
    walk(tree.root, None, None, 0, "root")
    if len(leaf_depths) > 1:
        problems.append(f"leaves at different depths {sorted(leaf_depths)}")
    if expected is not None and Counter(expected) != stored:
        missing = sum((Counter(expected) - stored).values())
        extra = sum((stored - Counter(expected)).values())
        problems.append(f"stored blocks differ from inserted: {missing} missing, {extra} extra")
    return problems
