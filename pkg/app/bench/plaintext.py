from bisect import bisect_left, bisect_right
from operator import itemgetter


class PlaintextEngine:
    """Unencrypted reference store answering the same range queries."""

    def __init__(self) -> None:
        self._items: list[tuple[int, bytes]] = []
        self._pending: list[tuple[int, bytes]] = []

    def __len__(self) -> int:
        return len(self._items) + len(self._pending)

    def insert(self, label: int, payload: bytes) -> None:
        self._pending.append((label, payload))

    def search(self, lo: int, hi: int) -> list[tuple[int, bytes]]:
        if self._pending:
            self._items.extend(self._pending)
            self._items.sort()
            self._pending.clear()
        start = bisect_left(self._items, lo, key=itemgetter(0))
        stop = bisect_right(self._items, hi, key=itemgetter(0))
        return self._items[start:stop]
