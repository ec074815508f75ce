import random
from collections import Counter
from math import log

import pytest

from app.bench.plaintext import PlaintextEngine
from app.client import PopeClient
from app.codec import dec_label, keygen
from app.exceptions import ProtocolViolation
from app.leakage import KnowledgeTracker
from app.mope import MAX_KEYS, MopeService, MopeTree
from app.protocol.session import InsertOp, LocalEndpoint, run_session
from app.protocol.transcript import Transcript


@pytest.fixture
def mope(key):
    def make(observer=None):
        service = MopeService(observer=observer)
        client = PopeClient(key, MAX_KEYS, rng=random.Random(3))
        return client, service, LocalEndpoint(service)

    return make


def walk(node, depth=0):
    yield node, depth
    for child in node.children or ():
        yield from walk(child, depth + 1)


def check_structure(tree: MopeTree):
    leaf_depths = set()
    for node, depth in walk(tree.root):
        assert len(node.keys) <= MAX_KEYS
        assert node.size == len(node.keys) + sum(c.size for c in node.children or ())
        if node.is_leaf:
            leaf_depths.add(depth)
        else:
            assert len(node.children) == len(node.keys) + 1
    assert len(leaf_depths) <= 1


@pytest.mark.anyio
async def test_search_on_an_empty_tree(mope):
    client, _, endpoint = mope()
    result = await client.search(endpoint, 0, 10)
    assert result.items == []


@pytest.mark.anyio
async def test_first_insert_takes_one_round(mope):
    client, service, endpoint = mope()
    _, transcript = await run_session(client, endpoint, InsertOp(5, b"five"))
    assert transcript.rounds == 1
    assert transcript.one_way_msgs == 0
    assert len(service.tree) == 1


@pytest.mark.anyio
async def test_in_order_matches_sorted_plaintext(mope, key, rng):
    client, service, endpoint = mope()
    labels = [rng.randrange(10_000) for _ in range(1500)]
    for label in labels:
        await client.insert(endpoint, label, b"")
    assert [dec_label(key, b.label).label for b in service.tree.in_order()] == sorted(labels)
    check_structure(service.tree)


@pytest.mark.anyio
async def test_rank_lookups_agree_with_in_order(mope, rng):
    client, service, endpoint = mope()
    for _ in range(200):
        await client.insert(endpoint, rng.randrange(1000), b"")
    ordered = list(service.tree.in_order())
    assert [service.tree.item_at(i) for i in range(len(ordered))] == ordered
    assert service.tree.slice(20, 75) == ordered[20:75]
    with pytest.raises(IndexError):
        service.tree.item_at(len(ordered))


@pytest.mark.anyio
async def test_searches_match_brute_force(mope, rng):
    client, _, endpoint = mope()
    engine = PlaintextEngine()
    for _ in range(800):
        label, payload = rng.randrange(5000), rng.randbytes(4)
        engine.insert(label, payload)
        await client.insert(endpoint, label, payload)
    for _ in range(60):
        lo = rng.randrange(5000)
        hi = lo + rng.randrange(500)
        result = await client.search(endpoint, lo, hi)
        assert Counter(result.items) == Counter(engine.search(lo, hi))


@pytest.mark.anyio
async def test_search_costs_two_descents(mope, rng):
    client, service, endpoint = mope()
    for _ in range(500):
        await client.insert(endpoint, rng.randrange(5000), b"")
    transcript = Transcript()
    await client.search(endpoint, 1000, 2000, transcript)
    assert transcript.rounds == 2 * service.tree.height()


@pytest.mark.anyio
async def test_server_learns_a_total_order(mope, rng):
    tracker = KnowledgeTracker()
    client, _, endpoint = mope(observer=tracker)
    for _ in range(300):
        await client.insert(endpoint, rng.randrange(100), b"")
        assert tracker.state.incomparable_pairs() == 0
    await client.search(endpoint, 10, 50)
    assert tracker.state.incomparable_pairs() == 0
    assert tracker.state.pivot_count == 300


@pytest.mark.anyio
async def test_refused_insert_changes_nothing(key, rng):
    service = MopeService()
    endpoint = LocalEndpoint(service)
    client = PopeClient(key, MAX_KEYS)
    for _ in range(40):
        await client.insert(endpoint, rng.randrange(1000), b"")
    before = [b.label.raw for b in service.tree.in_order()]
    small = PopeClient(key, 1)
    with pytest.raises(ProtocolViolation):
        await small.insert(endpoint, 500, b"")
    assert [b.label.raw for b in service.tree.in_order()] == before
    assert len(service.tree) == 40


async def mean_insert_rounds(n, seed):
    rng = random.Random(seed)
    service = MopeService()
    endpoint = LocalEndpoint(service)
    client = PopeClient(keygen(seed=seed), MAX_KEYS)
    transcript = Transcript()
    for _ in range(n):
        transcript.begin_op("insert")
        await client.insert(endpoint, rng.randrange(2**32), b"", transcript)
    return transcript.rounds / n


@pytest.mark.anyio
async def test_insert_rounds_grow_with_size():
    small = await mean_insert_rounds(2**6, seed=1)
    large = await mean_insert_rounds(2**10, seed=1)
    assert large > small


@pytest.mark.slow
@pytest.mark.anyio
async def test_insert_rounds_grow_logarithmically():
    small = await mean_insert_rounds(2**10, seed=2)
    large = await mean_insert_rounds(2**14, seed=2)
    predicted = log(2**14) / log(2**10)
    assert abs(large / small - predicted) <= 0.25 * predicted
