import random
from math import comb

import pytest

from app.codec import Ordering, Origin, compare, dec_label, enc_label, keygen
from app.exceptions import LeakageIntegrityError
from app.leakage import (
    Fact,
    KnowledgeTracker,
    PartialOrderState,
    RandomizedOrderOracle,
    closure_incomparable_pairs,
    incomparable_lower_bound,
    knowledge_snapshot,
    observe_real_run,
    profile,
    simulate_view,
    views_match,
)
from app.protocol.messages import MessageKind
from app.protocol.session import InsertOp, RangeOp


def state_with(items):
    state = PartialOrderState()
    for item in items:
        state.add_item(item)
    return state


def test_four_label_example():
    state = state_with(["l1", "l2", "l3", "l4"])
    state.record_pivot_promotion(["l2"])
    state.record_bounds("l1", "l2", None)
    state.record_bounds("l4", None, "l2")
    assert state.incomparable_pairs() == 3
    assert closure_incomparable_pairs(state.items(), state.history) == 3


def test_nothing_is_known_without_queries():
    state = state_with(range(30))
    assert state.incomparable_pairs() == comb(30, 2)
    assert closure_incomparable_pairs(state.items(), state.history) == comb(30, 2)


def test_promotion_refines_the_gap():
    state = state_with("abcde")
    state.record_pivot_promotion(["c"])
    for item in "ab":
        state.record_bounds(item, None, "c")
    for item in "de":
        state.record_bounds(item, "c", None)
    before = state.incomparable_pairs()
    state.record_pivot_promotion(["a", "b"])
    assert state.pivots() == ["a", "b", "c"]
    assert state.incomparable_pairs() == before - 1
    assert closure_incomparable_pairs(state.items(), state.history) == state.incomparable_pairs()


def test_contradicting_bounds_are_rejected():
    state = state_with(["p", "x"])
    state.record_pivot_promotion(["p"])
    state.record_bounds("x", "p", None)
    with pytest.raises(LeakageIntegrityError):
        state.record_bounds("x", None, "p")


def test_unknown_bound_is_rejected():
    state = state_with(["x", "y"])
    with pytest.raises(LeakageIntegrityError):
        state.record_bounds("x", "y", None)


def test_promotion_across_a_pivot_is_rejected():
    state = state_with("abc")
    state.record_pivot_promotion(["b"])
    state.record_bounds("a", None, "b")
    state.record_bounds("c", "b", None)
    with pytest.raises(LeakageIntegrityError):
        state.record_pivot_promotion(["a", "c"])


def test_comparisons_against_pivots_become_bounds():
    state = state_with(["p", "q", "x", "y"])
    state.record_pivot_promotion(["p"])
    state.record_bounds("q", "p", None)
    state.record_pivot_promotion(["q"])
    state.record_comparison("x", "p", True)
    state.record_comparison("q", "y", True)
    state.record_comparison("p", "q", True)
    assert state.incomparable_pairs() == 0
    with pytest.raises(LeakageIntegrityError):
        state.record_comparison("q", "p", True)
    with pytest.raises(LeakageIntegrityError):
        state.record_comparison("x", "y", True)


def test_cyclic_facts_are_rejected():
    with pytest.raises(LeakageIntegrityError):
        closure_incomparable_pairs("ab", [Fact("a", "b"), Fact("b", "a")])


async def tracked_run(pope, rng, n, searches, capacity=3):
    tracker = KnowledgeTracker()
    client, _, endpoint = pope(capacity=capacity, observer=tracker)
    counts = [tracker.state.incomparable_pairs()]
    for step in range(n):
        await client.insert(endpoint, rng.randrange(10_000), b"")
        if step % (n // searches) == 0:
            lo = rng.randrange(10_000)
            await client.search(endpoint, lo, lo + rng.randrange(2000))
            counts.append(tracker.state.incomparable_pairs())
    return tracker.state, counts


@pytest.mark.anyio
@pytest.mark.parametrize("seed", [1, 2, 3])
async def test_gap_count_matches_the_closure(pope, seed):
    state, _ = await tracked_run(pope, random.Random(seed), n=200, searches=10)
    assert state.incomparable_pairs() == closure_incomparable_pairs(state.items(), state.history)


@pytest.mark.anyio
async def test_queries_never_lose_knowledge(pope, rng):
    tracker = KnowledgeTracker()
    client, _, endpoint = pope(capacity=3, observer=tracker)
    for _ in range(300):
        await client.insert(endpoint, rng.randrange(10_000), b"")
    counts = [tracker.state.incomparable_pairs()]
    for _ in range(25):
        lo = rng.randrange(10_000)
        await client.search(endpoint, lo, lo + 500)
        counts.append(tracker.state.incomparable_pairs())
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] > 0


def test_lower_bound_without_queries():
    bound = incomparable_lower_bound(100, 0, 4, 0)
    assert bound.measured == comb(100, 2)
    assert bound.closed_form == comb(100, 2)
    assert bound.regime_ok


def test_lower_bound_shrinks_with_pivots():
    few = incomparable_lower_bound(1000, 5, 4, 10)
    many = incomparable_lower_bound(1000, 5, 4, 100)
    assert many.measured < few.measured
    assert not incomparable_lower_bound(100, 30, 4, 10).regime_ok


@pytest.mark.anyio
async def test_measured_count_respects_the_bound(pope, rng):
    state, _ = await tracked_run(pope, rng, n=500, searches=10, capacity=4)
    bound = incomparable_lower_bound(500, 10, 4, state.pivot_count)
    assert state.incomparable_pairs() >= bound.measured


def test_snapshot_without_queries_is_one_bucket():
    snapshot = knowledge_snapshot(state_with(range(12)))
    assert snapshot.pivot_count == 0
    assert snapshot.incomparable_pairs == comb(12, 2)
    assert [(b.lo_gap, b.hi_gap, b.size) for b in snapshot.buckets] == [(0, 0, 12)]
    assert snapshot.to_table().splitlines()[1] == "0\t0\t12"


@pytest.mark.anyio
async def test_snapshot_buckets_cover_every_non_pivot(pope, rng):
    state, _ = await tracked_run(pope, rng, n=300, searches=6)
    snapshot = knowledge_snapshot(state)
    assert sum(b.size for b in snapshot.buckets) == snapshot.item_count - snapshot.pivot_count
    assert snapshot.item_count == 300


def test_from_ops_ranks_follow_plaintext():
    ops = [InsertOp(30, b""), InsertOp(10, b""), InsertOp(20, b""), RangeOp(15, 25)]
    rord = RandomizedOrderOracle.from_ops(ops, random.Random(0))
    assert [rord.rank(i) for i in range(1, 6)] == [4, 0, 2, 1, 3]
    assert rord.compare(1, 2)
    assert not rord.compare(4, 3)
    assert rord.queries == [(1, 2), (4, 3)]


def test_equal_labels_get_a_random_order():
    ops = [InsertOp(2, b""), InsertOp(2, b"")]
    first_above = sum(
        RandomizedOrderOracle.from_ops(ops, random.Random(seed)).compare(1, 2)
        for seed in range(500)
    )
    assert 0.4 <= first_above / 500 <= 0.6


@pytest.mark.anyio
async def test_simulating_nothing():
    record = await simulate_view([], RandomizedOrderOracle({}), capacity=3, seed=0)
    assert record.transcript.entries == []


@pytest.mark.anyio
async def test_simulated_inserts_encrypt_zero():
    ops = [InsertOp(label, b"") for label in (5, 1, 9, 9)]
    rord = RandomizedOrderOracle.from_ops(ops, random.Random(0))
    record = await simulate_view(profile(ops), rord, capacity=3, seed=0)
    assert record.transcript.one_way_msgs == len(ops)
    for _, message in record.transcript.messages:
        assert message.kind == MessageKind.INSERT
        assert dec_label(record.key, message.labels[0]).label == 0


@pytest.mark.anyio
@pytest.mark.parametrize("capacity", [2, 3, 5])
async def test_simulated_view_matches_the_real_one(key, capacity):
    rng = random.Random(capacity)
    ops = []
    for step in range(250):
        ops.append(InsertOp(rng.randrange(1000), b"p"))
        if step % 20 == 19:
            lo = rng.randrange(1000)
            ops.append(RangeOp(lo, lo + rng.randrange(300)))
    real, rord = await observe_real_run(ops, key=key, capacity=capacity, seed=11, chunk_size=4)
    simulated = await simulate_view(profile(ops), rord, capacity=capacity, seed=11, chunk_size=4)
    assert views_match(real, simulated)
    assert real.transcript.structure() == simulated.transcript.structure()


@pytest.mark.anyio
async def test_views_differ_when_the_profile_differs(key):
    rng = random.Random(4)
    ops = [InsertOp(rng.randrange(1000), b"") for _ in range(200)]
    ops += [RangeOp(100, 900), RangeOp(200, 300), RangeOp(0, 50)]
    real, rord = await observe_real_run(ops, key=key, capacity=2, seed=1, chunk_size=4)
    same = await simulate_view(profile(ops), rord, capacity=2, seed=1, chunk_size=4)
    assert views_match(real, same)
    assert not views_match(real, await simulate_view(profile(ops[:-1]), rord, capacity=2, seed=1))


def test_equal_plaintexts_are_hidden():
    key = keygen(seed="frequency")
    first_smaller = 0
    runs = 2000
    for seed in range(runs):
        rng = random.Random(seed)
        a = enc_label(key, 2, Origin.INSERT, rng)
        b = enc_label(key, 2, Origin.INSERT, rng)
        assert a.raw != b.raw
        first_smaller += compare(key, a, b) == Ordering.LT
    assert abs(first_smaller / runs - 0.5) <= 0.035
