"""Run operation sequences against POPE or mOPE and measure them."""
from __future__ import annotations

import platform
import random
import time
from collections import Counter
from contextlib import asynccontextmanager
from dataclasses import dataclass
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import AsyncIterator, Iterable, Sequence

import numpy as np
from loguru import logger

from app import config
from app.bench.plaintext import PlaintextEngine
from app.client import PopeClient
from app.codec import keygen
from app.exceptions import (
    EncodingError,
    FramingError,
    LeakageIntegrityError,
    ProtocolViolation,
    SessionError,
)
from app.leakage import KnowledgeTracker, incomparable_lower_bound, knowledge_snapshot
from app.mope import MAX_KEYS, MopeService
from app.pope.service import PopeService
from app.pope.snapshot import dump_tree
from app.protocol.session import InsertOp, LocalEndpoint, Operation, run_session
from app.protocol.sockets import connect_tcp, serve_tcp
from app.protocol.transcript import Metrics
from app.schemas import (
    BoundModel,
    BucketModel,
    Checkpoint,
    Environment,
    LatencyFit,
    Report,
    RunResult,
    Scheme,
    TransportKind,
    WorkloadSpec,
)

PACKAGES = ("aiosqlite", "anyio", "cryptography", "fastapi", "numpy", "pydantic", "SQLAlchemy")
# errors that end a run early; the partial result is reported with failed set
RUN_FAILURES = (
    SessionError,
    ProtocolViolation,
    FramingError,
    EncodingError,
    LeakageIntegrityError,
)


@dataclass(frozen=True)
class TransportOptions:
    kind: TransportKind = TransportKind.inproc
    latency_ms: float = 0.0
    chunk_size: int | None = None
    wire: bool = False


def derive_seeds(seed: int) -> tuple[int, int]:
    """Independent seeds for the server's pivot sampling and the client's nonces."""
    server, client = np.random.SeedSequence(seed).spawn(2)
    return int(server.generate_state(1)[0]), int(client.generate_state(1)[0])


def environment() -> Environment:
    packages = {}
    for name in PACKAGES:
        try:
            packages[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            packages[name] = "missing"
    return Environment(
        python=platform.python_version(),
        platform=platform.platform(),
        packages=packages,
        created_at=datetime.now(),
    )


@asynccontextmanager
async def open_endpoint(service, options: TransportOptions) -> AsyncIterator:
    delay = options.latency_ms / 1000.0
    if options.kind == TransportKind.inproc:
        yield LocalEndpoint(
            service, delay=delay, chunk_size=options.chunk_size, wire=options.wire
        )
        return
    async with serve_tcp(service, chunk_size=options.chunk_size) as (host, port):
        async with connect_tcp(host, port, service.insert_kind, delay) as endpoint:
            yield endpoint


def _checkpoint(
    tracker: KnowledgeTracker | None, metrics: Metrics, queries: int, ops: int
) -> Checkpoint:
    snapshot = knowledge_snapshot(tracker.state) if tracker is not None else None
    return Checkpoint(
        queries=queries,
        ops=ops,
        rounds=metrics.rounds,
        ciphertexts_sent=metrics.ciphertexts_sent,
        incomparable_pairs=snapshot.incomparable_pairs if snapshot else 0,
        pivot_count=snapshot.pivot_count if snapshot else 0,
        buckets=[BucketModel(lo_gap=b.lo_gap, hi_gap=b.hi_gap, size=b.size) for b in snapshot.buckets]
        if snapshot
        else [],
    )


async def run_scheme(
    scheme: Scheme,
    ops: Sequence[Operation],
    spec: WorkloadSpec,
    options: TransportOptions = TransportOptions(),
    *,
    checkpoints: Iterable[int] = (),
    verify: bool = True,
    track_leakage: bool = True,
    snapshot_out: Path | None = None,
) -> RunResult:
    """One scheme over one sequence; session failures yield a flagged partial result."""
    capacity = spec.capacity
    key = keygen(seed=spec.seed)
    server_seed, client_seed = derive_seeds(spec.seed)
    tracker = KnowledgeTracker() if track_leakage else None
    if scheme == Scheme.pope:
        service = PopeService(capacity, seed=server_seed, observer=tracker)
        client = PopeClient(key, capacity, rng=random.Random(client_seed))
    else:
        service = MopeService(observer=tracker)
        client = PopeClient(key, max(capacity, MAX_KEYS), rng=random.Random(client_seed))

    chunk = options.chunk_size if options.chunk_size is not None else config.chunk_size()
    result = RunResult(
        scheme=scheme,
        n=sum(isinstance(op, InsertOp) for op in ops),
        m=sum(not isinstance(op, InsertOp) for op in ops),
        capacity=capacity,
        placement=spec.placement,
        seed=spec.seed,
        transport=options.kind,
        latency_ms=options.latency_ms,
        chunk_size=chunk,
    )
    targets = set(checkpoints)
    engine = PlaintextEngine()
    metrics = Metrics()
    logger.info(f"{scheme} run: {result.n} inserts, {result.m} searches, L={capacity}")

    started = time.perf_counter()
    try:
        async with open_endpoint(service, options) as endpoint:
            for op in ops:
                outcome, transcript = await run_session(client, endpoint, op)
                metrics = metrics.merge(transcript)
                if isinstance(op, InsertOp):
                    result.inserts += 1
                    engine.insert(op.label, op.payload)
                    if scheme == Scheme.pope and (
                        transcript.rounds != 0 or transcript.one_way_msgs != 1
                    ):
                        result.insert_violations += 1
                    continue
                result.searches += 1
                result.result_items += len(outcome.items)
                result.peak_client_working_set = max(
                    result.peak_client_working_set, outcome.peak_working_set
                )
                if verify and Counter(outcome.items) != Counter(engine.search(op.lo, op.hi)):
                    result.mismatches += 1
                    logger.error(f"search [{op.lo}, {op.hi}] disagrees with the plaintext engine")
                if result.searches in targets:
                    result.checkpoints.append(
                        _checkpoint(tracker, metrics, result.searches, result.inserts + result.searches)
                    )
    except RUN_FAILURES as exc:
        result.failed = True
        result.error = f"{type(exc).__name__}: {exc.detail}"
        logger.error(f"{scheme} run aborted after {result.inserts + result.searches} ops: {exc.detail}")
    result.wall_seconds = time.perf_counter() - started

    ops_done = result.inserts + result.searches
    result.total_rounds = metrics.rounds
    result.insert_rounds = metrics.per_op["insert"].rounds if "insert" in metrics.per_op else 0
    result.search_rounds = metrics.per_op["search"].rounds if "search" in metrics.per_op else 0
    result.mean_rounds_per_search = result.search_rounds / result.searches if result.searches else 0.0
    result.mean_rounds_per_insert = result.insert_rounds / result.inserts if result.inserts else 0.0
    result.one_way_msgs = metrics.one_way_msgs
    result.ciphertexts_sent = metrics.ciphertexts_sent
    result.amortized_ciphertexts = metrics.ciphertexts_sent / ops_done if ops_done else 0.0
    result.categories = dict(metrics.categories)
    result.ops_per_sec = ops_done / result.wall_seconds if result.wall_seconds else 0.0
    result.tree = service.stats()

    if tracker is not None:
        state = tracker.state
        result.incomparable_pairs = state.incomparable_pairs()
        result.pivot_count = state.pivot_count
        bound = incomparable_lower_bound(result.inserts, result.searches, capacity, state.pivot_count)
        result.bound = BoundModel(
            k=bound.k,
            measured=bound.measured,
            closed_form=bound.closed_form,
            regime_ok=bound.regime_ok,
        )
        if not bound.regime_ok:
            logger.warning(f"m*L = {result.searches * capacity} is not below n = {result.inserts}")

    if snapshot_out is not None and scheme == Scheme.pope:
        snapshot_out.write_bytes(dump_tree(service.tree))
    logger.info(
        f"{scheme} run done: {result.total_rounds} rounds, "
        f"{result.amortized_ciphertexts:.2f} ciphertexts/op, {result.mismatches} mismatches"
    )
    return result


def fit_latency(runs: Sequence[RunResult]) -> list[LatencyFit]:
    """Least-squares fit of wall time against rounds times delay, per scheme."""
    fits = []
    for scheme in Scheme:
        points = [r for r in runs if r.scheme == scheme and not r.failed]
        if len({r.latency_ms for r in points}) < 2:
            continue
        x = np.array([r.total_rounds * r.latency_ms / 1000.0 for r in points])
        y = np.array([r.wall_seconds for r in points])
        slope, intercept = np.polyfit(x, y, 1)
        residual = y - (slope * x + intercept)
        spread = float(np.sum((y - y.mean()) ** 2))
        r_squared = 1.0 - float(np.sum(residual**2)) / spread if spread else 1.0
        fits.append(
            LatencyFit(
                scheme=scheme,
                slope=float(slope),
                intercept=float(intercept),
                r_squared=r_squared,
                points=len(points),
            )
        )
    return fits


async def run_experiment(
    schemes: Sequence[Scheme],
    ops: Sequence[Operation],
    spec: WorkloadSpec,
    options: TransportOptions = TransportOptions(),
    *,
    latencies_ms: Sequence[float] | None = None,
    checkpoints: Iterable[int] = (),
    verify: bool = True,
    track_leakage: bool = True,
    snapshot_out: Path | None = None,
) -> Report:
    report = Report(environment=environment())
    checkpoints = tuple(checkpoints)
    for scheme in schemes:
        for latency in latencies_ms or [options.latency_ms]:
            run_options = TransportOptions(options.kind, latency, options.chunk_size, options.wire)
            run = await run_scheme(
                scheme,
                ops,
                spec,
                run_options,
                checkpoints=checkpoints,
                verify=verify,
                track_leakage=track_leakage,
                snapshot_out=snapshot_out,
            )
            report.runs.append(run)
    report.latency_fits = fit_latency(report.runs)
    return report
