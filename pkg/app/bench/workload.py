"""Operation sequences for experiments: synthetic, or ingested from CSV."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from app.exceptions import IngestionError
from app.protocol.session import InsertOp, Operation, RangeOp
from app.schemas import Placement, WorkloadSpec


def _pick_range(
    sorted_labels: np.ndarray, size: int, rng: np.random.Generator, label_space: int
) -> RangeOp:
    """Uniform left end, widened until ``size`` stored items are covered."""
    count = len(sorted_labels)
    if count == 0:
        point = int(rng.integers(0, label_space, dtype=np.uint64))
        return RangeOp(point, point)
    size = min(int(size), count)
    start = int(rng.integers(0, count - size + 1))
    return RangeOp(int(sorted_labels[start]), int(sorted_labels[start + size - 1]))


def build_workload(
    inserts: Sequence[InsertOp], spec: WorkloadSpec, rng: np.random.Generator | None = None
) -> list[Operation]:
    """Place ``spec.m`` range queries among ``inserts`` (kept in order)."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n, m = len(inserts), spec.m
    labels = np.fromiter((op.label for op in inserts), dtype=np.uint64, count=n)
    sizes = rng.geometric(1.0 / spec.mean_range, size=m)

    if spec.placement == Placement.bunched:
        prefixes = np.full(m, n, dtype=np.int64)
    else:
        prefixes = np.sort(rng.integers(0, n + 1, size=m))

    fixed = None
    if spec.placement == Placement.repeated and m:
        fixed = _pick_range(np.sort(labels), sizes[0], rng, spec.label_space)

    ops: list[Operation] = []
    done = 0
    prefix_sorted = np.empty(0, dtype=np.uint64)
    for query, upto in enumerate(prefixes.tolist()):
        if upto > done:
            ops.extend(inserts[done:upto])
            prefix_sorted = np.sort(np.concatenate([prefix_sorted, labels[done:upto]]))
            done = upto
        ops.append(fixed or _pick_range(prefix_sorted, sizes[query], rng, spec.label_space))
    ops.extend(inserts[done:])
    return ops


def gen_workload(spec: WorkloadSpec) -> list[Operation]:
    rng = np.random.default_rng(spec.seed)
    labels = rng.integers(0, spec.label_space, size=spec.n, dtype=np.uint64)
    inserts = [InsertOp(int(label), b"item-%d" % i) for i, label in enumerate(labels.tolist())]
    return build_workload(inserts, spec, rng)


@dataclass(frozen=True)
class IngestResult:
    inserts: list[InsertOp]
    rows: int
    skipped: int


def ingest_csv(
    path: str | Path,
    label_column: str,
    payload_column: str,
    *,
    scale: int = 100,
    max_bad_fraction: float = 0.1,
) -> IngestResult:
    """Read a decimal label column (scaled to integers) and a payload column."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc

    inserts: list[InsertOp] = []
    rows = skipped = 0
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in (label_column, payload_column):
            if column not in header:
                raise IngestionError(f"column {column!r} not in {path}")
        for line, row in enumerate(reader, start=2):
            rows += 1
            raw = (row.get(label_column) or "").strip().replace(",", "")
            try:
                label = int((Decimal(raw) * scale).to_integral_value())
                if label < 0:
                    raise ValueError(raw)
            except (InvalidOperation, ValueError):
                skipped += 1
                logger.warning(f"{path}:{line}: skipped row with label {raw!r}")
                continue
            inserts.append(InsertOp(label, (row.get(payload_column) or "").encode()))

    if rows and skipped / rows > max_bad_fraction:
        raise IngestionError(f"{skipped} of {rows} rows have unusable labels")
    logger.info(f"ingested {len(inserts)} rows from {path}, skipped {skipped}")
    return IngestResult(inserts, rows, skipped)


def dump_workload(ops: Sequence[Operation]) -> str:
    lines = []
    for op in ops:
        if isinstance(op, InsertOp):
            lines.append(json.dumps({"op": "insert", "label": op.label, "payload": op.payload.hex()}))
        else:
            lines.append(json.dumps({"op": "range", "lo": op.lo, "hi": op.hi}))
    return "\n".join(lines) + ("\n" if lines else "")


def load_workload(text: str) -> list[Operation]:
    ops: list[Operation] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if record["op"] == "insert":
                ops.append(InsertOp(int(record["label"]), bytes.fromhex(record["payload"])))
            elif record["op"] == "range":
                ops.append(RangeOp(int(record["lo"]), int(record["hi"])))
            else:
                raise ValueError(record["op"])
        except (ValueError, KeyError, TypeError) as exc:
            raise IngestionError(f"workload line {number} is malformed: {exc}") from exc
    return ops
