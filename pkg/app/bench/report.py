"""Report serialisation and the results store."""
from __future__ import annotations

import csv
import io
import json

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from app.exceptions import IngestionError
from app.models import ExperimentRun
from app.schemas import (
    REPORT_SCHEMA_VERSION,
    Environment,
    LatencyFit,
    Report,
    ReportFormat,
    RunResult,
)

HEADLINE_FIELDS = (
    "scheme",
    "n",
    "m",
    "capacity",
    "placement",
    "transport",
    "latency_ms",
    "total_rounds",
    "mean_rounds_per_search",
    "mean_rounds_per_insert",
    "one_way_msgs",
    "ciphertexts_sent",
    "amortized_ciphertexts",
    "ops_per_sec",
    "incomparable_pairs",
    "pivot_count",
    "mismatches",
    "failed",
)

# schema version 1; append-only
CSV_COLUMNS = ("schema_version", *HEADLINE_FIELDS, "seed", "wall_seconds", "bound_measured")


def _json_lines(report: Report) -> bytes:
    lines = [json.dumps({"kind": "environment", **report.environment.model_dump(mode="json")})]
    lines.extend(
        json.dumps({"kind": "run", **run.model_dump(mode="json")}) for run in report.runs
    )
    lines.extend(
        json.dumps({"kind": "latency_fit", **fit.model_dump(mode="json")})
        for fit in report.latency_fits
    )
    return ("\n".join(lines) + "\n").encode()


def _csv(report: Report) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for run in report.runs:
        row = run.model_dump(mode="json")
        row["schema_version"] = REPORT_SCHEMA_VERSION
        row["bound_measured"] = run.bound.measured if run.bound else ""
        writer.writerow([row[column] for column in CSV_COLUMNS])
    return buffer.getvalue().encode()


def _format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _pretty(report: Report) -> bytes:
    env = report.environment
    out = [f"python {env.python} on {env.platform}, created {env.created_at:%Y-%m-%d %H:%M:%S}"]
    width = max(len(name) for name in HEADLINE_FIELDS)
    for number, run in enumerate(report.runs, start=1):
        values = run.model_dump(mode="json")
        out.append("")
        out.append(f"run {number}")
        out.extend(
            f"  {name.ljust(width)}  {_format_value(values[name])}" for name in HEADLINE_FIELDS
        )
        if run.error:
            out.append(f"  {'error'.ljust(width)}  {run.error}")
        for point in run.checkpoints:
            out.append(
                f"  after {point.queries} queries: {point.rounds} rounds, "
                f"{point.incomparable_pairs} incomparable pairs, {point.pivot_count} pivots"
            )
    for fit in report.latency_fits:
        out.append("")
        out.append(
            f"latency fit {fit.scheme}: slope {fit.slope:.3f}, "
            f"intercept {fit.intercept:.3f}, r^2 {fit.r_squared:.4f}"
        )
    return ("\n".join(out) + "\n").encode()


def emit_report(report: Report, fmt: ReportFormat | str = ReportFormat.json_lines) -> bytes:
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.csv:
        return _csv(report)
    if fmt == ReportFormat.pretty:
        return _pretty(report)
    return _json_lines(report)


def parse_json_lines(data: bytes | str) -> Report:
    text = data.decode() if isinstance(data, bytes) else data
    environment, runs, fits = None, [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record.pop("kind", None)
        if kind == "environment":
            environment = Environment.model_validate(record)
        elif kind == "run":
            runs.append(RunResult.model_validate(record))
        elif kind == "latency_fit":
            fits.append(LatencyFit.model_validate(record))
        else:
            raise IngestionError(f"unknown report record kind {kind!r}")
    if environment is None:
        raise IngestionError("report has no environment record")
    return Report(environment=environment, runs=runs, latency_fits=fits)


async def store_report(db: AsyncSession, report: Report) -> list[ExperimentRun]:
    environment_json = report.environment.model_dump_json()
    rows = [
        ExperimentRun(
            scheme=run.scheme.value,
            n=run.n,
            m=run.m,
            capacity=run.capacity,
            placement=run.placement.value,
            seed=run.seed,
            transport=run.transport.value,
            failed=run.failed,
            total_rounds=run.total_rounds,
            amortized_ciphertexts=run.amortized_ciphertexts,
            incomparable_pairs=run.incomparable_pairs,
            environment_json=environment_json,
            result_json=run.model_dump_json(),
        )
        for run in report.runs
    ]
    db.add_all(rows)
    await db.commit()
    for row in rows:
        await db.refresh(row)
    return rows


async def load_report(db: AsyncSession, run_id: int) -> Report | None:
    row = await db.scalar(select(ExperimentRun).where(ExperimentRun.id == run_id))
    if row is None:
        return None
    return Report(
        environment=Environment.model_validate_json(row.environment_json),
        runs=[RunResult.model_validate_json(row.result_json)],
    )
