"""pope-bench: generate workloads, run experiments, emit reports.

Exit codes: 0 success, 2 configuration or input error, 3 session failure.
"""
from __future__ import annotations

import sys
from functools import partial
from pathlib import Path

import anyio
import click
from pydantic import ValidationError

from app.bench.experiment import TransportOptions, run_experiment
from app.bench.report import emit_report, load_report, store_report
from app.bench.workload import build_workload, dump_workload, gen_workload, ingest_csv, load_workload
from app.codec import keygen
from app.database import async_session_maker, init_db
from app.exceptions import (
    ConfigError,
    EncodingError,
    IngestionError,
    LeakageIntegrityError,
    ProtocolViolation,
    SessionError,
)
from app.log import setup_logging
from app.models import ExperimentRun
from app.pope.service import PopeService
from app.pope.snapshot import load_tree
from app.pope.verify import verify_tree
from app.protocol.session import InsertOp
from app.schemas import Placement, Report, ReportFormat, Scheme, TransportKind, WorkloadSpec

EXIT_CONFIG = 2
EXIT_SESSION = 3


class BenchError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _spec(**kwargs) -> WorkloadSpec:
    try:
        return WorkloadSpec(**{k: v for k, v in kwargs.items() if v is not None})
    except ValidationError as exc:
        raise BenchError(f"invalid workload: {exc}", EXIT_CONFIG)


def _checkpoints(raw: str | None) -> list[int]:
    if not raw:
        return []
    try:
        return sorted({int(part) for part in raw.split(",") if part.strip()})
    except ValueError:
        raise BenchError(f"checkpoints must be comma-separated integers, got {raw!r}", EXIT_CONFIG)


def _write(data: bytes, out: Path | None) -> None:
    if out is None:
        click.echo(data.decode(), nl=False)
    else:
        out.write_bytes(data)


async def _store(report: Report) -> list[ExperimentRun]:
    await init_db()
    async with async_session_maker() as db:
        return await store_report(db, report)


async def _load(run_id: int) -> Report | None:
    await init_db()
    async with async_session_maker() as db:
        return await load_report(db, run_id)


workload_options = [
    click.option("--n", "n", type=int, default=1000, show_default=True, help="Number of inserts."),
    click.option("--m", "m", type=int, default=None, help="Number of range queries [isqrt(n)]."),
    click.option("--cap", "capacity", type=int, default=None, help="Client capacity L [n^(1/4)]."),
    click.option(
        "--placement",
        type=click.Choice([p.value for p in Placement]),
        default=Placement.uniform.value,
        show_default=True,
    ),
    click.option("--mean-range", type=float, default=100.0, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--label-space", type=int, default=2**32, show_default=True),
]


def with_workload_options(func):
    for option in reversed(workload_options):
        func = option(func)
    return func


@click.group()
@click.option("--verbose", is_flag=True, help="Also log warnings to stderr.")
def cli(verbose: bool) -> None:
    setup_logging(to_stderr=verbose)


@cli.command()
@with_workload_options
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def gen(out: Path | None, **kwargs) -> None:
    """Write a generated operation sequence as JSON lines."""
    spec = _spec(**kwargs)
    _write(dump_workload(gen_workload(spec)).encode(), out)


@cli.command()
@click.argument("csv_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--label-column", required=True)
@click.option("--payload-column", required=True)
@click.option("--scale", type=int, default=100, show_default=True)
@click.option("--m", "m", type=int, default=None)
@click.option(
    "--placement",
    type=click.Choice([p.value for p in Placement]),
    default=Placement.uniform.value,
)
@click.option("--mean-range", type=float, default=100.0)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def ingest(csv_path: Path, label_column, payload_column, scale, out, **kwargs) -> None:
    """Turn a CSV file into an operation sequence with range queries mixed in."""
    try:
        ingested = ingest_csv(csv_path, label_column, payload_column, scale=scale)
    except IngestionError as exc:
        raise BenchError(exc.detail, EXIT_CONFIG)
    if not ingested.inserts:
        raise BenchError(f"{csv_path} has no usable rows", EXIT_CONFIG)
    spec = _spec(n=len(ingested.inserts), label_space=2**64, **kwargs)
    click.echo(f"{ingested.rows} rows, {ingested.skipped} skipped", err=True)
    _write(dump_workload(build_workload(ingested.inserts, spec)).encode(), out)


@cli.command()
@with_workload_options
@click.option("--workload", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Operation sequence from gen or ingest; overrides --n.")
@click.option("--scheme", type=click.Choice(["pope", "mope", "both"]), default="both", show_default=True)
@click.option("--transport", type=click.Choice([t.value for t in TransportKind]), default="inproc")
@click.option("--latency-ms", type=float, multiple=True, help="Per-round delay; repeat for a sweep.")
@click.option("--chunk-size", type=click.IntRange(min=1), default=None)
@click.option("--checkpoints", default=None, help="Query counts at which to snapshot leakage.")
@click.option("--format", "fmt", type=click.Choice([f.value for f in ReportFormat]), default="pretty")
@click.option("--no-verify", is_flag=True, help="Skip the plaintext cross-check.")
@click.option("--no-leakage", is_flag=True, help="Skip knowledge tracking.")
@click.option("--store/--no-store", default=False, help="Save the report in the results database.")
@click.option("--snapshot-out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def run(workload, scheme, transport, latency_ms, chunk_size, checkpoints, fmt,
        no_verify, no_leakage, store, snapshot_out, out, **kwargs) -> None:
    """Run one or both schemes and emit the report."""
    try:
        if workload is not None:
            ops = load_workload(workload.read_text())
            inserts = sum(isinstance(op, InsertOp) for op in ops)
            kwargs["n"] = max(1, inserts)
            kwargs["m"] = len(ops) - inserts
            spec = _spec(**kwargs)
        else:
            spec = _spec(**kwargs)
            ops = gen_workload(spec)
    except (IngestionError, OSError) as exc:
        raise BenchError(str(exc), EXIT_CONFIG)

    schemes = [Scheme.pope, Scheme.mope] if scheme == "both" else [Scheme(scheme)]
    options = TransportOptions(TransportKind(transport), chunk_size=chunk_size)
    try:
        report = anyio.run(
            partial(
                run_experiment,
                schemes,
                ops,
                spec,
                options,
                latencies_ms=list(latency_ms) or None,
                checkpoints=_checkpoints(checkpoints),
                verify=not no_verify,
                track_leakage=not no_leakage,
                snapshot_out=snapshot_out,
            )
        )
    except (ConfigError, EncodingError) as exc:
        raise BenchError(exc.detail, EXIT_CONFIG)
    except (SessionError, ProtocolViolation, LeakageIntegrityError) as exc:
        raise BenchError(exc.detail, EXIT_SESSION)

    if store:
        rows = anyio.run(_store, report)
        click.echo(f"stored runs {', '.join(str(row.id) for row in rows)}", err=True)
    _write(emit_report(report, fmt), out)
    if any(r.failed for r in report.runs):
        sys.exit(EXIT_SESSION)


@cli.command()
@click.option("--run-id", type=int, required=True)
@click.option("--format", "fmt", type=click.Choice([f.value for f in ReportFormat]), default="pretty")
def report(run_id: int, fmt: str) -> None:
    """Re-emit a stored run."""
    stored = anyio.run(_load, run_id)
    if stored is None:
        raise BenchError(f"no stored run {run_id}", EXIT_CONFIG)
    _write(emit_report(stored, fmt), None)


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the run that wrote it.")
def snapshot(path: Path, seed: int) -> None:
    """Reload a tree written by run --snapshot-out, print its shape and check it."""
    try:
        tree = load_tree(path.read_bytes())
    except OSError as exc:
        raise BenchError(str(exc), EXIT_CONFIG)
    except EncodingError as exc:
        raise BenchError(exc.detail, EXIT_CONFIG)
    for name, value in PopeService(tree.capacity, tree=tree).stats().items():
        click.echo(f"{name}\t{value}")
    problems = verify_tree(tree, keygen(seed=seed))
    for problem in problems:
        click.echo(problem, err=True)
    if problems:
        raise BenchError(f"{len(problems)} structural problems in {path}", EXIT_CONFIG)


if __name__ == "__main__":
    cli()
