import json

import anyio
import numpy as np
import pytest
from click.testing import CliRunner

from app.bench.cli import EXIT_CONFIG, EXIT_SESSION, cli
from app.bench.experiment import (
    TransportOptions,
    derive_seeds,
    fit_latency,
    run_experiment,
    run_scheme,
)
from app.bench.plaintext import PlaintextEngine
from app.bench.report import (
    CSV_COLUMNS,
    emit_report,
    load_report,
    parse_json_lines,
    store_report,
)
from app.bench.workload import dump_workload, gen_workload, ingest_csv, load_workload
from app.exceptions import IngestionError, LeakageIntegrityError
from app.leakage import KnowledgeTracker
from app.protocol.session import InsertOp, RangeOp
from app.schemas import Placement, ReportFormat, Scheme, TransportKind, WorkloadSpec


def test_workload_defaults():
    spec = WorkloadSpec(n=10_000)
    assert spec.m == 100
    assert spec.capacity == 10
    assert WorkloadSpec(n=5).capacity == 2
    assert WorkloadSpec(n=100, m=0, capacity=7).m == 0


def test_workload_rejects_tiny_capacity():
    with pytest.raises(ValueError):
        WorkloadSpec(n=10, capacity=1)


@pytest.mark.parametrize("placement", list(Placement))
def test_generated_counts(placement):
    spec = WorkloadSpec(n=400, m=15, placement=placement, seed=3)
    ops = gen_workload(spec)
    assert sum(isinstance(op, InsertOp) for op in ops) == 400
    assert sum(isinstance(op, RangeOp) for op in ops) == 15
    assert all(op.lo <= op.hi for op in ops if isinstance(op, RangeOp))


def test_generation_is_deterministic():
    spec = WorkloadSpec(n=300, seed=9)
    assert gen_workload(spec) == gen_workload(spec)
    assert gen_workload(spec) != gen_workload(WorkloadSpec(n=300, seed=10))


def test_bunched_queries_come_last():
    ops = gen_workload(WorkloadSpec(n=200, m=10, placement=Placement.bunched))
    assert all(isinstance(op, InsertOp) for op in ops[:200])
    assert all(isinstance(op, RangeOp) for op in ops[200:])


def test_repeated_placement_asks_one_range():
    ops = gen_workload(WorkloadSpec(n=200, m=10, placement=Placement.repeated, seed=4))
    assert len({op for op in ops if isinstance(op, RangeOp)}) == 1


def test_ranges_cover_stored_labels():
    ops = gen_workload(WorkloadSpec(n=500, m=20, mean_range=5, placement=Placement.bunched))
    stored = {op.label for op in ops if isinstance(op, InsertOp)}
    for op in ops:
        if isinstance(op, RangeOp):
            assert op.lo in stored and op.hi in stored


def write_csv(tmp_path, text):
    path = tmp_path / "salaries.csv"
    path.write_text(text)
    return path


def test_ingest_scales_decimals(tmp_path):
    path = write_csv(tmp_path, "name,salary\nann,52000.50\nbob,\"1,200\"\ncid,0.019\n")
    result = ingest_csv(path, "salary", "name")
    assert [op.label for op in result.inserts] == [5200050, 120000, 2]
    assert [op.payload for op in result.inserts] == [b"ann", b"bob", b"cid"]
    assert (result.rows, result.skipped) == (3, 0)


def test_ingest_skips_a_few_bad_rows(tmp_path):
    rows = "".join(f"p{i},{i}\n" for i in range(20))
    path = write_csv(tmp_path, "name,salary\n" + rows + "bad,n/a\n")
    result = ingest_csv(path, "salary", "name", max_bad_fraction=0.1)
    assert len(result.inserts) == 20
    assert result.skipped == 1


def test_ingest_gives_up_on_mostly_bad_rows(tmp_path):
    path = write_csv(tmp_path, "name,salary\na,-3\nb,x\nc,1\n")
    with pytest.raises(IngestionError):
        ingest_csv(path, "salary", "name")


def test_ingest_needs_both_columns(tmp_path):
    path = write_csv(tmp_path, "name,pay\na,1\n")
    with pytest.raises(IngestionError):
        ingest_csv(path, "salary", "name")
    with pytest.raises(IngestionError):
        ingest_csv(tmp_path / "missing.csv", "salary", "name")


def test_workload_file_round_trip():
    ops = [InsertOp(3, b"\x00\xff"), RangeOp(1, 9), InsertOp(2**63, b"")]
    assert load_workload(dump_workload(ops)) == ops
    assert load_workload("") == []


@pytest.mark.parametrize(
    "line",
    ['{"op": "delete", "label": 1}', '{"op": "insert", "label": 1}', "not json", '{"op": "range", "lo": "x", "hi": 2}'],
)
def test_malformed_workload_lines(line):
    with pytest.raises(IngestionError):
        load_workload(line)


def test_plaintext_engine_is_inclusive():
    engine = PlaintextEngine()
    for label in (5, 1, 7, 5, 9):
        engine.insert(label, b"%d" % label)
    assert engine.search(5, 7) == [(5, b"5"), (5, b"5"), (7, b"7")]
    assert engine.search(10, 20) == []
    engine.insert(6, b"6")
    assert [label for label, _ in engine.search(5, 7)] == [5, 5, 6, 7]
    assert len(engine) == 6


@pytest.mark.anyio
@pytest.mark.parametrize("scheme", list(Scheme))
async def test_run_scheme_checks_every_answer(scheme):
    spec = WorkloadSpec(n=600, m=20, capacity=3, seed=5, mean_range=30)
    result = await run_scheme(scheme, gen_workload(spec), spec, checkpoints=[1, 10, 20])
    assert not result.failed
    assert result.mismatches == 0
    assert (result.inserts, result.searches) == (600, 20)
    assert result.result_items > 0
    assert [c.queries for c in result.checkpoints] == [1, 10, 20]
    assert result.bound is not None
    if scheme == Scheme.pope:
        assert result.insert_violations == 0
        assert result.insert_rounds == 0
        assert result.one_way_msgs == 600
        assert result.incomparable_pairs > 0
    else:
        assert result.incomparable_pairs == 0
        assert result.insert_rounds >= 600


@pytest.mark.anyio
async def test_run_scheme_writes_a_snapshot(tmp_path):
    spec = WorkloadSpec(n=100, m=5, seed=1)
    out = tmp_path / "tree.bin"
    await run_scheme(Scheme.pope, gen_workload(spec), spec, snapshot_out=out)
    assert out.read_bytes()


@pytest.mark.anyio
async def test_latency_sweep_is_fitted():
    spec = WorkloadSpec(n=120, m=4, capacity=3, seed=2)
    report = await run_experiment(
        [Scheme.pope, Scheme.mope], gen_workload(spec), spec, latencies_ms=[0.0, 1.0], track_leakage=False
    )
    assert len(report.runs) == 4
    assert {fit.scheme for fit in report.latency_fits} == {Scheme.pope, Scheme.mope}
    assert all(fit.points == 2 for fit in report.latency_fits)


@pytest.mark.anyio
async def test_socket_run_matches_in_process():
    spec = WorkloadSpec(n=200, m=8, capacity=3, seed=6)
    ops = gen_workload(spec)
    local = await run_scheme(Scheme.pope, ops, spec)
    remote = await run_scheme(Scheme.pope, ops, spec, TransportOptions(TransportKind.socket))
    assert not remote.failed
    assert remote.mismatches == 0
    assert (remote.total_rounds, remote.ciphertexts_sent) == (local.total_rounds, local.ciphertexts_sent)


def test_no_fit_without_a_sweep():
    assert fit_latency([]) == []


@pytest.fixture(scope="module")
def report():
    spec = WorkloadSpec(n=150, m=6, capacity=3, seed=8)
    return anyio.run(run_experiment, [Scheme.pope, Scheme.mope], gen_workload(spec), spec)


def test_json_lines_report(report):
    lines = emit_report(report, ReportFormat.json_lines).decode().splitlines()
    assert json.loads(lines[0])["kind"] == "environment"
    assert [json.loads(line)["scheme"] for line in lines[1:]] == ["pope", "mope"]
    assert parse_json_lines(emit_report(report)) == report


def test_csv_report(report):
    lines = emit_report(report, "csv").decode().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    assert lines[1].startswith("1,pope,150,6,3,")


def test_pretty_report(report):
    text = emit_report(report, ReportFormat.pretty).decode()
    assert "run 1" in text and "run 2" in text
    assert "incomparable_pairs" in text


def test_report_parsing_rejects_unknown_records():
    with pytest.raises(IngestionError):
        parse_json_lines('{"kind": "mystery"}\n')
    with pytest.raises(IngestionError):
        parse_json_lines("")


@pytest.mark.anyio
async def test_stored_runs_reload(db_maker, report):
    async with db_maker() as db:
        rows = await store_report(db, report)
        assert [row.scheme for row in rows] == ["pope", "mope"]
        loaded = await load_report(db, rows[1].id)
        assert loaded.runs == [report.runs[1]]
        assert loaded.environment == report.environment
        assert await load_report(db, 10_000) is None


def test_cli_gen_writes_json_lines(tmp_path):
    out = tmp_path / "ops.jsonl"
    result = CliRunner().invoke(cli, ["gen", "--n", "50", "--m", "3", "--seed", "1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    ops = load_workload(out.read_text())
    assert len(ops) == 53


def test_cli_runs_a_workload_file(tmp_path):
    runner = CliRunner()
    workload = tmp_path / "ops.jsonl"
    runner.invoke(cli, ["gen", "--n", "80", "--m", "4", "--out", str(workload)])
    result = runner.invoke(
        cli,
        ["run", "--workload", str(workload), "--cap", "3", "--scheme", "pope",
         "--format", "csv", "--checkpoints", "1,4"],
    )
    assert result.exit_code == 0, result.output
    rows = result.output.strip().splitlines()
    assert rows[0].startswith("schema_version,scheme")
    assert rows[1].startswith("1,pope,80,4,3,")


def test_cli_rejects_a_bad_capacity():
    result = CliRunner().invoke(cli, ["run", "--n", "50", "--cap", "1"])
    assert result.exit_code == EXIT_CONFIG


def test_cli_rejects_bad_checkpoints():
    result = CliRunner().invoke(cli, ["run", "--n", "50", "--checkpoints", "one,two"])
    assert result.exit_code == EXIT_CONFIG


def test_cli_report_for_a_missing_run():
    result = CliRunner().invoke(cli, ["report", "--run-id", "424242"])
    assert result.exit_code == EXIT_CONFIG
    assert "no stored run" in result.output


def test_range_queries_average_the_requested_size():
    spec = WorkloadSpec(n=100_000, m=10_000, placement=Placement.bunched, seed=12)
    ops = gen_workload(spec)
    labels = np.sort(np.array([op.label for op in ops if isinstance(op, InsertOp)], dtype=np.uint64))
    ranges = [op for op in ops if isinstance(op, RangeOp)]
    lo = np.array([op.lo for op in ranges], dtype=np.uint64)
    hi = np.array([op.hi for op in ranges], dtype=np.uint64)
    covered = np.searchsorted(labels, hi, side="right") - np.searchsorted(labels, lo, side="left")
    assert len(ranges) == 10_000
    assert abs(covered.mean() - 100) <= 5


def test_server_and_client_seeds_are_independent():
    server, client = derive_seeds(3)
    assert server != client
    assert derive_seeds(3) == (server, client)
    assert derive_seeds(4) != (server, client)


@pytest.mark.anyio
@pytest.mark.parametrize("seed", range(6))
async def test_pope_runs_to_completion(seed):
    spec = WorkloadSpec(n=1000, seed=seed)
    result = await run_scheme(Scheme.pope, gen_workload(spec), spec)
    assert not result.failed, result.error
    assert result.mismatches == 0
    assert result.searches == 31


def broken_promote(self, labels):
    raise LeakageIntegrityError("cannot promote a pivot twice")


@pytest.mark.anyio
async def test_run_scheme_flags_a_tracking_failure(monkeypatch):
    monkeypatch.setattr(KnowledgeTracker, "on_promote", broken_promote)
    spec = WorkloadSpec(n=200, m=8, capacity=3, placement=Placement.bunched, seed=1)
    result = await run_scheme(Scheme.pope, gen_workload(spec), spec)
    assert result.failed
    assert result.error.startswith("LeakageIntegrityError")
    assert (result.inserts, result.searches) == (200, 0)


def test_cli_exits_with_the_session_code_on_a_tracking_failure(monkeypatch):
    monkeypatch.setattr(KnowledgeTracker, "on_promote", broken_promote)
    result = CliRunner().invoke(
        cli,
        ["run", "--n", "200", "--m", "8", "--cap", "3", "--placement", "bunched-at-end",
         "--scheme", "pope", "--format", "csv"],
    )
    assert result.exit_code == EXIT_SESSION
    assert result.stdout.splitlines()[1].startswith("1,pope,200,8,3,")


def test_cli_reloads_a_snapshot(tmp_path):
    out = tmp_path / "tree.bin"
    runner = CliRunner()
    ran = runner.invoke(
        cli,
        ["run", "--n", "300", "--m", "10", "--cap", "3", "--seed", "4", "--scheme", "pope",
         "--snapshot-out", str(out), "--format", "csv"],
    )
    assert ran.exit_code == 0, ran.output

    result = runner.invoke(cli, ["snapshot", str(out), "--seed", "4"])
    assert result.exit_code == 0, result.output
    stats = dict(line.split("\t") for line in result.stdout.splitlines())
    assert stats["blocks"] == "300"
    assert int(stats["max_fanout"]) <= 4

    assert runner.invoke(cli, ["snapshot", str(out), "--seed", "5"]).exit_code == EXIT_CONFIG
    garbage = tmp_path / "garbage.bin"
    garbage.write_bytes(b"junk")
    assert runner.invoke(cli, ["snapshot", str(garbage)]).exit_code == EXIT_CONFIG
    assert runner.invoke(cli, ["snapshot", str(tmp_path / "absent.bin")]).exit_code == EXIT_CONFIG
