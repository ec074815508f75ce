from app.bench.report import CSV_COLUMNS
from app.exceptions import LeakageIntegrityError
from app.leakage import KnowledgeTracker


def run_small_experiment(api, **workload):
    body = {"workload": {"n": 120, "m": 5, "capacity": 3, "seed": 2, **workload}}
    return api.post("/experiments/", json=body)


def test_root(api):
    response = api.get("/")
    assert response.status_code == 200
    assert "POST /experiments/" in response.json()["message"]


def test_experiment_stores_one_run_per_scheme(api):
    response = run_small_experiment(api)
    assert response.status_code == 201
    runs = response.json()
    assert [run["scheme"] for run in runs] == ["pope", "mope"]
    assert all(run["n"] == 120 and run["m"] == 5 and not run["failed"] for run in runs)


def test_listing_and_fetching_reports(api):
    created = run_small_experiment(api).json()
    listed = api.get("/reports/").json()
    assert [run["id"] for run in listed] == [run["id"] for run in created]

    response = api.get(f"/reports/{created[0]['id']}", params={"format": "csv"})
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/csv")
    header, row = response.text.strip().splitlines()
    assert header == ",".join(CSV_COLUMNS)
    assert row.startswith("1,pope,120,5,3,")

    lines = api.get(f"/reports/{created[1]['id']}").text.splitlines()
    assert '"kind": "environment"' in lines[0]
    assert '"scheme": "mope"' in lines[1]


def test_missing_report(api):
    response = api.get("/reports/999")
    assert response.status_code == 404
    assert response.json()["detail"] == "Run not found"


def test_unknown_format_is_rejected(api):
    assert api.get("/reports/1", params={"format": "xml"}).status_code == 422


def test_capacity_must_be_at_least_two(api):
    assert run_small_experiment(api, capacity=1).status_code == 422


def test_single_scheme_request(api):
    body = {"workload": {"n": 50, "m": 2, "seed": 1}, "schemes": ["mope"]}
    response = api.post("/experiments/", json=body)
    assert response.status_code == 201
    assert [run["scheme"] for run in response.json()] == ["mope"]


def test_tracking_failure_is_stored_as_a_failed_run(api, monkeypatch):
    def broken_promote(self, labels):
        raise LeakageIntegrityError("cannot promote a pivot twice")

    monkeypatch.setattr(KnowledgeTracker, "on_promote", broken_promote)
    response = run_small_experiment(api, placement="bunched-at-end")
    assert response.status_code == 201
    assert [(run["scheme"], run["failed"]) for run in response.json()] == [
        ("pope", True),
        ("mope", False),
    ]


def test_escaping_session_error_is_a_bad_gateway(api, monkeypatch):
    async def failing_experiment(*args, **kwargs):
        raise LeakageIntegrityError("view diverged")

    monkeypatch.setattr("app.routers.experiments.run_experiment", failing_experiment)
    response = run_small_experiment(api)
    assert response.status_code == 502
    assert response.json()["detail"] == "view diverged"
