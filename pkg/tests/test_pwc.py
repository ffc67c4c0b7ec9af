import json

import pytest

from cimf.errors import Duplicate, NotFound, ValidationError
from cimf.pwc import Catalogue, RunRecord, StepResult
from cimf.runs import replay_structure, run_payload
from cimf.store import ObjectStore
from cimf.templates import DagInstance


def record(run_id, status="succeeded", submitted="2024-01-01T00:00:00+00:00", wf="flood",
           steps=()):
    return RunRecord(run_id, {"workflow_type": "x", "n": run_id}, {"k": 1}, wf, "abc123", "single",
                     run_id, list(steps), status, submitted, submitted)


@pytest.fixture
def cat(tmp_path):
    return Catalogue(tmp_path / "pwc.jsonl", ObjectStore(tmp_path / "s"))


def test_round_trip_is_verbatim(cat, tmp_path):
    rec = record("r1")
    cat.record(rec)
    again = Catalogue(tmp_path / "pwc.jsonl")
    assert again.get("r1").to_dict() == rec.to_dict()


def test_journal_lines_are_versioned(cat):
    cat.open_run(record("r1", status="running"))
    r = cat.get("r1")
    r.status = "failed"
    cat.finalize(r)
    lines = [json.loads(x) for x in cat.path.read_text().splitlines()]
    assert [(x["v"], x["event"]) for x in lines] == [(1, "open"), (1, "final")]
    assert cat.get("r1").status == "failed"


def test_duplicates_are_refused(cat):
    cat.record(record("r1"))
    with pytest.raises(Duplicate):
        cat.record(record("r1"))
    with pytest.raises(Duplicate):
        cat.finalize(record("r1"))
    with pytest.raises(ValueError):
        cat.finalize(record("r2", status="running"))


def test_unknown_run(cat):
    with pytest.raises(NotFound):
        cat.get("nope")


def test_torn_tail_is_ignored_on_restart(cat, tmp_path):
    cat.record(record("r1"))
    with open(cat.path, "a") as fh:
        fh.write('{"v": 1, "event": "final", "run": {"run_')
    again = Catalogue(tmp_path / "pwc.jsonl")
    assert [r.run_id for r in again.all_runs()] == ["r1"]


def test_compact_keeps_latest_state(cat, tmp_path):
    cat.open_run(record("r1", status="running"))
    done = record("r1", status="succeeded")
    cat.finalize(done)
    cat.record(record("r2", status="running"))
    cat.compact()
    assert len(cat.path.read_text().splitlines()) == 2
    again = Catalogue(tmp_path / "pwc.jsonl")
    assert again.get("r1").status == "succeeded" and again.get("r2").status == "running"


def test_reuse_lookup_requires_live_outputs(cat):
    store = cat.store
    store.create_bucket("r1")
    obj = store.put("r1", "out.txt", b"x")
    ok = StepResult("s", {"sig": 1}, "sigdigest", "succeeded", [obj])
    bad = StepResult("t", {"sig": 2}, "faileddigest", "failed", [])
    cat.record(record("r1", steps=[ok, bad]))
    run_id, step = cat.find_reusable("sigdigest")
    assert run_id == "r1" and step.step_id == "s"
    assert cat.find_reusable("faileddigest") is None
    store.path_of(obj).unlink()
    assert cat.find_reusable("sigdigest") is None


def test_open_runs_are_not_reuse_sources(cat):
    cat.store.create_bucket("r1")
    obj = cat.store.put("r1", "out.txt", b"x")
    cat.open_run(record("r1", status="running",
                        steps=[StepResult("s", {}, "d", "succeeded", [obj])]))
    assert cat.find_reusable("d") is None


def test_query_filters_and_boundaries(cat):
    times = ["2024-01-01T00:00:00+00:00", "2024-01-02T00:00:00+00:00",
             "2024-01-03T00:00:00+00:00", "2024-01-04T00:00:00+00:00"]
    for i, t in enumerate(times):
        cat.record(record(f"r{i}", status="failed" if i == 2 else "succeeded", submitted=t,
                          wf="flood" if i < 3 else "other"))
    ids = lambda runs: [r.run_id for r in runs]  # noqa: E731
    assert ids(cat.query_runs()) == ["r3", "r2", "r1", "r0"]
    assert ids(cat.query_runs(workflow_name="flood")) == ["r2", "r1", "r0"]
    assert ids(cat.query_runs(status="failed")) == ["r2"]
    # start inclusive, end exclusive
    assert ids(cat.query_runs(start=times[1], end=times[3])) == ["r2", "r1"]
    assert ids(cat.query_runs(offset=1, limit=2)) == ["r2", "r1"]
    assert ids(cat.query_runs(limit=0)) == []
    with pytest.raises(ValidationError):
        cat.query_runs(status="exploded")
    with pytest.raises(ValidationError):
        cat.query_runs(start="yesterday")


def test_two_catalogues_share_one_journal(tmp_path):
    a = Catalogue(tmp_path / "pwc.jsonl")
    b = Catalogue(tmp_path / "pwc.jsonl")
    a.record(record("from-a"))
    assert b.get("from-a").run_id == "from-a"
    with pytest.raises(Duplicate):
        b.record(record("from-a"))


def test_workflow_runs_hold_provenance(ws, payload):
    p = payload(infiltration_rate=0.002)
    rec = run_payload(ws, p)
    stored = ws.pwc.get(rec.run_id)
    assert stored.user_payload == p
    assert stored.engine_payload["infiltration_rate"] == 0.002
    assert stored.template_version_hash == ws.catalog.get("flood").version_hash
    assert replay_structure(ws, stored) == DagInstance.from_dict(stored.dag).structure()
