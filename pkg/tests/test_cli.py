import json

import pytest
from fastapi.testclient import TestClient

from cimf import builtin
from cimf.cli import HttpClient, main
from cimf.gateway import Gateway, create_app
from cimf.workspace import Workspace


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("CIMF_STORE_ROOT", str(tmp_path / "ws"))
    monkeypatch.setenv("CIMF_WORKERS", "2")
    monkeypatch.delenv("CIMF_URL", raising=False)
    monkeypatch.delenv("CIMF_TOKEN", raising=False)
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_local_round_trip(root, capsys, payload):
    pfile = root / "payload.json"
    pfile.write_text(json.dumps(payload()))
    code, out, _ = run(capsys, "submit", "-f", str(pfile))
    assert code == 0
    result = json.loads(out)
    assert result["state"] == "succeeded"
    run_id = result["run_id"]

    code, out, _ = run(capsys, "status", run_id)
    assert json.loads(out)["steps"]["succeeded"] == 5
    code, out, _ = run(capsys, "fetch", run_id, "budget.json")
    assert set(json.loads(out)) >= {"precip_in", "stored", "outflow", "infiltrated"}
    target = root / "depth.asc"
    run(capsys, "fetch", run_id, "depth.asc", "-o", str(target))
    assert target.read_text().startswith("ncols")
    code, out, _ = run(capsys, "runs", "list")
    assert [r["run_id"] for r in json.loads(out)] == [run_id]
    code, out, _ = run(capsys, "runs", "show", run_id)
    assert json.loads(out)["user_payload"] == payload()
    # a second identical submission reuses every step
    code, out, _ = run(capsys, "submit", "-f", str(pfile))
    assert json.loads(out)["reused"] == 5


def test_module_and_template_commands(root, capsys):
    spec = root / "spec.json"
    spec.write_text(json.dumps({"name": "hello", "tag": "0.1", "run_command": ["{exe}"],
                                "description": "says hello"}))
    exe = root / "model"
    exe.write_text("#!/bin/sh\necho hello\n")
    code, out, _ = run(capsys, "module", "onboard", "--spec", str(spec), "--exe", str(exe))
    assert code == 0 and json.loads(out) == {"name": "hello", "tag": "0.1"}
    code, out, _ = run(capsys, "module", "list", "--filter", "hell")
    assert json.loads(out) == [{"name": "hello", "tag": "0.1", "description": "says hello"}]
    code, _, err = run(capsys, "module", "onboard", "--spec", str(spec), "--exe", str(exe))
    assert code == 1 and "Duplicate" in err

    tfile = root / "flood.json"
    doc = builtin.flood_template()
    doc["description"] = "edited"
    tfile.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "template", "register", str(tfile))
    version = json.loads(out)["version_hash"]
    code, out, _ = run(capsys, "template", "show", "--name", "flood", "--version", version[:8])
    assert json.loads(out)["document"]["description"] == "edited"


def test_errors_exit_nonzero(root, capsys, payload):
    bad = payload()
    bad["temporal_domain"]["start"] = "2030-01-01"
    pfile = root / "bad.json"
    pfile.write_text(json.dumps(bad))
    code, _, err = run(capsys, "submit", "-f", str(pfile))
    assert code == 1 and "temporal_domain" in err
    code, _, err = run(capsys, "status", "run-unknown")
    assert code == 1 and "NotFound" in err


def test_relative_root_survives_sandbox_chdir(root, capsys, payload, monkeypatch):
    monkeypatch.chdir(root)
    pfile = root / "payload.json"
    pfile.write_text(json.dumps(payload()))
    code, out, _ = run(capsys, "--root", "rel-ws", "submit", "-f", "payload.json")
    assert code == 0 and json.loads(out)["state"] == "succeeded"


def test_http_client_against_the_app(tmp_path, payload):
    ws = Workspace.open(tmp_path / "srv", install_builtin=True, token="t0k")
    gw = Gateway(ws)
    client = HttpClient("http://testserver", token="t0k", http=TestClient(create_app(gw)))
    result = client.submit(payload())
    assert result["state"] == "succeeded"
    assert client.fetch(result["run_id"], "depth.asc").startswith(b"ncols")
    assert client.runs(workflow_name="flood")[0]["run_id"] == result["run_id"]
    assert client.show_template("flood")["workflow_name"] == "flood"
    assert client.onboard({"name": "x", "tag": "1", "run_command": ["{exe}"]}, b"#!/bin/sh\n") \
        == {"name": "x", "tag": "1"}
    gw.close()
