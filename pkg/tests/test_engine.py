import json
import os
import textwrap
import time

import pytest

from cimf.engine import signature_of
from cimf.errors import CycleError
from cimf.hashing import digest_json
from cimf.runs import run_payload
from cimf.templates import ConcreteStep

PAYLOAD = {"workflow_type": "diamond", "spatial_domain": {"bbox": [0, 0, 1, 1]},
           "temporal_domain": {"start": "2020-01-01", "end": "2020-01-01"}, "options": {}}


def onboard(ws, name, body, inputs=(), outputs=("out.txt",), params=(), timeout=None):
    spec = {"name": name, "tag": "1", "run_command": ["{python}", "{exe}"],
            "inputs": [{"logical_name": i} for i in inputs],
            "outputs": [{"logical_name": o} for o in outputs],
            "params": list(params), "executable_name": "main.py"}
    if timeout:
        spec["resources"] = {"timeout_s": timeout}
    ws.registry.onboard_module(spec, textwrap.dedent(body).encode())


def template(name, steps, edges, types=None, params=None):
    return {"workflow_name": name, "workflow_types": types or {name: "single"},
            "params": params or {}, "steps": steps, "edges": edges}


def step(sid, module, inputs=None, params=None):
    return {"step_id": sid, "module": {"name": module, "tag": "1"},
            "inputs": inputs or {}, "params": params or {}}


SLOW_CONCAT = """
    import glob, json, time
    p = json.load(open("cimf_params.json"))
    time.sleep(p["delay"])
    parts = [open(f).read() for f in sorted(glob.glob("in_*.txt"))]
    open("out.txt", "w").write(p["tag"] + "(" + ",".join(parts) + ")")
"""


@pytest.fixture
def diamond(ws):
    params = [{"name": "tag", "type": "string"}, {"name": "delay", "type": "number", "default": 0.2}]
    onboard(ws, "src", SLOW_CONCAT, params=params)
    onboard(ws, "one", SLOW_CONCAT, inputs=["in_a.txt"], params=params)
    onboard(ws, "two", SLOW_CONCAT, inputs=["in_a.txt", "in_b.txt"], params=params)
    ref = lambda s: {"step": s, "output": "out.txt"}  # noqa: E731
    doc = template("diamond", [
        step("a", "src", params={"tag": "A"}),
        step("b", "one", {"in_a.txt": ref("a")}, {"tag": "B"}),
        step("c", "one", {"in_a.txt": ref("a")}, {"tag": "C"}),
        step("d", "two", {"in_a.txt": ref("b"), "in_b.txt": ref("c")}, {"tag": "D"}),
    ], [["a", "b"], ["a", "c"], ["b", "d"], ["c", "d"]])
    ws.catalog.register_template(doc)
    return ws


def test_diamond_respects_dependencies_under_four_workers(diamond):
    rec = run_payload(diamond, PAYLOAD, reuse=False)
    assert rec.status == "succeeded"
    steps = {s.step_id: s for s in rec.steps}
    preds = {"b": ["a"], "c": ["a"], "d": ["b", "c"]}
    for node, ps in preds.items():
        for p in ps:
            assert steps[node].started_at >= steps[p].ended_at
    assert diamond.store.get(rec.bucket, "out.txt")[0] == b"D(B(A()),C(A()))"
    # b and c have no mutual dependency, so they overlap on the 4-worker pool
    assert steps["b"].started_at < steps["c"].ended_at and steps["c"].started_at < steps["b"].ended_at


def test_repeated_runs_give_identical_digests(diamond):
    first = run_payload(diamond, PAYLOAD, reuse=False)
    second = run_payload(diamond, PAYLOAD, reuse=False)
    digests = lambda r: {s.step_id: [o.digest for o in s.outputs] for s in r.steps}  # noqa: E731
    assert digests(first) == digests(second)
    assert all(s.status == "succeeded" for s in second.steps)


def test_identical_rerun_reuses_everything(diamond):
    run_payload(diamond, PAYLOAD)
    calls = diamond.engine.invocations
    again = run_payload(diamond, PAYLOAD)
    assert [s.status for s in again.steps] == ["reused"] * 4
    assert diamond.engine.invocations == calls
    assert diamond.store.get(again.bucket, "out.txt")[0] == b"D(B(A()),C(A()))"
    assert again.steps[0].reused_from["run_id"] != again.run_id


def test_cyclic_template_rejected(ws):
    onboard(ws, "src", SLOW_CONCAT, params=[{"name": "tag", "type": "string"}])
    doc = template("loop", [step("x", "src", params={"tag": "x"}),
                            step("y", "src", params={"tag": "y"})], [["x", "y"], ["y", "x"]])
    with pytest.raises(CycleError):
        ws.catalog.register_template(doc)


def test_sandbox_contract(ws):
    onboard(ws, "probe", """
        import json, os
        seen = {"cwd": os.getcwd(), "env": os.environ["CIMF_SANDBOX"],
                "files": sorted(os.listdir(".")), "params": open("cimf_params.json").read(),
                "input": open("data.txt").read()}
        print("probe ran")
        json.dump(seen, open("out.txt", "w"))
    """, inputs=["data.txt"], params=[{"name": "b", "type": "number"}, {"name": "a", "type": "string"}])
    ws.store.create_bucket("probe-run")
    obj = ws.store.put("probe-run", "staged/data.txt", b"hello")
    node = ConcreteStep("probe", "probe", ("probe", "1"), {"b": 2.5, "a": "x"},
                        {"data.txt": {"object": obj.stored_name}})
    res = ws.engine.run_step(node, "probe-run")
    assert res.status == "succeeded" and res.exit_code == 0
    seen = json.loads(ws.store.get("probe-run", "out.txt")[0])
    assert seen["cwd"] == seen["env"]
    assert seen["files"] == ["cimf_params.json", "data.txt"]
    assert list(json.loads(seen["params"])) == ["a", "b"]
    assert seen["input"] == "hello"
    log = ws.store.get("probe-run", "logs/probe.log")[0]
    assert b"probe ran" in log
    # the sandbox is removed afterwards
    assert not os.path.exists(seen["cwd"])


def test_nonzero_exit_fails_step_and_skips_dependents(ws):
    onboard(ws, "boom", "import sys\nprint('bad input')\nsys.exit(3)\n")
    onboard(ws, "after", "open('out.txt','w').write('x')\n", inputs=["in.txt"])
    ws.catalog.register_template(template("fail", [
        step("a", "boom"), step("b", "after", {"in.txt": {"step": "a", "output": "out.txt"}})],
        [["a", "b"]]))
    rec = run_payload(ws, {**PAYLOAD, "workflow_type": "fail"})
    a, b = rec.steps
    assert rec.status == "failed"
    assert (a.status, a.exit_code) == ("failed", 3) and "status 3" in a.error
    assert b"bad input" in ws.store.get(rec.bucket, "logs/a.log")[0]
    assert b.status == "skipped"
    # failed steps are never offered for reuse
    again = run_payload(ws, {**PAYLOAD, "workflow_type": "fail"})
    assert again.steps[0].status == "failed"


def test_missing_declared_output_fails(ws):
    onboard(ws, "lazy", "print('forgot')\n")
    ws.catalog.register_template(template("lazy", [step("a", "lazy")], []))
    rec = run_payload(ws, {**PAYLOAD, "workflow_type": "lazy"})
    assert rec.steps[0].status == "failed"
    assert "out.txt" in rec.steps[0].error


def test_timeout_kills_the_module(ws):
    onboard(ws, "sleepy", "import time\ntime.sleep(30)\n", timeout=1)
    ws.catalog.register_template(template("sleepy", [step("a", "sleepy")], []))
    t0 = time.monotonic()
    rec = run_payload(ws, {**PAYLOAD, "workflow_type": "sleepy"})
    assert time.monotonic() - t0 < 10
    assert rec.steps[0].status == "failed" and "timed out" in rec.steps[0].error


def test_signature_is_order_independent_and_sensitive():
    a = signature_of("m", "1", "d", {"x": 1, "y": 2}, [("b", "h2"), ("a", "h1")])
    b = signature_of("m", "1", "d", {"y": 2, "x": 1}, [("a", "h1"), ("b", "h2")])
    assert digest_json(a) == digest_json(b)
    for changed in (signature_of("m", "2", "d", {"x": 1, "y": 2}, [("a", "h1"), ("b", "h2")]),
                    signature_of("m", "1", "e", {"x": 1, "y": 2}, [("a", "h1"), ("b", "h2")]),
                    signature_of("m", "1", "d", {"x": 1, "y": 3}, [("a", "h1"), ("b", "h2")]),
                    signature_of("m", "1", "d", {"x": 1, "y": 2}, [("a", "h1"), ("b", "h3")])):
        assert digest_json(changed) != digest_json(a)


def test_reuse_skips_when_backing_object_is_gone(diamond):
    first = run_payload(diamond, PAYLOAD)
    a = next(s for s in first.steps if s.step_id == "a")
    diamond.store.path_of(a.outputs[0]).unlink()
    again = run_payload(diamond, PAYLOAD)
    status = {s.step_id: s.status for s in again.steps}
    assert status["a"] == "succeeded"
    assert status["b"] == status["c"] == status["d"] == "reused"

