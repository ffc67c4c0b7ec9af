"""DAG execution: scheduling, sandboxed module invocation, memoisation.

Sandbox contract seen by a module process:

* working directory is a fresh, empty sandbox directory, also exported as
  ``CIMF_SANDBOX``;
* each declared input is present as ``./<logical_name>``;
* resolved parameters are in ``./cimf_params.json`` (UTF-8, sorted keys);
* declared outputs are collected from ``./<logical_name>`` after a zero
  exit status; stdout and stderr are stored as ``logs/<step_id>.log``.

A fan-in step (ensemble aggregation) receives its collection input as
``./<name>/<member>/<file>`` plus ``./stack_manifest.json`` describing the
members that succeeded.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
import uuid
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import cimf

from .errors import CimfError, NotFound
from .hashing import canonical_json, digest_json
from .pwc import Catalogue, RunRecord, StepResult
from .registry import ModuleRegistry, render_command
from .store import ObjectStore, StoredObject, now_rfc3339
from .templates import ConcreteStep, DagInstance

log = logging.getLogger(__name__)

PARAMS_FILE = "cimf_params.json"
MANIFEST_FILE = "stack_manifest.json"
DEFAULT_TIMEOUT = 600.0
_OK = ("succeeded", "reused")


class StepFailure(CimfError):
    def __init__(self, message, exit_code=None, log_ref=None):
        super().__init__(message)
        self.exit_code = exit_code
        self.log_ref = log_ref


@dataclass(frozen=True)
class StagedInput:
    name: str  # path inside the sandbox
    obj: StoredObject | None = None
    data: bytes | None = None


def signature_of(module_name, module_tag, executable_digest, params, inputs) -> dict:
    """Canonical step identity used as the memoisation key."""
    return {
        "module_name": module_name,
        "module_tag": module_tag,
        "executable_digest": executable_digest,
        "resolved_params": json.loads(canonical_json(params)),
        "input_digests": sorted([name, digest] for name, digest in inputs),
    }


def output_name(node: ConcreteStep, logical: str) -> str:
    """Bucket name for a node's output; ensemble replicas are namespaced."""
    if node.member is not None and not node.fan_in:
        return f"{node.node_id}/{logical}"
    return logical


class Engine:
    """Executes DAG instances against one store, registry and catalogue."""

    def __init__(self, store: ObjectStore, registry: ModuleRegistry, catalogue: Catalogue,
                 workers: int | None = None, sandbox_root=None, keep_sandbox: bool = False,
                 default_timeout: float = DEFAULT_TIMEOUT):
        self.store = store
        self.registry = registry
        self.catalogue = catalogue
        self.workers = workers or os.cpu_count() or 1
        self.sandbox_root = Path(sandbox_root or tempfile.gettempdir()) / "cimf-sandboxes"
        self.sandbox_root.mkdir(parents=True, exist_ok=True)
        self.keep_sandbox = keep_sandbox
        self.default_timeout = default_timeout
        self.invocations = 0
        self._lock = threading.RLock()
        self._live: dict[str, RunRecord] = {}

    # -- staging -------------------------------------------------------------
    def _stage_inputs(self, dag: DagInstance, node: ConcreteStep, results: dict) -> list[StagedInput]:
        staged = []
        spec = self.registry.spec(*node.module)
        for logical, ref in sorted(node.inputs.items()):
            if "node" in ref:
                producer = results[ref["node"]]
                want = output_name(dag.node(ref["node"]), ref["output"])
                match = [o for o in producer.outputs if o.logical_name == want]
                if not match:
                    if spec.input(logical).required:
                        raise StepFailure(f"input {logical!r}: {ref['node']} produced no {ref['output']!r}")
                    continue
                staged.append(StagedInput(logical, match[0]))
            elif "object" in ref:
                try:
                    staged.append(StagedInput(logical, self.store.stat(dag.bucket, ref["object"])))
                except NotFound:
                    raise StepFailure(f"input {logical!r}: object {ref['object']!r} not in bucket") from None
            else:
                members, failed = [], []
                for src in ref["collect"]:
                    res = results[src]
                    want = output_name(dag.node(src), ref["output"])
                    match = [o for o in res.outputs if o.logical_name == want]
                    label = dag.node(src).member
                    if res.status in _OK and match:
                        path = f"{logical}/{label}/{ref['output']}"
                        staged.append(StagedInput(path, match[0]))
                        members.append({"label": label, "files": [path]})
                    else:
                        failed.append(label)
                manifest = {"members": members, "n_expected": len(ref["collect"]),
                            "n_succeeded": len(members), "failed": failed}
                staged.append(StagedInput(MANIFEST_FILE, data=canonical_json(manifest)))
        return staged

    def _materialise(self, dag, node, staged) -> list[StagedInput]:
        """Generated inputs (fan-in manifests) become bucket objects first."""
        out = []
        for s in staged:
            if s.data is not None:
                obj = self.store.put(dag.bucket, f"{node.node_id}/{s.name}", s.data)
                out.append(StagedInput(s.name, obj))
            else:
                out.append(s)
        return out

    def step_signature(self, node: ConcreteStep, staged: list[StagedInput]) -> dict:
        spec = self.registry.spec(*node.module)
        return signature_of(spec.name, spec.tag, spec.executable_digest, node.params,
                            [(s.name, s.obj.digest) for s in staged])

    # -- the module wrapper ----------------------------------------------------
    def run_step(self, node: ConcreteStep, bucket: str, staged: list[StagedInput] | None = None,
                 output_bucket_name=None, timeout: float | None = None) -> StepResult:
        """Run one module under the sandbox contract and push its outputs.

        Without ``staged``, every input of ``node`` must be an object
        reference into ``bucket``.
        """
        if staged is None:
            staged = [StagedInput(name, self.store.stat(bucket, ref["object"]))
                      for name, ref in sorted(node.inputs.items())]
        result = StepResult(node.node_id, member=node.member, status="running",
                            started_at=now_rfc3339())
        name_for = output_bucket_name or (lambda logical: output_name(node, logical))
        sandbox = None
        try:
            spec, exe = self.registry.resolve(*node.module)
            result.signature = self.step_signature(node, staged)
            result.signature_digest = digest_json(result.signature)
            safe = node.node_id.replace("/", "_")
            base = self.sandbox_root / bucket
            base.mkdir(parents=True, exist_ok=True)
            sandbox = Path(tempfile.mkdtemp(prefix=f"{safe}-", dir=base))
            for s in staged:
                data, _ = self.store.get(s.obj.bucket, s.obj.stored_name)
                target = sandbox / s.name
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
            (sandbox / PARAMS_FILE).write_bytes(
                json.dumps(node.params, sort_keys=True, indent=1).encode("utf-8"))
            argv = render_command(spec, node.params, str(exe), str(sandbox), sys.executable)
            limit = timeout or float(node.resources.get("timeout_s")
                                     or spec.resources.get("timeout_s") or self.default_timeout)
            code, output = self._invoke(argv, sandbox, limit)
            result.exit_code = code
            result.log_ref = self.store.put(bucket, f"logs/{node.node_id}.log", output)
            if code is None:
                raise StepFailure(f"timed out after {limit:g} s", None, result.log_ref)
            if code != 0:
                raise StepFailure(f"module exited with status {code}", code, result.log_ref)
            outputs = []
            for decl in spec.outputs:
                path = sandbox / decl.logical_name
                if path.is_file():
                    outputs.append(self.store.put_file(bucket, name_for(decl.logical_name), path))
                elif decl.required:
                    raise StepFailure(f"declared output {decl.logical_name!r} missing", code,
                                      result.log_ref)
            result.outputs = outputs
            result.status = "succeeded"
        except StepFailure as exc:
            result.status = "failed"
            result.error = str(exc)
        except Exception as exc:  # staging, integrity, registry errors
            log.exception("step %s failed", node.node_id)
            result.status = "failed"
            result.error = f"{type(exc).__name__}: {exc}"
        finally:
            result.ended_at = now_rfc3339()
            if sandbox is not None and not self.keep_sandbox:
                shutil.rmtree(sandbox, ignore_errors=True)
        return result

    def _invoke(self, argv, sandbox: Path, timeout: float) -> tuple[int | None, bytes]:
        env = dict(os.environ)
        env["CIMF_SANDBOX"] = str(sandbox)
        src = str(Path(cimf.__file__).resolve().parent.parent)
        env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
        with self._lock:
            self.invocations += 1
        try:
            proc = subprocess.Popen(argv, cwd=sandbox, env=env, stdout=subprocess.PIPE,
                                    stderr=subprocess.STDOUT, stdin=subprocess.DEVNULL,
                                    start_new_session=True)
        except OSError as exc:
            return 127, f"failed to start module: {exc}\n".encode()
        try:
            out, _ = proc.communicate(timeout=timeout)
            return proc.returncode, out
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            out, _ = proc.communicate()
            return None, out + f"\n[cimf] killed after {timeout:g} s\n".encode()

    # -- scheduling ------------------------------------------------------------
    def _try_reuse(self, dag, node, staged) -> StepResult | None:
        sig = self.step_signature(node, staged)
        digest = digest_json(sig)
        hit = self.catalogue.find_reusable(digest)
        if hit is None:
            return None
        run_id, prior = hit
        now = now_rfc3339()
        declared = self.registry.spec(*node.module).output_names()
        outputs = []
        for obj in prior.outputs:
            # strip the producer's namespace, re-apply ours
            base = next(d for d in declared
                        if obj.logical_name == d or obj.logical_name.endswith("/" + d))
            outputs.append(self.store.copy(obj, dag.bucket, output_name(node, base)))
        return StepResult(node.node_id, sig, digest, "reused", outputs, now, now, prior.exit_code,
                          prior.log_ref, None, {"run_id": run_id, "step_id": prior.step_id},
                          node.member)

    def _process(self, dag, node, results, reuse) -> StepResult:
        started = now_rfc3339()
        try:
            staged = self._materialise(dag, node, self._stage_inputs(dag, node, results))
        except Exception as exc:
            return StepResult(node.node_id, status="failed", started_at=started,
                              ended_at=now_rfc3339(), error=f"staging failed: {exc}",
                              member=node.member)
        if reuse:
            try:
                hit = self._try_reuse(dag, node, staged)
            except Exception:
                log.exception("reuse lookup failed for %s; executing", node.node_id)
                hit = None
            if hit is not None:
                return hit
        return self.run_step(node, dag.bucket, staged)

    def execute(self, dag: DagInstance, reuse: bool = True, record: RunRecord | None = None,
                on_update=None) -> RunRecord:
        """Run every node in dependency order and finalise the catalogue entry.

        A failed node marks its transitive dependents ``skipped``; other
        branches continue. A fan-in node runs once all collected members are
        terminal, over the members that succeeded.
        """
        if record is None:
            record = RunRecord(dag.run_id, {}, {}, dag.workflow_name, dag.version_hash,
                               dag.flavour, dag.bucket, submitted_at=now_rfc3339(),
                               dag=dag.to_dict())
        if record.dag is None:
            record.dag = dag.to_dict()
        if record.run_id not in self.catalogue:
            self.catalogue.open_run(record)
        if not self.store.has_bucket(dag.bucket):
            self.store.create_bucket(dag.bucket)

        preds = dag.predecessors()
        collect_preds = {n.node_id: {src for ref in n.inputs.values() for src in ref.get("collect", [])}
                         for n in dag.nodes}
        order = {nid: i for i, nid in enumerate(dag.topological_order())}
        results = {n.node_id: StepResult(n.node_id, member=n.member) for n in dag.nodes}
        record.steps = [results[n.node_id] for n in sorted(dag.nodes, key=lambda n: order[n.node_id])]
        record.status = "running"
        with self._lock:
            self._live[record.run_id] = record
        if on_update:
            on_update(record)

        def readiness(nid):
            """'ready', 'wait' or 'skip' for a pending node."""
            states = {p: results[p].status for p in preds[nid]}
            if any(s in ("pending", "running") for s in states.values()):
                return "wait"
            strict = [p for p in preds[nid] if p not in collect_preds[nid]]
            if any(states[p] not in _OK for p in strict):
                return "skip"
            loose = collect_preds[nid]
            if loose and not any(states[p] in _OK for p in loose):
                return "skip"
            return "ready"

        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="cimf-step") as pool:
            running = {}
            while True:
                progressed = True
                while progressed:
                    progressed = False
                    for nid in sorted(order, key=order.get):
                        if results[nid].status != "pending":
                            continue
                        state = readiness(nid)
                        if state == "skip":
                            with self._lock:
                                r = results[nid]
                                r.status = "skipped"
                                r.error = "upstream step failed"
                                r.ended_at = now_rfc3339()
                            progressed = True
                        elif state == "ready" and len(running) < self.workers:
                            with self._lock:
                                results[nid].status = "running"
                                results[nid].started_at = now_rfc3339()
                            fut = pool.submit(self._process, dag, dag.node(nid), results, reuse)
                            running[fut] = nid
                            progressed = True
                if not running:
                    break
                done, _ = wait(list(running), return_when=FIRST_COMPLETED)
                for fut in done:
                    nid = running.pop(fut)
                    res = fut.result()
                    with self._lock:
                        started = results[nid].started_at
                        results[nid].__dict__.update(res.__dict__)
                        if res.status != "reused" and started:
                            results[nid].started_at = min(started, res.started_at or started)
                    if on_update:
                        on_update(record)

        with self._lock:
            record.status = "succeeded" if all(r.status in _OK for r in results.values()) else "failed"
            record.ended_at = now_rfc3339()
            self._live.pop(record.run_id, None)
        self.catalogue.finalize(record)
        if on_update:
            on_update(record)
        return record

    def snapshot(self, run_id: str) -> dict | None:
        with self._lock:
            rec = self._live.get(run_id)
            return rec.to_dict() if rec is not None else None


def new_run_id(prefix="run") -> str:
    return f"{prefix}-{time.strftime('%Y%m%d')}-{uuid.uuid4().hex[:12]}"
