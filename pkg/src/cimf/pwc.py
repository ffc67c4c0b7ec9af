"""Previous Workflow Catalogue: run provenance and the step-reuse index.

Persistence is a JSON-lines journal. Each line is one event::

    {"v": 1, "event": "open",  "run": {...RunRecord...}}
    {"v": 1, "event": "final", "run": {...RunRecord...}}

``open`` is written when a run is accepted, ``final`` once it reaches a
terminal state. The in-memory index (latest record per run, plus
signature -> successful steps) is rebuilt from the journal at start-up.
:meth:`Catalogue.compact` rewrites the journal keeping one line per run.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from filelock import FileLock

from .errors import Duplicate, NotFound, ValidationError
from .store import ObjectStore, StoredObject

JOURNAL_VERSION = 1
TERMINAL = ("succeeded", "failed")
RUN_STATES = ("pending", "running") + TERMINAL
STEP_STATES = ("pending", "running", "succeeded", "failed", "reused", "skipped")


@dataclass
class StepResult:
    step_id: str
    signature: dict | None = None
    signature_digest: str | None = None
    status: str = "pending"
    outputs: list = field(default_factory=list)
    started_at: str | None = None
    ended_at: str | None = None
    exit_code: int | None = None
    log_ref: StoredObject | None = None
    error: str | None = None
    reused_from: dict | None = None
    member: str | None = None

    def to_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "signature": self.signature,
            "signature_digest": self.signature_digest,
            "status": self.status,
            "outputs": [o.to_dict() for o in self.outputs],
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "exit_code": self.exit_code,
            "log_ref": self.log_ref.to_dict() if self.log_ref else None,
            "error": self.error,
            "reused_from": self.reused_from,
            "member": self.member,
        }

    @classmethod
    def from_dict(cls, d) -> "StepResult":
        return cls(d["step_id"], d.get("signature"), d.get("signature_digest"), d["status"],
                   [StoredObject.from_dict(o) for o in d.get("outputs", [])],
                   d.get("started_at"), d.get("ended_at"), d.get("exit_code"),
                   StoredObject.from_dict(d["log_ref"]) if d.get("log_ref") else None,
                   d.get("error"), d.get("reused_from"), d.get("member"))


@dataclass
class RunRecord:
    run_id: str
    user_payload: dict
    engine_payload: dict
    workflow_name: str
    template_version_hash: str
    flavour: str
    bucket: str
    steps: list = field(default_factory=list)
    status: str = "pending"
    submitted_at: str | None = None
    ended_at: str | None = None
    dag: dict | None = None
    parent: str | None = None
    children: list = field(default_factory=list)
    idempotency_key: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "user_payload": self.user_payload,
            "engine_payload": self.engine_payload,
            "workflow_name": self.workflow_name,
            "template_version_hash": self.template_version_hash,
            "flavour": self.flavour,
            "bucket": self.bucket,
            "steps": [s.to_dict() for s in self.steps],
            "status": self.status,
            "submitted_at": self.submitted_at,
            "ended_at": self.ended_at,
            "dag": self.dag,
            "parent": self.parent,
            "children": list(self.children),
            "idempotency_key": self.idempotency_key,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d) -> "RunRecord":
        return cls(d["run_id"], d["user_payload"], d["engine_payload"], d["workflow_name"],
                   d["template_version_hash"], d["flavour"], d["bucket"],
                   [StepResult.from_dict(s) for s in d.get("steps", [])], d["status"],
                   d.get("submitted_at"), d.get("ended_at"), d.get("dag"), d.get("parent"),
                   list(d.get("children", [])), d.get("idempotency_key"), d.get("error"))

    def step_counts(self) -> dict:
        counts = {s: 0 for s in STEP_STATES}
        for st in self.steps:
            counts[st.status] += 1
        return counts

    def summary(self) -> dict:
        return {"run_id": self.run_id, "workflow_name": self.workflow_name,
                "flavour": self.flavour, "status": self.status,
                "submitted_at": self.submitted_at, "ended_at": self.ended_at,
                "steps": self.step_counts(), "parent": self.parent}


def _ts(value: str | None) -> datetime | None:
    if value is None:
        return None
    try:
        return datetime.fromisoformat(value)
    except ValueError:
        raise ValidationError("filter", f"malformed timestamp {value!r}") from None


class Catalogue:
    """Append-only provenance store with a signature index for reuse."""

    def __init__(self, path, store: ObjectStore | None = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self.store = store
        self._lock = threading.RLock()
        self._flock = FileLock(str(self.path) + ".lock")
        self._runs: dict[str, RunRecord] = {}
        self._final: set[str] = set()
        self._by_sig: dict[str, list[tuple[str, int]]] = {}
        self._offset = 0
        self.reload()

    # -- journal -------------------------------------------------------------
    def reload(self) -> None:
        with self._lock:
            self._runs.clear()
            self._final.clear()
            self._by_sig.clear()
            self._offset = 0
            self._catch_up()

    def _catch_up(self) -> None:
        """Apply journal lines appended since the last read (possibly by other processes)."""
        with open(self.path, "rb") as fh:
            fh.seek(self._offset)
            for raw in fh:
                if not raw.endswith(b"\n"):
                    break  # torn tail from a crashed writer
                self._offset += len(raw)
                line = raw.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        run = RunRecord.from_dict(event["run"])
        self._runs[run.run_id] = run
        if event["event"] == "final":
            self._final.add(run.run_id)
            for i, st in enumerate(run.steps):
                if st.status == "succeeded" and st.signature_digest:
                    self._by_sig.setdefault(st.signature_digest, []).append((run.run_id, i))

    def _append(self, event: str, run: RunRecord) -> None:
        line = json.dumps({"v": JOURNAL_VERSION, "event": event, "run": run.to_dict()},
                          sort_keys=True, separators=(",", ":")) + "\n"
        with self._flock:
            self._catch_up()
            with open(self.path, "ab") as fh:
                fh.write(line.encode("utf-8"))
                fh.flush()
                os.fsync(fh.fileno())
            self._catch_up()

    # -- writes --------------------------------------------------------------
    def open_run(self, run: RunRecord) -> str:
        with self._lock:
            with self._flock:
                self._catch_up()
                if run.run_id in self._runs:
                    raise Duplicate(f"run {run.run_id!r} already recorded")
                self._append("open", run)
        return run.run_id

    def finalize(self, run: RunRecord) -> None:
        if run.status not in TERMINAL:
            raise ValueError(f"cannot finalize run in state {run.status!r}")
        with self._lock:
            with self._flock:
                self._catch_up()
                if run.run_id in self._final:
                    raise Duplicate(f"run {run.run_id!r} already finalized")
                self._append("final", run)

    def record(self, run: RunRecord) -> str:
        """Store a complete record in one step."""
        with self._lock:
            with self._flock:
                self._catch_up()
                if run.run_id in self._runs:
                    raise Duplicate(f"run {run.run_id!r} already recorded")
                self._append("final" if run.status in TERMINAL else "open", run)
        return run.run_id

    def compact(self) -> None:
        with self._lock, self._flock:
            self._catch_up()
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                for run_id, run in self._runs.items():
                    event = "final" if run_id in self._final else "open"
                    fh.write((json.dumps({"v": JOURNAL_VERSION, "event": event,
                                          "run": run.to_dict()}, sort_keys=True,
                                         separators=(",", ":")) + "\n").encode("utf-8"))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
            self.reload()

    # -- reads ---------------------------------------------------------------
    def get(self, run_id: str) -> RunRecord:
        with self._lock:
            self._catch_up()
            try:
                return self._runs[run_id]
            except KeyError:
                raise NotFound(f"unknown run {run_id!r}") from None

    def __contains__(self, run_id) -> bool:
        with self._lock:
            self._catch_up()
            return run_id in self._runs

    def all_runs(self) -> list[RunRecord]:
        with self._lock:
            self._catch_up()
            return list(self._runs.values())

    def find_reusable(self, signature_digest: str):
        """Most recent succeeded step with this signature whose outputs still exist."""
        with self._lock:
            self._catch_up()
            hits = list(self._by_sig.get(signature_digest, ()))
        hits.sort(key=lambda h: (self._runs[h[0]].ended_at or "", h[1]), reverse=True)
        for run_id, idx in hits:
            st = self._runs[run_id].steps[idx]
            if st.signature_digest != signature_digest:
                continue
            if self.store is None or all(self._alive(o) for o in st.outputs):
                return run_id, st
        return None

    def _alive(self, obj: StoredObject) -> bool:
        try:
            _, got = self.store.get(obj.bucket, obj.stored_name)
        except Exception:
            return False
        return got.digest == obj.digest

    def query_runs(self, workflow_name=None, status=None, start=None, end=None,
                   offset: int = 0, limit: int | None = 50) -> list[RunRecord]:
        """Runs newest first. ``start`` is inclusive, ``end`` exclusive."""
        if status is not None and status not in RUN_STATES:
            raise ValidationError("status", f"unknown status {status!r}")
        if offset < 0 or (limit is not None and limit < 0):
            raise ValidationError("limit", "offset and limit must be non-negative")
        lo, hi = _ts(start), _ts(end)
        out = []
        for run in self.all_runs():
            if workflow_name is not None and run.workflow_name != workflow_name:
                continue
            if status is not None and run.status != status:
                continue
            t = _ts(run.submitted_at)
            if lo is not None and (t is None or t < lo):
                continue
            if hi is not None and (t is None or t >= hi):
                continue
            out.append(run)
        out.sort(key=lambda r: (r.submitted_at or "", r.run_id), reverse=True)
        return out[offset:offset + limit if limit is not None else None]
