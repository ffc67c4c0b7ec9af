"""Front door: payload validation, asynchronous submission, status and results.

:class:`Gateway` holds the behaviour; :func:`create_app` exposes it over
HTTP and the CLI drives it either in-process or through that API.
"""
from __future__ import annotations

import copy
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from fastapi import Depends, FastAPI, File, Form, Header, Request, UploadFile
from fastapi.responses import JSONResponse, Response

from .calibration import CalibrationConfig, CalibrationService
from .engine import new_run_id
from .errors import (CimfError, CycleError, Duplicate, IntegrityError, ModuleSpecError,
                     NotFound, TemplateError, ValidationError)
from .hashing import digest_json
from .pwc import TERMINAL, RunRecord
from .runs import prepare_run
from .store import now_rfc3339
from .templates import expand, validate_payload

log = logging.getLogger(__name__)


class Conflict(CimfError):
    pass


class Saturated(CimfError):
    pass


class Unauthorized(CimfError):
    pass


class Gateway:
    def __init__(self, ws, max_active_runs: int | None = None):
        self.ws = ws
        self.max_active = max_active_runs or ws.config.max_active_runs
        self._pool = ThreadPoolExecutor(max_workers=self.max_active, thread_name_prefix="cimf-run")
        self._lock = threading.Lock()
        self._active: dict[str, object] = {}
        self._keys: dict[str, tuple[str, str]] = {}
        for rec in ws.pwc.all_runs():
            if rec.idempotency_key:
                self._keys[rec.idempotency_key] = (digest_json(rec.user_payload), rec.run_id)

    def close(self, wait=True):
        self._pool.shutdown(wait=wait)

    # -- auth ----------------------------------------------------------------
    def authorize(self, token: str | None) -> None:
        expected = self.ws.config.token
        if expected and token != expected:
            raise Unauthorized("missing or invalid bearer token")

    # -- submission ----------------------------------------------------------
    def validate(self, payload) -> tuple:
        """Full validation without side effects; returns (template, flavour)."""
        validate_payload(payload)
        tmpl, flavour = self.ws.catalog.find_workflow_type(payload["workflow_type"])
        if flavour == "calibration":
            cfg = CalibrationConfig.from_options(payload)
            svc = CalibrationService(self.ws)
            svc._search_space(tmpl, cfg)
            probe = svc._payload(cfg, {})
            expand(tmpl, probe, "calibration", registry=self.ws.registry, read_file=self.ws.read_file)
        else:
            expand(tmpl, payload, flavour, registry=self.ws.registry, read_file=self.ws.read_file)
        return tmpl, flavour

    def submit(self, payload: dict, idempotency_key: str | None = None) -> str:
        """Validate, record and schedule a run; returns without waiting for it."""
        payload = copy.deepcopy(payload)
        key = idempotency_key or payload.pop("idempotency_key", None)
        payload.pop("idempotency_key", None)
        fingerprint = digest_json(payload)
        with self._lock:
            if key is not None and key in self._keys:
                seen, run_id = self._keys[key]
                if seen != fingerprint:
                    raise Duplicate(f"idempotency key {key!r} already used for a different payload")
                return run_id
            if len(self._active) >= self.max_active:
                raise Saturated(f"{len(self._active)} runs active; try again later")
            tmpl, flavour = self.validate(payload)
            if flavour == "calibration":
                run_id = self._open_calibration(payload, tmpl, key)
                fut = self._pool.submit(self._run_calibration, run_id, payload)
            else:
                record, dag = prepare_run(self.ws, payload, flavour=flavour, tmpl=tmpl,
                                          idempotency_key=key)
                run_id = record.run_id
                fut = self._pool.submit(self._run_dag, record, dag)
            self._active[run_id] = fut
            if key is not None:
                self._keys[key] = (fingerprint, run_id)
        return run_id

    def _open_calibration(self, payload, tmpl, key) -> str:
        cfg = CalibrationConfig.from_options(payload)
        run_id = new_run_id("cal")
        bucket = self.ws.store.create_bucket(run_id)
        record = RunRecord(run_id, payload, {"calibration": cfg.to_dict()}, tmpl.workflow_name,
                           tmpl.version_hash, "calibration", bucket, submitted_at=now_rfc3339(),
                           idempotency_key=key)
        self.ws.pwc.open_run(record)
        return run_id

    def _run_dag(self, record, dag):
        try:
            self.ws.engine.execute(dag, reuse=True, record=record)
        except Exception:
            log.exception("run %s crashed", record.run_id)
            self._fail(record.run_id, "engine error")
        finally:
            with self._lock:
                self._active.pop(record.run_id, None)

    def _run_calibration(self, run_id, payload):
        try:
            cfg = CalibrationConfig.from_options(payload)
            CalibrationService(self.ws).calibrate(cfg, run_id=run_id, user_payload=payload)
        except Exception as exc:
            log.warning("calibration %s failed: %s", run_id, exc)
            self._fail(run_id, str(exc))
        finally:
            with self._lock:
                self._active.pop(run_id, None)

    def _fail(self, run_id, message):
        rec = self.ws.pwc.get(run_id)
        if rec.status in TERMINAL:
            return
        rec.status = "failed"
        rec.error = message
        rec.ended_at = now_rfc3339()
        try:
            self.ws.pwc.finalize(rec)
        except Duplicate:
            pass

    # -- queries --------------------------------------------------------------
    def record(self, run_id) -> dict:
        live = self.ws.engine.snapshot(run_id)
        if live is not None:
            return live
        return self.ws.pwc.get(run_id).to_dict()

    def status(self, run_id: str) -> dict:
        rec = RunRecord.from_dict(self.record(run_id))
        out = rec.summary()
        out["state"] = rec.status
        out["step_states"] = {s.step_id: s.status for s in rec.steps}
        out["reused"] = out["steps"]["reused"]
        out["pending"] = out["steps"]["pending"] + out["steps"]["running"]
        if rec.flavour == "calibration" and not rec.steps:
            children = [r for r in self.ws.pwc.all_runs() if r.parent == run_id]
            out["iterations_done"] = sum(r.status in TERMINAL for r in children)
        if rec.error:
            out["error"] = rec.error
        return out

    def is_terminal(self, run_id) -> bool:
        return self.ws.pwc.get(run_id).status in TERMINAL

    def wait(self, run_id: str, timeout: float = 600.0, poll: float = 0.05) -> dict:
        deadline = time.monotonic() + timeout
        while not self.is_terminal(run_id):
            if time.monotonic() > deadline:
                raise TimeoutError(f"run {run_id} still active after {timeout} s")
            time.sleep(poll)
        return self.status(run_id)

    def results(self, run_id: str, selector: str) -> bytes:
        rec = self.ws.pwc.get(run_id)
        try:
            data, _ = self.ws.store.get(rec.bucket, selector)
            return data
        except (NotFound, ValueError):
            pass
        if not self.is_terminal(run_id):
            raise Conflict(f"run {run_id} has not produced {selector!r} yet")
        raise NotFound(f"run {run_id} has no object {selector!r}")

    def list_objects(self, run_id: str) -> list:
        rec = self.ws.pwc.get(run_id)
        return [o.to_dict() for o in self.ws.store.list(rec.bucket)]

    # -- admin ------------------------------------------------------------------
    def onboard_module(self, spec: dict, executable: bytes) -> tuple[str, str]:
        return self.ws.registry.onboard_module(spec, executable)

    def register_template(self, document) -> tuple[str, str]:
        return self.ws.catalog.register_template(document)

    def list_runs(self, **filters) -> list[dict]:
        return [r.summary() for r in self.ws.pwc.query_runs(**filters)]


# -- HTTP ------------------------------------------------------------------------

def create_app(gateway: Gateway):
    app = FastAPI(title="cimf", version="1")

    status_of = [
        (Unauthorized, 401), (ValidationError, 400), (CycleError, 422), (TemplateError, 422),
        (ModuleSpecError, 422), (NotFound, 404), (Duplicate, 409), (Conflict, 409),
        (Saturated, 503), (IntegrityError, 500),
    ]

    @app.exception_handler(CimfError)
    async def _cimf_error(request, exc):
        code = next((c for t, c in status_of if isinstance(exc, t)), 500)
        body = {"error": type(exc).__name__, "detail": str(exc)}
        if isinstance(exc, ValidationError):
            body["path"] = exc.path
        if isinstance(exc, CycleError):
            body["cycle"] = exc.cycle
        return JSONResponse(body, status_code=code)

    def admin(authorization: str | None = Header(default=None)):
        token = None
        if authorization and authorization.lower().startswith("bearer "):
            token = authorization[7:].strip()
        gateway.authorize(token)

    @app.post("/v1/workflows", status_code=202)
    async def submit(request: Request, idempotency_key: str | None = Header(default=None)):
        try:
            payload = await request.json()
        except ValueError:
            raise ValidationError("$", "body is not valid JSON") from None
        return {"run_id": gateway.submit(payload, idempotency_key)}

    @app.get("/v1/runs/{run_id}")
    def status(run_id: str):
        return gateway.status(run_id)

    @app.get("/v1/runs/{run_id}/record")
    def record(run_id: str):
        return gateway.record(run_id)

    @app.get("/v1/runs/{run_id}/objects")
    def objects(run_id: str):
        return gateway.list_objects(run_id)

    @app.get("/v1/runs/{run_id}/objects/{name:path}")
    def fetch(run_id: str, name: str):
        return Response(gateway.results(run_id, name), media_type="application/octet-stream")

    @app.post("/v1/modules", status_code=201, dependencies=[Depends(admin)])
    async def onboard(spec: str = Form(...), executable: UploadFile = File(...)):
        try:
            doc = json.loads(spec)
        except ValueError:
            raise ValidationError("spec", "not valid JSON") from None
        name, tag = gateway.onboard_module(doc, await executable.read())
        return {"name": name, "tag": tag}

    @app.get("/v1/modules")
    def modules(filter: str | None = None):
        return [{"name": n, "tag": t, "description": d}
                for n, t, d in gateway.ws.registry.list_modules(filter)]

    @app.post("/v1/templates", status_code=201, dependencies=[Depends(admin)])
    async def register(request: Request):
        try:
            doc = await request.json()
        except ValueError:
            raise ValidationError("$", "body is not valid JSON") from None
        name, version = gateway.register_template(doc)
        return {"workflow_name": name, "version_hash": version}

    @app.get("/v1/templates/{name}")
    def show_template(name: str, version: str | None = None):
        tmpl = gateway.ws.catalog.get(name, version)
        return {"workflow_name": tmpl.workflow_name, "version_hash": tmpl.version_hash,
                "document": tmpl.document}

    @app.get("/v1/runs", dependencies=[Depends(admin)])
    def runs(workflow_name: str | None = None, status: str | None = None,
             start: str | None = None, end: str | None = None, offset: int = 0, limit: int = 50):
        return gateway.list_runs(workflow_name=workflow_name, status=status, start=start,
                                 end=end, offset=offset, limit=limit)

    return app
