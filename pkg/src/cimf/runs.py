"""Turning a user payload into an opened, executable run."""
from __future__ import annotations

from .engine import new_run_id
from .pwc import RunRecord
from .store import now_rfc3339
from .templates import DagInstance, expand


def prepare_run(ws, payload: dict, run_id: str | None = None, flavour: str | None = None,
                parent: str | None = None, idempotency_key: str | None = None,
                tmpl=None) -> tuple[RunRecord, DagInstance]:
    """Create the bucket, write config objects, build the DAG, open the PWC entry."""
    if tmpl is None:
        tmpl, mapped = ws.catalog.find_workflow_type(payload.get("workflow_type"))
        flavour = flavour or mapped
    flavour = flavour or tmpl.workflow_types.get(payload.get("workflow_type"), "single")
    run_id = run_id or new_run_id()
    # validate and expand before touching storage
    expand(tmpl, payload, flavour, run_id=run_id, registry=ws.registry, read_file=ws.read_file)
    bucket = ws.store.create_bucket(run_id)
    engine_map = ws.catalog.translate_payload(payload, tmpl, bucket=bucket, read_file=ws.read_file)
    dag = expand(tmpl, payload, flavour, run_id=run_id, bucket=bucket, registry=ws.registry,
                 engine_map=engine_map)
    record = RunRecord(run_id, payload, engine_map, tmpl.workflow_name, tmpl.version_hash,
                       flavour, bucket, submitted_at=now_rfc3339(), dag=dag.to_dict(),
                       parent=parent, idempotency_key=idempotency_key)
    ws.pwc.open_run(record)
    return record, dag


def run_payload(ws, payload: dict, reuse: bool = True, **kw) -> RunRecord:
    record, dag = prepare_run(ws, payload, **kw)
    return ws.engine.execute(dag, reuse=reuse, record=record)


def replay_structure(ws, record: RunRecord) -> tuple:
    """Re-instantiate a recorded run from its template version and payload."""
    tmpl = ws.catalog.get(record.workflow_name, record.template_version_hash)
    dag = expand(tmpl, record.user_payload, record.flavour, run_id=record.run_id,
                 bucket=record.bucket, registry=ws.registry, engine_map=None,
                 read_file=ws.read_file)
    return dag.structure()
