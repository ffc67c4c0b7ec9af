"""``cimf`` command-line client.

With ``CIMF_URL`` set every command goes through the HTTP API; otherwise
the workspace at ``CIMF_STORE_ROOT`` is driven in-process. In-process
submissions run to completion before the command returns, since there is
no server left behind to finish them.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .errors import CimfError


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


class LocalClient:
    def __init__(self, root=None):
        from .gateway import Gateway
        from .workspace import Workspace

        self.ws = Workspace.open(root, install_builtin=True)
        self.gw = Gateway(self.ws)

    def close(self):
        self.gw.close()

    def onboard(self, spec: dict, exe: bytes):
        name, tag = self.gw.onboard_module(spec, exe)
        return {"name": name, "tag": tag}

    def modules(self, filter=None):
        return [{"name": n, "tag": t, "description": d}
                for n, t, d in self.ws.registry.list_modules(filter)]

    def register_template(self, doc):
        name, version = self.gw.register_template(doc)
        return {"workflow_name": name, "version_hash": version}

    def show_template(self, name, version=None):
        t = self.ws.catalog.get(name, version)
        return {"workflow_name": t.workflow_name, "version_hash": t.version_hash,
                "document": t.document}

    def submit(self, payload, key=None, wait=True):
        run_id = self.gw.submit(payload, key)
        self.gw.wait(run_id, timeout=float("inf"))
        return {"run_id": run_id, **self.gw.status(run_id)}

    def status(self, run_id):
        return self.gw.status(run_id)

    def record(self, run_id):
        return self.gw.record(run_id)

    def fetch(self, run_id, name) -> bytes:
        return self.gw.results(run_id, name)

    def objects(self, run_id):
        return self.gw.list_objects(run_id)

    def runs(self, **filters):
        return self.gw.list_runs(**filters)


class HttpClient:
    def __init__(self, url, token=None, http=None):
        import httpx

        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.http = http or httpx.Client(base_url=url.rstrip("/"), timeout=60.0)
        self.http.headers.update(headers)

    def close(self):
        self.http.close()

    def _call(self, method, path, **kw):
        r = self.http.request(method, path, **kw)
        if r.status_code >= 400:
            try:
                detail = r.json()
            except ValueError:
                detail = {"detail": r.text}
            raise CimfError(f"HTTP {r.status_code}: {json.dumps(detail, sort_keys=True)}")
        return r

    def onboard(self, spec, exe):
        return self._call("POST", "/v1/modules", data={"spec": json.dumps(spec)},
                          files={"executable": ("executable", exe)}).json()

    def modules(self, filter=None):
        return self._call("GET", "/v1/modules", params={"filter": filter} if filter else None).json()

    def register_template(self, doc):
        return self._call("POST", "/v1/templates", json=doc).json()

    def show_template(self, name, version=None):
        return self._call("GET", f"/v1/templates/{name}",
                          params={"version": version} if version else None).json()

    def submit(self, payload, key=None, wait=True):
        headers = {"Idempotency-Key": key} if key else {}
        run_id = self._call("POST", "/v1/workflows", json=payload, headers=headers).json()["run_id"]
        if not wait:
            return {"run_id": run_id}
        while True:
            st = self.status(run_id)
            if st["state"] in ("succeeded", "failed", "cancelled"):
                return {"run_id": run_id, **st}
            time.sleep(0.2)

    def status(self, run_id):
        return self._call("GET", f"/v1/runs/{run_id}").json()

    def record(self, run_id):
        return self._call("GET", f"/v1/runs/{run_id}/record").json()

    def fetch(self, run_id, name):
        return self._call("GET", f"/v1/runs/{run_id}/objects/{name}").content

    def objects(self, run_id):
        return self._call("GET", f"/v1/runs/{run_id}/objects").json()

    def runs(self, **filters):
        params = {k: v for k, v in filters.items() if v is not None}
        return self._call("GET", "/v1/runs", params=params).json()


def make_client(args):
    url = os.environ.get("CIMF_URL")
    if url:
        return HttpClient(url, os.environ.get("CIMF_TOKEN"))
    return LocalClient(args.root)


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_init(args, client):
    _emit({"root": str(client.ws.config.root), "modules": client.modules()})


def cmd_serve(args, client):
    import uvicorn

    from .gateway import create_app

    uvicorn.run(create_app(client.gw), host=args.host, port=args.port, log_level="info")


def cmd_module_onboard(args, client):
    _emit(client.onboard(_read_json(args.spec), Path(args.exe).read_bytes()))


def cmd_module_list(args, client):
    _emit(client.modules(args.filter))


def cmd_template_register(args, client):
    _emit(client.register_template(_read_json(args.file)))


def cmd_template_show(args, client):
    _emit(client.show_template(args.name, args.version))


def cmd_submit(args, client):
    out = client.submit(_read_json(args.file), args.idempotency_key, wait=not args.no_wait)
    _emit(out)
    if out.get("state") == "failed":
        return 1


def cmd_status(args, client):
    _emit(client.status(args.run_id))


def cmd_fetch(args, client):
    data = client.fetch(args.run_id, args.object)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


def cmd_objects(args, client):
    _emit(client.objects(args.run_id))


def cmd_runs_list(args, client):
    _emit(client.runs(workflow_name=args.workflow, status=args.status, start=args.start,
                      end=args.end, offset=args.offset, limit=args.limit))


def cmd_runs_show(args, client):
    _emit(client.record(args.run_id))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cimf", description="climate-impact workflow orchestration")
    p.add_argument("--root", help="workspace directory (default: $CIMF_STORE_ROOT or ./.cimf)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="create a workspace with the built-in modules").set_defaults(fn=cmd_init)

    s = sub.add_parser("serve", help="run the HTTP API")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.set_defaults(fn=cmd_serve, local_only=True)

    mod = sub.add_parser("module").add_subparsers(dest="action", required=True)
    s = mod.add_parser("onboard")
    s.add_argument("--spec", required=True)
    s.add_argument("--exe", required=True)
    s.set_defaults(fn=cmd_module_onboard)
    s = mod.add_parser("list")
    s.add_argument("--filter")
    s.set_defaults(fn=cmd_module_list)

    tpl = sub.add_parser("template").add_subparsers(dest="action", required=True)
    s = tpl.add_parser("register")
    s.add_argument("file", nargs="?", help="template JSON document")
    s.add_argument("-f", "--file", dest="file_opt")
    s.set_defaults(fn=cmd_template_register)
    s = tpl.add_parser("show")
    s.add_argument("--name", required=True)
    s.add_argument("--version", help="version hash or unique prefix (default: latest)")
    s.set_defaults(fn=cmd_template_show)

    s = sub.add_parser("submit")
    s.add_argument("-f", "--file", required=True)
    s.add_argument("--idempotency-key")
    s.add_argument("--no-wait", action="store_true", help="return immediately (HTTP mode only)")
    s.set_defaults(fn=cmd_submit)

    s = sub.add_parser("status")
    s.add_argument("run_id")
    s.set_defaults(fn=cmd_status)

    s = sub.add_parser("fetch")
    s.add_argument("run_id")
    s.add_argument("object")
    s.add_argument("-o", "--output")
    s.set_defaults(fn=cmd_fetch)

    s = sub.add_parser("objects")
    s.add_argument("run_id")
    s.set_defaults(fn=cmd_objects)

    runs = sub.add_parser("runs").add_subparsers(dest="action", required=True)
    s = runs.add_parser("list")
    s.add_argument("--workflow")
    s.add_argument("--status")
    s.add_argument("--start")
    s.add_argument("--end")
    s.add_argument("--offset", type=int, default=0)
    s.add_argument("--limit", type=int, default=50)
    s.set_defaults(fn=cmd_runs_list)
    s = runs.add_parser("show")
    s.add_argument("run_id")
    s.set_defaults(fn=cmd_runs_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "file_opt", None):
        args.file = args.file_opt
    if args.command == "template" and args.action == "register" and not args.file:
        print("cimf: template register needs a file", file=sys.stderr)
        return 2
    if getattr(args, "local_only", False) or args.command == "init":
        client = LocalClient(args.root)
    else:
        client = make_client(args)
    try:
        return args.fn(args, client) or 0
    except CimfError as exc:
        print(f"cimf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"cimf: {exc}", file=sys.stderr)
        return 1
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
