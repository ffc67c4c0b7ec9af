"""Shared helpers for the experiment scripts: payload building and CLI calls."""
import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

BBOX = [0.0, 0.0, 960.0, 960.0]


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--root", default=os.environ.get("CIMF_STORE_ROOT", ".cimf"),
                   help="workspace directory (CIMF_STORE_ROOT)")
    p.add_argument("--out", default="results", help="where payloads and fetched outputs go")
    return p


def payload(workflow_type, bbox=BBOX, start="2021-12-01", end="2021-12-31", **options):
    return {"workflow_type": workflow_type,
            "spatial_domain": {"bbox": list(bbox), "crs_label": "local-metric"},
            "temporal_domain": {"start": start, "end": end},
            "options": options}


def cimf(root, *args, binary=False):
    cmd = [sys.executable, "-m", "cimf.cli", "--root", str(root), *map(str, args)]
    proc = subprocess.run(cmd, capture_output=True, check=False)
    if proc.returncode not in (0, 1) or (proc.returncode == 1 and proc.stderr):
        sys.stderr.write(proc.stderr.decode())
        raise SystemExit(f"cimf {' '.join(map(str, args))} failed")
    return proc.stdout if binary else json.loads(proc.stdout)


def submit(root, out_dir, name, body):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.payload.json"
    path.write_text(json.dumps(body, indent=2))
    return cimf(root, "submit", "-f", path)


def fetch(root, run_id, obj, dest):
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_bytes(cimf(root, "fetch", run_id, obj, binary=True))
    return dest
