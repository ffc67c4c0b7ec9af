"""Wiring of store, registry, templates, catalogue and engine under one root.

Directory layout::

    <root>/store/        object store buckets
    <root>/pwc.jsonl     run catalogue journal
    <root>/exe-cache/    verified, executable copies of module binaries
    <root>/sandboxes/    step sandboxes (removed after each step)
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from . import builtin
from .engine import Engine
from .errors import NotFound, ValidationError
from .hashing import digest_json
from .pwc import Catalogue
from .registry import ModuleRegistry
from .store import ObjectStore
from .templates import TemplateCatalog


@dataclass
class Config:
    root: Path
    workers: int = 0
    token: str | None = None
    keep_sandbox: bool = False
    step_timeout: float = 600.0
    max_active_runs: int = 16
    allow_local_paths: bool = True

    @classmethod
    def from_env(cls, root=None, **overrides) -> "Config":
        root = Path(root or os.environ.get("CIMF_STORE_ROOT") or Path.cwd() / ".cimf").resolve()
        workers = int(os.environ.get("CIMF_WORKERS", "0") or 0)
        cfg = cls(root=root, workers=workers, token=os.environ.get("CIMF_TOKEN") or None)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg


@dataclass
class Workspace:
    config: Config
    store: ObjectStore = field(init=False)
    registry: ModuleRegistry = field(init=False)
    catalog: TemplateCatalog = field(init=False)
    pwc: Catalogue = field(init=False)
    engine: Engine = field(init=False)

    def __post_init__(self):
        root = Path(self.config.root).resolve()
        root.mkdir(parents=True, exist_ok=True)
        self.store = ObjectStore(root / "store")
        self.registry = ModuleRegistry(self.store, root / "exe-cache")
        self.catalog = TemplateCatalog(self.store, self.registry)
        self.pwc = Catalogue(root / "pwc.jsonl", self.store)
        self.engine = Engine(self.store, self.registry, self.pwc,
                             workers=self.config.workers or None,
                             sandbox_root=root / "sandboxes",
                             keep_sandbox=self.config.keep_sandbox,
                             default_timeout=self.config.step_timeout)

    @classmethod
    def open(cls, root=None, install_builtin=False, **overrides) -> "Workspace":
        ws = cls(Config.from_env(root, **overrides))
        if install_builtin:
            ws.install_builtin()
        return ws

    def install_builtin(self) -> None:
        builtin.install(self.registry)
        doc = builtin.flood_template()
        try:
            current = self.catalog.get(doc["workflow_name"])
        except NotFound:
            current = None
        if current is None or current.version_hash != digest_json(doc):
            self.catalog.register_template(doc)

    def read_file(self, ref: dict) -> bytes:
        """Resolve a ``file`` option reference to bytes."""
        if "object" in ref:
            o = ref["object"]
            if not isinstance(o, dict) or "run" not in o or "name" not in o:
                raise ValidationError("options", "object reference needs 'run' and 'name'")
            bucket = self.pwc.get(o["run"]).bucket
            data, _ = self.store.get(bucket, o["name"])
            return data
        if "path" in ref:
            if not self.config.allow_local_paths:
                raise ValidationError("options", "local paths are disabled")
            return Path(ref["path"]).read_bytes()
        raise ValidationError("options", f"cannot resolve file reference {sorted(ref)}")
