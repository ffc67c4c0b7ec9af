"""Module on-boarding and lookup.

A module is an executable plus metadata: how to run it, which files it
reads and writes, and which parameters it accepts. Specs and executables
are stored in a reserved bucket of the object store, so executables are
content-addressed like any other data.

``run_command`` is an argv list. Tokens substituted at run time:

``{param:NAME}``  resolved value of declared parameter NAME
``{exe}``         absolute path of the module executable
``{python}``      the interpreter running the engine
``{sandbox}``     absolute path of the step sandbox
"""
from __future__ import annotations

import json
import os
import re
import shutil
import stat
import threading
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock

from .errors import Duplicate, IntegrityError, ModuleSpecError, NotFound
from .hashing import canonical_json, digest_bytes, digest_file
from .store import ObjectStore, check_logical_name

REGISTRY_BUCKET = "cimf-registry"
PARAM_TYPES = ("number", "integer", "string", "boolean")
_IDENT = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")
_PARAM_TOKEN = re.compile(r"\{param:([^}]*)\}")


@dataclass(frozen=True)
class IoDecl:
    logical_name: str
    required: bool = True
    media_hint: str = ""
    collection: bool = False

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(d["logical_name"], bool(d.get("required", True)), d.get("media_hint", ""),
                   bool(d.get("collection", False)))

    def to_dict(self):
        d = {"logical_name": self.logical_name, "required": self.required,
             "media_hint": self.media_hint}
        if self.collection:
            d["collection"] = True
        return d


@dataclass(frozen=True)
class ParamDecl:
    name: str
    type: str = "number"
    default: object = None
    min: float | None = None
    max: float | None = None

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d.get("type", "number"), d.get("default"), d.get("min"), d.get("max"))

    def to_dict(self):
        d = {"name": self.name, "type": self.type, "default": self.default}
        if self.min is not None:
            d["min"] = self.min
        if self.max is not None:
            d["max"] = self.max
        return d

    def coerce(self, value):
        """Check ``value`` against type and bounds; returns the normalised value."""
        t = self.type
        if t == "boolean":
            if not isinstance(value, bool):
                raise TypeError(f"{self.name}: expected boolean, got {value!r}")
            return value
        if t == "string":
            if not isinstance(value, str):
                raise TypeError(f"{self.name}: expected string, got {value!r}")
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{self.name}: expected {t}, got {value!r}")
        if t == "integer":
            if isinstance(value, float):
                if not value.is_integer():
                    raise TypeError(f"{self.name}: expected integer, got {value!r}")
                value = int(value)
        else:
            value = float(value)
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError(f"{self.name}: must be finite")
        if self.min is not None and value < self.min:
            raise ValueError(f"{self.name}: {value} below minimum {self.min}")
        if self.max is not None and value > self.max:
            raise ValueError(f"{self.name}: {value} above maximum {self.max}")
        return value


@dataclass(frozen=True)
class ModuleSpec:
    name: str
    tag: str
    run_command: tuple
    inputs: tuple = ()
    outputs: tuple = ()
    params: tuple = ()
    description: str = ""
    source_ref: str = ""
    resources: dict = field(default_factory=dict, hash=False)
    executable_name: str = "module"
    executable_digest: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ModuleSpec":
        try:
            return cls(
                name=d["name"],
                tag=str(d["tag"]),
                run_command=tuple(d["run_command"]),
                inputs=tuple(IoDecl.from_dict(x) for x in d.get("inputs", ())),
                outputs=tuple(IoDecl.from_dict(x) for x in d.get("outputs", ())),
                params=tuple(ParamDecl.from_dict(x) for x in d.get("params", ())),
                description=d.get("description", ""),
                source_ref=d.get("source_ref", ""),
                resources=dict(d.get("resources", {})),
                executable_name=d.get("executable_name", "module"),
                executable_digest=d.get("executable_digest"),
            )
        except (KeyError, TypeError) as exc:
            raise ModuleSpecError(f"malformed module spec: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tag": self.tag,
            "run_command": list(self.run_command),
            "inputs": [i.to_dict() for i in self.inputs],
            "outputs": [o.to_dict() for o in self.outputs],
            "params": [p.to_dict() for p in self.params],
            "description": self.description,
            "source_ref": self.source_ref,
            "resources": self.resources,
            "executable_name": self.executable_name,
            "executable_digest": self.executable_digest,
        }

    @property
    def key(self) -> str:
        return f"{self.name}:{self.tag}"

    def param(self, name) -> ParamDecl:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def input(self, name) -> IoDecl:
        for i in self.inputs:
            if i.logical_name == name:
                return i
        raise KeyError(name)

    def output_names(self):
        return [o.logical_name for o in self.outputs]

    @property
    def digest(self) -> str:
        return digest_bytes(canonical_json(self.to_dict()))

    def validate(self) -> None:
        for label, value in (("name", self.name), ("tag", self.tag)):
            if not isinstance(value, str) or not _IDENT.match(value):
                raise ModuleSpecError(f"invalid module {label} {value!r}")
        if not self.run_command or not all(isinstance(a, str) for a in self.run_command):
            raise ModuleSpecError("run_command must be a non-empty list of strings")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ModuleSpecError("duplicate parameter names")
        for p in self.params:
            if p.type not in PARAM_TYPES:
                raise ModuleSpecError(f"param {p.name}: unknown type {p.type!r}")
            if p.default is not None:
                try:
                    p.coerce(p.default)
                except (TypeError, ValueError) as exc:
                    raise ModuleSpecError(f"bad default: {exc}") from None
        for arg in self.run_command:
            for ref in _PARAM_TOKEN.findall(arg):
                if ref not in names:
                    raise ModuleSpecError(f"run_command references undeclared param {ref!r}")
        files = [d.logical_name for d in self.inputs + self.outputs]
        if len(set(files)) != len(files):
            raise ModuleSpecError("input/output filenames must be unique")
        for f in files + [self.executable_name]:
            try:
                check_logical_name(f)
            except ValueError as exc:
                raise ModuleSpecError(str(exc)) from None
        if "/" in self.executable_name:
            raise ModuleSpecError("executable_name must be a bare filename")


def render_command(spec: ModuleSpec, params: dict, exe: str, sandbox: str, python: str) -> list[str]:
    def one(arg):
        arg = _PARAM_TOKEN.sub(lambda m: _fmt_param(params[m.group(1)]), arg)
        return arg.replace("{exe}", exe).replace("{python}", python).replace("{sandbox}", sandbox)
    return [one(a) for a in spec.run_command]


def _fmt_param(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


class ModuleRegistry:
    """On-boarded modules keyed by ``(name, tag)``."""

    def __init__(self, store: ObjectStore, cache_dir):
        self.store = store
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        store.create_bucket(REGISTRY_BUCKET)
        self._lock = threading.Lock()
        self._flock = FileLock(str(self.cache_dir / ".onboard.lock"))

    @staticmethod
    def _prefix(name, tag):
        return f"modules/{name}/{tag}/"

    def onboard_module(self, spec: ModuleSpec | dict, executable: bytes) -> tuple[str, str]:
        if isinstance(spec, dict):
            spec = ModuleSpec.from_dict(spec)
        spec.validate()
        if not executable:
            raise ModuleSpecError("executable is empty")
        with self._lock, self._flock:
            if self.store.exists(REGISTRY_BUCKET, self._prefix(spec.name, spec.tag) + "spec.json"):
                raise Duplicate(f"module {spec.key} already registered")
            exe_obj = self.store.put(REGISTRY_BUCKET,
                                     self._prefix(spec.name, spec.tag) + spec.executable_name,
                                     executable)
            doc = spec.to_dict()
            doc["executable_digest"] = exe_obj.digest
            self.store.put(REGISTRY_BUCKET, self._prefix(spec.name, spec.tag) + "spec.json",
                           canonical_json(doc))
        return spec.name, spec.tag

    def exists(self, name, tag) -> bool:
        return self.store.exists(REGISTRY_BUCKET, self._prefix(name, tag) + "spec.json")

    def spec(self, name, tag) -> ModuleSpec:
        try:
            data, _ = self.store.get(REGISTRY_BUCKET, self._prefix(name, tag) + "spec.json")
        except NotFound:
            raise NotFound(f"unknown module {name}:{tag}") from None
        return ModuleSpec.from_dict(json.loads(data))

    def resolve(self, name, tag) -> tuple[ModuleSpec, Path]:
        """Spec plus the path of a verified, executable copy of the module."""
        spec = self.spec(name, tag)
        data, obj = self.store.get(REGISTRY_BUCKET, self._prefix(name, tag) + spec.executable_name)
        if obj.digest != spec.executable_digest:
            raise IntegrityError(f"module {spec.key}: executable digest differs from spec")
        target = self.cache_dir / obj.digest / spec.executable_name
        if not target.exists() or digest_file(target) != obj.digest:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(f".{target.name}.{os.getpid()}.{threading.get_ident()}")
            tmp.write_bytes(data)
            tmp.chmod(tmp.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
            os.replace(tmp, target)
        return spec, target

    def list_modules(self, filter: str | None = None) -> list[tuple[str, str, str]]:
        out = []
        for obj in self.store.list(REGISTRY_BUCKET, "modules/"):
            parts = obj.logical_name.split("/")
            if len(parts) == 4 and parts[3] == "spec.json":
                name, tag = parts[1], parts[2]
                if filter and filter not in name:
                    continue
                out.append((name, tag, self.spec(name, tag).description))
        return sorted(set(out), key=lambda t: (t[0], t[1]))

    def purge_cache(self) -> None:
        shutil.rmtree(self.cache_dir, ignore_errors=True)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
