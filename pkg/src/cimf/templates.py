"""Workflow templates and their expansion into concrete DAGs.

A template is a JSON document (see ``docs/templates.md``) naming module
steps, the edges between them, user-facing options and the flavour
hooks that say how the template expands into one of four shapes:

``single``              one copy of each step
``input_ensemble``      the replicated sub-graph copied once per member
                        label, plus a fan-in step
``parameter_ensemble``  the replicated sub-graph copied once per parameter
                        sample, plus a fan-in step
``calibration``         a single run followed by an evaluation step; the
                        calibration service drives the iterations
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from datetime import date
from graphlib import CycleError as _GraphCycle
from graphlib import TopologicalSorter

from .errors import CycleError, NotFound, TemplateError, ValidationError
from .hashing import canonical_json, digest_bytes
from .registry import ModuleRegistry, ModuleSpec
from .store import ObjectStore, check_logical_name

TEMPLATE_BUCKET = "cimf-templates"
FLAVOURS = ("single", "input_ensemble", "parameter_ensemble", "calibration")
OPTION_TYPES = ("number", "integer", "string", "boolean", "object", "array", "file")
BUILTIN_OPTIONS = ("min_x", "min_y", "max_x", "max_y", "crs_label", "start", "end")
INLINE_LIMIT = 256
_USER_REF = re.compile(r"^\{user:([A-Za-z_][A-Za-z0-9_]*)\}$")
_LABEL = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


# -- data model --------------------------------------------------------------

@dataclass(frozen=True)
class StepTemplate:
    step_id: str
    module: tuple
    param_bindings: dict
    input_bindings: dict
    resources: dict

    @classmethod
    def from_dict(cls, d: dict) -> "StepTemplate":
        mod = d["module"]
        if isinstance(mod, str):
            name, _, tag = mod.partition(":")
            mod = (name, tag)
        else:
            mod = (mod["name"], str(mod["tag"]))
        return cls(d["step_id"], mod, dict(d.get("params", {})), dict(d.get("inputs", {})),
                   dict(d.get("resources", {})))


@dataclass
class WorkflowTemplate:
    workflow_name: str
    version_hash: str
    document: dict
    steps: list
    edges: list
    options: dict
    flavour_hooks: dict
    workflow_types: dict

    @property
    def step_ids(self):
        return [s.step_id for s in self.steps]

    def step(self, step_id) -> StepTemplate:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    @property
    def exposed_params(self) -> dict:
        """Option name -> list of (step_id, param) it is bound to."""
        out = {name: [] for name in self.options}
        for s in self._all_steps():
            for param, value in s.param_bindings.items():
                ref = user_ref(value)
                if ref is not None:
                    out.setdefault(ref, []).append((s.step_id, param))
        return out

    def _all_steps(self):
        yield from self.steps
        for flav in ("input_ensemble", "parameter_ensemble"):
            fan = self.flavour_hooks.get(flav, {}).get("fan_in")
            if fan:
                yield StepTemplate.from_dict(fan)
        ev = self.flavour_hooks.get("calibration", {}).get("evaluate")
        if ev:
            yield StepTemplate.from_dict(ev)

    def supports(self, flavour) -> bool:
        return flavour == "single" or flavour in self.flavour_hooks

    def replicated(self, flavour) -> list:
        """Step ids copied per member for an ensemble flavour."""
        hooks = self.flavour_hooks.get(flavour, {})
        if hooks.get("replicate") is not None:
            return list(hooks["replicate"])
        sim = self.flavour_hooks["simulation_step"]
        down = _descendants(self.step_ids, self.edges, sim)
        return [s for s in self.step_ids if s == sim or s in down]


@dataclass
class ConcreteStep:
    node_id: str
    step_id: str
    module: tuple
    params: dict
    inputs: dict
    resources: dict = field(default_factory=dict)
    member: str | None = None
    fan_in: bool = False

    def to_dict(self) -> dict:
        return {"node_id": self.node_id, "step_id": self.step_id, "module": list(self.module),
                "params": self.params, "inputs": self.inputs, "resources": self.resources,
                "member": self.member, "fan_in": self.fan_in}

    @classmethod
    def from_dict(cls, d) -> "ConcreteStep":
        return cls(d["node_id"], d["step_id"], tuple(d["module"]), d["params"], d["inputs"],
                   d.get("resources", {}), d.get("member"), d.get("fan_in", False))


@dataclass
class DagInstance:
    run_id: str
    bucket: str
    workflow_name: str
    version_hash: str
    flavour: str
    nodes: list
    edges: list
    fan_in: str | None = None

    def node(self, node_id) -> ConcreteStep:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def predecessors(self) -> dict:
        preds = {n.node_id: set() for n in self.nodes}
        for a, b in self.edges:
            preds[b].add(a)
        return preds

    def topological_order(self) -> list:
        return list(TopologicalSorter(self.predecessors()).static_order())

    def structure(self) -> tuple:
        """Node multiset and edge set, for reproducibility comparisons."""
        nodes = sorted(canonical_json({k: v for k, v in n.to_dict().items()}).decode()
                       for n in self.nodes)
        return tuple(nodes), tuple(sorted(tuple(e) for e in self.edges))

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "bucket": self.bucket, "workflow_name": self.workflow_name,
                "version_hash": self.version_hash, "flavour": self.flavour,
                "nodes": [n.to_dict() for n in self.nodes],
                "edges": [list(e) for e in self.edges], "fan_in": self.fan_in}

    @classmethod
    def from_dict(cls, d) -> "DagInstance":
        return cls(d["run_id"], d["bucket"], d["workflow_name"], d["version_hash"], d["flavour"],
                   [ConcreteStep.from_dict(n) for n in d["nodes"]],
                   [tuple(e) for e in d["edges"]], d.get("fan_in"))


def user_ref(value):
    if isinstance(value, str):
        m = _USER_REF.match(value)
        if m:
            return m.group(1)
    return None


def _descendants(nodes, edges, start) -> set:
    children = {n: [] for n in nodes}
    for a, b in edges:
        children[a].append(b)
    seen, todo = set(), [start]
    while todo:
        for c in children[todo.pop()]:
            if c not in seen:
                seen.add(c)
                todo.append(c)
    return seen


def _find_cycle(nodes, edges):
    try:
        TopologicalSorter({n: {a for a, b in edges if b == n} for n in nodes}).prepare()
    except _GraphCycle as exc:
        cyc = list(exc.args[1])
        # graphlib reports the cycle in predecessor order
        return list(reversed(cyc))
    return None


# -- parsing and validation ----------------------------------------------------

def parse_template(document, registry: ModuleRegistry | None = None) -> WorkflowTemplate:
    """Validate a template document; ``registry`` enables module checks."""
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise TemplateError(f"template is not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise TemplateError("template must be a JSON object")
    try:
        name = document["workflow_name"]
        steps = [StepTemplate.from_dict(s) for s in document["steps"]]
    except (KeyError, TypeError) as exc:
        raise TemplateError(f"malformed template: missing {exc}") from None
    if not isinstance(name, str) or not _LABEL.match(name):
        raise TemplateError(f"invalid workflow_name {name!r}")
    edges = [tuple(e) for e in document.get("edges", [])]
    options = document.get("params", {})
    hooks = document.get("flavours", {})
    types = document.get("workflow_types", {})

    ids = [s.step_id for s in steps]
    if len(set(ids)) != len(ids):
        raise TemplateError("duplicate step ids")
    for sid in ids:
        if not _LABEL.match(sid) or "#" in sid:
            raise TemplateError(f"invalid step id {sid!r}")
    for e in edges:
        if len(e) != 2:
            raise TemplateError(f"edge {list(e)} must have two endpoints")
        for end in e:
            if end not in ids:
                raise TemplateError(f"edge {list(e)} references unknown step {end!r}")
    cycle = _find_cycle(ids, edges)
    if cycle:
        raise CycleError(cycle)

    for opt, decl in options.items():
        if opt in BUILTIN_OPTIONS:
            raise TemplateError(f"option {opt!r} shadows a built-in option")
        if decl.get("type") not in OPTION_TYPES:
            raise TemplateError(f"option {opt!r}: unknown type {decl.get('type')!r}")
    for wt, flav in types.items():
        if flav not in FLAVOURS:
            raise TemplateError(f"workflow type {wt!r} maps to unknown flavour {flav!r}")

    tmpl = WorkflowTemplate(name, digest_bytes(canonical_json(document)), document, steps,
                            edges, options, hooks, types)
    edge_set = set(edges)
    for s in steps:
        _check_step(tmpl, s, registry, edge_set, set(ids))
    _check_flavours(tmpl, registry)
    return tmpl


def _spec(registry, module) -> ModuleSpec | None:
    if registry is None:
        return None
    name, tag = module
    if not registry.exists(name, tag):
        raise TemplateError(f"dangling module reference {name}:{tag}")
    return registry.spec(name, tag)


def _check_step(tmpl, s: StepTemplate, registry, edge_set, known_steps, extra_producers=()):
    spec = _spec(registry, s.module)
    for param, value in s.param_bindings.items():
        ref = user_ref(value)
        if ref is not None and ref not in tmpl.options and ref not in BUILTIN_OPTIONS:
            raise TemplateError(f"step {s.step_id}: unknown option reference {value!r}")
        if spec is not None:
            try:
                decl = spec.param(param)
            except KeyError:
                raise TemplateError(f"step {s.step_id}: module has no param {param!r}") from None
            if ref is None:
                try:
                    decl.coerce(value)
                except (TypeError, ValueError) as exc:
                    raise TemplateError(f"step {s.step_id}: {exc}") from None
    for logical, binding in s.input_bindings.items():
        if not isinstance(binding, dict):
            raise TemplateError(f"step {s.step_id}: input {logical!r} binding must be an object")
        if spec is not None:
            try:
                decl = spec.input(logical)
            except KeyError:
                raise TemplateError(f"step {s.step_id}: module has no input {logical!r}") from None
            if decl.collection != ("collect" in binding):
                raise TemplateError(f"step {s.step_id}: input {logical!r} collection mismatch")
        if "step" in binding:
            prod = binding["step"]
            if prod not in known_steps:
                raise TemplateError(f"step {s.step_id}: input {logical!r} from unknown step {prod!r}")
            if (prod, s.step_id) not in edge_set and prod not in extra_producers:
                raise TemplateError(
                    f"unbound data dependency: {s.step_id} reads {binding.get('output')!r} "
                    f"from {prod} without an edge")
            if registry is not None:
                pspec = registry.spec(*tmpl.step(prod).module)
                if binding.get("output") not in pspec.output_names():
                    raise TemplateError(
                        f"step {s.step_id}: {prod} does not produce {binding.get('output')!r}")
        elif "user" in binding:
            opt = binding["user"]
            if opt not in tmpl.options:
                raise TemplateError(f"step {s.step_id}: unknown option {opt!r}")
            if tmpl.options[opt]["type"] not in ("object", "array", "file"):
                raise TemplateError(f"step {s.step_id}: option {opt!r} is not file-like")
        elif "collect" in binding:
            if binding["collect"] not in known_steps:
                raise TemplateError(f"step {s.step_id}: collects unknown step {binding['collect']!r}")
        else:
            raise TemplateError(f"step {s.step_id}: input {logical!r} has no source")
    if spec is not None:
        for decl in spec.inputs:
            if decl.required and decl.logical_name not in s.input_bindings:
                raise TemplateError(
                    f"unbound data dependency: step {s.step_id} input {decl.logical_name!r}")


def _check_flavours(tmpl: WorkflowTemplate, registry):
    hooks = tmpl.flavour_hooks
    ids = set(tmpl.step_ids)
    ensemble = [f for f in ("input_ensemble", "parameter_ensemble") if f in hooks]
    if (ensemble or "calibration" in hooks) and hooks.get("simulation_step") not in ids:
        raise TemplateError("flavour hooks need a valid simulation_step")
    for flav in ensemble:
        h = hooks[flav]
        rep = tmpl.replicated(flav)
        omit = set(h.get("omit", []))
        for sid in list(rep) + list(omit):
            if sid not in ids:
                raise TemplateError(f"{flav}: unknown step {sid!r}")
        for a, b in tmpl.edges:
            if a in rep and b not in rep and b not in omit:
                raise TemplateError(f"{flav}: shared step {b} depends on replicated step {a}")
            if a in omit and b not in omit:
                raise TemplateError(f"{flav}: step {b} depends on omitted step {a}")
        fan = h.get("fan_in")
        if not fan:
            raise TemplateError(f"{flav}: fan_in step required")
        fstep = StepTemplate.from_dict(fan)
        if fstep.step_id in ids:
            raise TemplateError(f"{flav}: fan-in step id clashes with a template step")
        for b in fstep.input_bindings.values():
            if "collect" in b and b["collect"] not in rep:
                raise TemplateError(f"{flav}: fan-in collects non-replicated step {b['collect']!r}")
            if "step" in b and b["step"] in rep:
                raise TemplateError(f"{flav}: fan-in may read replicated steps only via collect")
        _check_step(tmpl, fstep, registry, set(), ids, extra_producers=ids)
        if flav == "input_ensemble":
            target = h.get("member_param")
            if not target or target[0] not in rep:
                raise TemplateError("input_ensemble: member_param must target a replicated step")
            if h.get("members_option") not in tmpl.options:
                raise TemplateError("input_ensemble: members_option must name an option")
        else:
            if h.get("samples_option") not in tmpl.options:
                raise TemplateError("parameter_ensemble: samples_option must name an option")
            exposed = tmpl.exposed_params
            for opt in h.get("sample_params", []):
                for sid, _ in exposed.get(opt, []):
                    if sid in ids and sid not in rep:
                        raise TemplateError(
                            f"parameter_ensemble: sample param {opt!r} binds shared step {sid}")
    if "calibration" in hooks:
        h = hooks["calibration"]
        ev = h.get("evaluate")
        if not ev:
            raise TemplateError("calibration: evaluate step required")
        estep = StepTemplate.from_dict(ev)
        if estep.step_id in ids:
            raise TemplateError("calibration: evaluate step id clashes with a template step")
        _check_step(tmpl, estep, registry, set(), ids, extra_producers=ids)
        for opt in h.get("calibratable", []):
            decl = tmpl.options.get(opt)
            if decl is None or decl["type"] not in ("number", "integer"):
                raise TemplateError(f"calibration: calibratable option {opt!r} must be numeric")


# -- payload handling -----------------------------------------------------------

def _check_scalar(path, decl, value):
    t = decl["type"]
    ok = {
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "integer": lambda v: (isinstance(v, int) and not isinstance(v, bool))
        or (isinstance(v, float) and v.is_integer()),
        "string": lambda v: isinstance(v, str),
        "boolean": lambda v: isinstance(v, bool),
        "object": lambda v: isinstance(v, dict),
        "array": lambda v: isinstance(v, list),
        "file": lambda v: isinstance(v, dict) and len(set(v) & {"content", "path", "object"}) == 1,
    }[t]
    if not ok(value):
        raise ValidationError(path, f"expected {t}, got {type(value).__name__}")
    if t in ("number", "integer"):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValidationError(path, "must be finite")
        if decl.get("min") is not None and value < decl["min"]:
            raise ValidationError(path, f"{value} below minimum {decl['min']}")
        if decl.get("max") is not None and value > decl["max"]:
            raise ValidationError(path, f"{value} above maximum {decl['max']}")
    if t == "string" and decl.get("choices") and value not in decl["choices"]:
        raise ValidationError(path, f"{value!r} not one of {decl['choices']}")
    if t == "integer":
        return int(value)
    return value


def validate_payload(payload, tmpl: WorkflowTemplate | None = None) -> dict:
    """Structural checks, then options against the template's declarations.

    Returns the option map with template defaults filled in.
    """
    if not isinstance(payload, dict):
        raise ValidationError("$", "payload must be a JSON object")
    wt = payload.get("workflow_type")
    if not isinstance(wt, str) or not wt:
        raise ValidationError("workflow_type", "required string")
    sd = payload.get("spatial_domain")
    if not isinstance(sd, dict):
        raise ValidationError("spatial_domain", "required object")
    bbox = sd.get("bbox")
    if (not isinstance(bbox, list) or len(bbox) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox)):
        raise ValidationError("spatial_domain.bbox", "expected [min_x, min_y, max_x, max_y]")
    if not (bbox[0] < bbox[2] and bbox[1] < bbox[3]):
        raise ValidationError("spatial_domain.bbox", "require min_x < max_x and min_y < max_y")
    if not isinstance(sd.get("crs_label", ""), str):
        raise ValidationError("spatial_domain.crs_label", "expected string")
    td = payload.get("temporal_domain")
    if not isinstance(td, dict):
        raise ValidationError("temporal_domain", "required object")
    parsed = {}
    for key in ("start", "end"):
        try:
            parsed[key] = date.fromisoformat(td.get(key))
        except (TypeError, ValueError):
            raise ValidationError(f"temporal_domain.{key}", "expected ISO date YYYY-MM-DD") from None
    if parsed["start"] > parsed["end"]:
        raise ValidationError("temporal_domain", "start must not be after end")
    options = payload.get("options", {})
    if not isinstance(options, dict):
        raise ValidationError("options", "expected object")
    if tmpl is None:
        return dict(options)
    resolved = {}
    for name, value in options.items():
        decl = tmpl.options.get(name)
        if decl is None:
            raise ValidationError(f"options.{name}", "unknown option for this workflow")
        resolved[name] = _check_scalar(f"options.{name}", decl, value)
    for name, decl in tmpl.options.items():
        if name not in resolved:
            if "default" in decl:
                resolved[name] = copy.deepcopy(decl["default"])
            elif decl.get("required"):
                raise ValidationError(f"options.{name}", "required option missing")
    return resolved


def builtin_options(payload) -> dict:
    sd, td = payload["spatial_domain"], payload["temporal_domain"]
    bbox = sd["bbox"]
    return {"min_x": bbox[0], "min_y": bbox[1], "max_x": bbox[2], "max_y": bbox[3],
            "crs_label": sd.get("crs_label", ""), "start": td["start"], "end": td["end"]}


def _by_reference(decl, value) -> bool:
    if decl is not None and decl["type"] in ("object", "array", "file"):
        return True
    if isinstance(value, (dict, list)):
        return True
    return len(canonical_json(value)) > INLINE_LIMIT


def option_object(name, decl, value, read_file=None) -> tuple[str, bytes]:
    """(logical name, bytes) of the config object carrying a by-reference option."""
    if decl is not None and decl["type"] == "file":
        filename = decl.get("filename", name)
        if "content" in value:
            data = value["content"].encode("utf-8") if isinstance(value["content"], str) \
                else bytes(value["content"])
        else:
            if read_file is None:
                raise ValidationError(f"options.{name}", "file references cannot be resolved here")
            data = read_file(value)
        return f"inputs/{filename}", data
    return f"config/{name}.json", canonical_json(value)


def translate_payload(payload, tmpl: WorkflowTemplate, store: ObjectStore | None = None,
                      bucket: str | None = None, read_file=None) -> dict:
    """Flatten a user payload into the parameter map handed to the engine.

    Scalar options are inlined. Objects, arrays, files and anything whose
    JSON form exceeds 256 bytes become config objects in the run bucket;
    the map then carries their stored name. With no bucket the names are
    computed without writing anything.
    """
    from .store import stored_name_for

    options = validate_payload(payload, tmpl)
    out = builtin_options(payload)
    for name in sorted(options):
        value = options[name]
        decl = tmpl.options.get(name)
        if not _by_reference(decl, value):
            out[name] = value
            continue
        logical, data = option_object(name, decl, value, read_file)
        if store is not None and bucket is not None:
            out[name] = store.put(bucket, logical, data).stored_name
        else:
            out[name] = stored_name_for(logical, digest_bytes(data))
    return out


# -- instantiation ---------------------------------------------------------------

def _resolve_params(step: StepTemplate, spec: ModuleSpec | None, values: dict,
                    overrides: dict | None = None) -> dict:
    params = {}
    if spec is not None:
        for decl in spec.params:
            if decl.default is not None:
                params[decl.name] = decl.default
    for param, binding in step.param_bindings.items():
        ref = user_ref(binding)
        if ref is None:
            params[param] = binding
        elif ref in values and values[ref] is not None:
            params[param] = values[ref]
    if overrides:
        params.update(overrides)
    if spec is not None:
        for decl in spec.params:
            if decl.name not in params:
                raise ValidationError(f"steps.{step.step_id}.params.{decl.name}", "no value")
            try:
                params[decl.name] = decl.coerce(params[decl.name])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"steps.{step.step_id}.params.{decl.name}", str(exc)) from None
    return dict(sorted(params.items()))


def _resolve_inputs(step: StepTemplate, engine_map: dict, node_of, collect_of=None) -> dict:
    inputs = {}
    for logical, b in step.input_bindings.items():
        if "step" in b:
            inputs[logical] = {"node": node_of(b["step"]), "output": b["output"]}
        elif "user" in b:
            if b["user"] not in engine_map:
                continue
            inputs[logical] = {"object": engine_map[b["user"]]}
        else:
            inputs[logical] = {"collect": collect_of(b["collect"]), "output": b["output"]}
    return dict(sorted(inputs.items()))


class TemplateCatalog:
    """Versioned template storage plus DAG instantiation."""

    def __init__(self, store: ObjectStore, registry: ModuleRegistry):
        self.store = store
        self.registry = registry
        store.create_bucket(TEMPLATE_BUCKET)
        self._cache: dict[str, WorkflowTemplate] = {}

    def register_template(self, document) -> tuple[str, str]:
        tmpl = parse_template(document, self.registry)
        self.store.put(TEMPLATE_BUCKET, f"templates/{tmpl.workflow_name}.json",
                       canonical_json(tmpl.document))
        self._cache[tmpl.version_hash] = tmpl
        return tmpl.workflow_name, tmpl.version_hash

    def get(self, workflow_name: str, version: str | None = None) -> WorkflowTemplate:
        logical = f"templates/{workflow_name}.json"
        try:
            if version is None:
                obj = self.store.stat(TEMPLATE_BUCKET, logical)
            else:
                cands = [o for o in self.store.list(TEMPLATE_BUCKET, f"templates/{workflow_name}.")
                         if o.logical_name == logical and o.digest.startswith(version)]
                if len(cands) != 1:
                    raise NotFound(f"template {workflow_name}@{version} not found")
                obj = cands[0]
        except NotFound:
            raise NotFound(f"unknown workflow {workflow_name!r}"
                           + (f" version {version}" if version else "")) from None
        if obj.digest in self._cache:
            return self._cache[obj.digest]
        data, _ = self.store.get(TEMPLATE_BUCKET, obj.stored_name)
        tmpl = parse_template(json.loads(data), None)
        self._cache[tmpl.version_hash] = tmpl
        return tmpl

    def list_templates(self) -> list[tuple[str, str]]:
        seen = {}
        for obj in self.store.list(TEMPLATE_BUCKET, "templates/"):
            name = obj.logical_name[len("templates/"):-len(".json")]
            latest = self.store.stat(TEMPLATE_BUCKET, obj.logical_name)
            seen[name] = latest.digest
        return sorted(seen.items())

    def versions(self, workflow_name) -> list[str]:
        logical = f"templates/{workflow_name}.json"
        objs = [o for o in self.store.list(TEMPLATE_BUCKET, "templates/") if o.logical_name == logical]
        return [o.digest for o in sorted(objs, key=lambda o: o.created_at)]

    def find_workflow_type(self, workflow_type: str) -> tuple[WorkflowTemplate, str]:
        for name, _ in self.list_templates():
            tmpl = self.get(name)
            if workflow_type in tmpl.workflow_types:
                return tmpl, tmpl.workflow_types[workflow_type]
        raise NotFound(f"unknown workflow_type {workflow_type!r}")

    def translate_payload(self, payload, tmpl=None, bucket=None, read_file=None) -> dict:
        if tmpl is None:
            tmpl, _ = self.find_workflow_type(payload.get("workflow_type"))
        return translate_payload(payload, tmpl, self.store if bucket else None, bucket, read_file)

    def instantiate(self, workflow_name: str, payload: dict, flavour: str | None = None,
                    run_id: str = "preview", bucket: str | None = None, version: str | None = None,
                    engine_map: dict | None = None, read_file=None) -> DagInstance:
        tmpl = self.get(workflow_name, version)
        if flavour is None:
            flavour = tmpl.workflow_types.get(payload.get("workflow_type"), "single")
        return expand(tmpl, payload, flavour, run_id=run_id, bucket=bucket,
                      store=self.store if bucket else None, registry=self.registry,
                      engine_map=engine_map, read_file=read_file)


def expand(tmpl: WorkflowTemplate, payload: dict, flavour: str, run_id="preview", bucket=None,
           store=None, registry=None, engine_map=None, read_file=None) -> DagInstance:
    """Expand ``tmpl`` into a concrete DAG for ``flavour``."""
    if flavour not in FLAVOURS:
        raise ValidationError("workflow_type", f"unknown flavour {flavour!r}")
    if not tmpl.supports(flavour):
        raise ValidationError("workflow_type",
                              f"workflow {tmpl.workflow_name} does not support flavour {flavour}")
    options = validate_payload(payload, tmpl)
    values = {**builtin_options(payload), **options}
    if engine_map is None:
        engine_map = translate_payload(payload, tmpl, store, bucket, read_file)
    # by-reference options are seen by steps through their stored names
    step_values = {k: engine_map.get(k, v) for k, v in values.items()}
    specs = {}

    def spec_for(module):
        if registry is None:
            return None
        if module not in specs:
            specs[module] = registry.spec(*module)
        return specs[module]

    hooks = tmpl.flavour_hooks.get(flavour, {})
    nodes, edges = [], []
    fan_id = None

    if flavour in ("single", "calibration"):
        for s in tmpl.steps:
            nodes.append(ConcreteStep(s.step_id, s.step_id, s.module,
                                      _resolve_params(s, spec_for(s.module), step_values),
                                      _resolve_inputs(s, engine_map, lambda x: x), s.resources))
        edges = [tuple(e) for e in tmpl.edges]
        if flavour == "calibration":
            truth = hooks.get("truth_option")
            if truth and values.get(truth) is None:
                raise ValidationError(f"options.{truth}", "calibration needs a ground truth")
            ev = StepTemplate.from_dict(hooks["evaluate"])
            node = ConcreteStep(ev.step_id, ev.step_id, ev.module,
                                _resolve_params(ev, spec_for(ev.module), step_values),
                                _resolve_inputs(ev, engine_map, lambda x: x), ev.resources)
            nodes.append(node)
            edges += sorted({(i["node"], ev.step_id) for i in node.inputs.values() if "node" in i})
    else:
        rep = tmpl.replicated(flavour)
        omit = set(hooks.get("omit", []))
        members = _members(flavour, hooks, tmpl, values)
        shared = [s for s in tmpl.step_ids if s not in rep and s not in omit]
        for s in tmpl.steps:
            if s.step_id in shared:
                nodes.append(ConcreteStep(s.step_id, s.step_id, s.module,
                                          _resolve_params(s, spec_for(s.module), step_values),
                                          _resolve_inputs(s, engine_map, lambda x: x), s.resources))
        for label, overrides in members:
            def node_of(sid, label=label):
                return f"{sid}#{label}" if sid in rep else sid
            member_values = {**step_values, **overrides.get("options", {})}
            for s in tmpl.steps:
                if s.step_id not in rep:
                    continue
                extra = overrides.get("params", {}).get(s.step_id)
                nodes.append(ConcreteStep(node_of(s.step_id), s.step_id, s.module,
                                          _resolve_params(s, spec_for(s.module), member_values, extra),
                                          _resolve_inputs(s, engine_map, node_of), s.resources,
                                          member=label))
            for a, b in tmpl.edges:
                if b in rep:
                    edges.append((node_of(a), node_of(b)))
        for a, b in tmpl.edges:
            if a in shared and b in shared:
                edges.append((a, b))
        fan = StepTemplate.from_dict(hooks["fan_in"])
        fan_id = fan.step_id
        labels = [m for m, _ in members]
        node = ConcreteStep(fan.step_id, fan.step_id, fan.module,
                            _resolve_params(fan, spec_for(fan.module), step_values),
                            _resolve_inputs(fan, engine_map, lambda x: x,
                                            lambda sid: [f"{sid}#{m}" for m in labels]),
                            fan.resources, fan_in=True)
        nodes.append(node)
        for ref in node.inputs.values():
            for src in ref.get("collect", [ref.get("node")] if "node" in ref else []):
                edges.append((src, fan.step_id))
        edges = sorted(set(edges), key=lambda e: (e[0], e[1]))

    dag = DagInstance(run_id, bucket or run_id, tmpl.workflow_name, tmpl.version_hash, flavour,
                      nodes, edges, fan_id)
    dag.topological_order()
    return dag


def _members(flavour, hooks, tmpl, values) -> list[tuple[str, dict]]:
    if flavour == "input_ensemble":
        opt = hooks["members_option"]
        labels = values.get(opt)
        if not isinstance(labels, list) or len(labels) < 1:
            raise ValidationError(f"options.{opt}", "ensemble needs at least one member")
        labels = [str(x) for x in labels]
        for i, lab in enumerate(labels):
            if not _LABEL.match(lab):
                raise ValidationError(f"options.{opt}[{i}]", f"invalid member label {lab!r}")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"options.{opt}", "member labels must be unique")
        sid, param = hooks["member_param"]
        return [(lab, {"params": {sid: {param: lab}}}) for lab in labels]
    opt = hooks["samples_option"]
    samples = values.get(opt)
    if not isinstance(samples, list) or len(samples) < 1:
        raise ValidationError(f"options.{opt}", "ensemble needs at least one parameter sample")
    allowed = set(hooks.get("sample_params", []))
    width = max(3, len(str(len(samples) - 1)))
    out = []
    for i, sample in enumerate(samples):
        if not isinstance(sample, dict) or not sample:
            raise ValidationError(f"options.{opt}[{i}]", "expected a non-empty object")
        checked = {}
        for k, v in sample.items():
            if k not in allowed:
                raise ValidationError(f"options.{opt}[{i}].{k}", "not a sampleable parameter")
            checked[k] = _check_scalar(f"options.{opt}[{i}].{k}", tmpl.options[k], v)
        out.append((f"p{i:0{width}d}", {"options": checked}))
    return out


def load_template_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


__all__ = [
    "ConcreteStep", "DagInstance", "StepTemplate", "TemplateCatalog", "WorkflowTemplate",
    "expand", "parse_template", "translate_payload", "validate_payload", "check_logical_name",
]
