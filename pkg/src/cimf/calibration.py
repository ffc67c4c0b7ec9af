"""Iterative calibration: random search over parameter bounds maximising IoU.

Each iteration is an ordinary run of the target workflow in its
``calibration`` flavour (the simulation followed by an IoU evaluation
step) with reuse enabled, so only the steps whose inputs changed are
executed again.
"""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import new_run_id
from .errors import CimfError, MisalignedError, NotFound, ValidationError
from .hashing import canonical_json
from .pwc import RunRecord
from .raster import RasterError, loads
from .runs import prepare_run
from .store import now_rfc3339

log = logging.getLogger(__name__)

REPORT_NAME = "calibration_report.json"
PARAMS_NAME = "calibrated_params.json"


class CalibrationFailed(CimfError):
    pass


def iou(predicted, truth) -> tuple[float, bool]:
    """Intersection over union of two boolean masks.

    Returns ``(value, empty_union)``; two empty masks score 1.0 with the
    flag set.
    """
    a = np.asarray(predicted, dtype=bool)
    b = np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise MisalignedError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0, True
    return int(np.count_nonzero(a & b)) / union, False


@dataclass(frozen=True)
class SearchParam:
    name: str
    lower: float
    upper: float
    integer: bool = False


class UniformSampler:
    """Independent uniform draws within bounds from a seeded generator."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def sample(self, params) -> dict:
        out = {}
        for p in params:
            if p.integer:
                out[p.name] = int(self.rng.integers(int(p.lower), int(p.upper) + 1))
            else:
                u = float(self.rng.random())
                out[p.name] = p.lower + (p.upper - p.lower) * u
        return out


@dataclass
class CalibrationConfig:
    fixed_payload: dict
    search_params: list
    ground_truth: dict
    iterations: int = 100
    extent_threshold: float = 0.15
    seed: int = 0
    batch_width: int = 1
    target_workflow: tuple | None = None  # (name, version or None)

    def __post_init__(self):
        self.search_params = [p if isinstance(p, SearchParam) else SearchParam(**p)
                              for p in self.search_params]
        if isinstance(self.iterations, bool) or not isinstance(self.iterations, int) \
                or self.iterations < 1:
            raise ValidationError("calibration.iterations", "must be a positive integer")
        if self.batch_width < 1:
            raise ValidationError("calibration.batch_width", "must be >= 1")
        if not self.search_params:
            raise ValidationError("calibration.search_params", "at least one parameter required")
        names = [p.name for p in self.search_params]
        if len(set(names)) != len(names):
            raise ValidationError("calibration.search_params", "duplicate parameter")
        for i, p in enumerate(self.search_params):
            # equal bounds are allowed: a degenerate search that pins the value
            if not p.lower <= p.upper:
                raise ValidationError(f"calibration.search_params[{i}]", "lower must be <= upper")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search_params"] = [asdict(p) for p in self.search_params]
        d["target_workflow"] = list(self.target_workflow) if self.target_workflow else None
        return d

    @classmethod
    def from_options(cls, payload: dict) -> "CalibrationConfig":
        """Split a gateway payload into calibration settings and the fixed payload."""
        payload = copy.deepcopy(payload)
        options = payload.setdefault("options", {})
        cal = options.pop("calibration", None)
        if not isinstance(cal, dict):
            raise ValidationError("options.calibration", "required object")
        truth = options.get("ground_truth")
        if truth is None:
            raise ValidationError("options.ground_truth", "required for calibration")
        try:
            return cls(fixed_payload=payload, search_params=cal["search_params"],
                       ground_truth=truth, iterations=cal.get("iterations", 100),
                       extent_threshold=options.get("extent_threshold", 0.15),
                       seed=cal.get("seed", 0), batch_width=cal.get("batch_width", 1),
                       target_workflow=tuple(cal["target_workflow"]) if cal.get("target_workflow") else None)
        except (KeyError, TypeError) as exc:
            raise ValidationError("options.calibration", f"malformed: {exc}") from None


@dataclass
class IterationResult:
    index: int
    params: dict
    iou: float | None
    run_id: str
    status: str
    executed_steps: int = 0
    reused_steps: int = 0
    empty_union: bool = False
    error: str | None = None


@dataclass
class CalibrationReport:
    run_id: str
    iterations: list = field(default_factory=list)
    best_params: dict | None = None
    best_iou: float | None = None
    best_iteration: int | None = None
    initial_iou: float | None = None
    best_so_far: list = field(default_factory=list)
    reused_step_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class CalibrationService:
    def __init__(self, ws):
        self.ws = ws

    def _template(self, cfg: CalibrationConfig):
        if cfg.target_workflow:
            name, version = (list(cfg.target_workflow) + [None])[:2]
            tmpl = self.ws.catalog.get(name, version)
        else:
            tmpl, _ = self.ws.catalog.find_workflow_type(cfg.fixed_payload.get("workflow_type"))
        if not tmpl.supports("calibration"):
            raise ValidationError("workflow_type", f"{tmpl.workflow_name} has no calibration flavour")
        return tmpl

    def _search_space(self, tmpl, cfg):
        allowed = set(tmpl.flavour_hooks["calibration"].get("calibratable", []))
        out = []
        for i, p in enumerate(cfg.search_params):
            if p.name not in allowed:
                raise ValidationError(f"calibration.search_params[{i}].name",
                                      f"{p.name!r} is not calibratable")
            decl = tmpl.options[p.name]
            for bound in (p.lower, p.upper):
                if decl.get("min") is not None and bound < decl["min"] or \
                        decl.get("max") is not None and bound > decl["max"]:
                    raise ValidationError(f"calibration.search_params[{i}]",
                                          f"bounds outside the allowed range of {p.name}")
            out.append(SearchParam(p.name, p.lower, p.upper, decl["type"] == "integer"))
        return out

    def _payload(self, cfg, overrides):
        payload = copy.deepcopy(cfg.fixed_payload)
        opts = payload.setdefault("options", {})
        opts.pop("calibration", None)
        opts["ground_truth"] = cfg.ground_truth
        opts["extent_threshold"] = cfg.extent_threshold
        opts.update(overrides)
        return payload

    def _run_one(self, tmpl, cfg, parent, index, overrides) -> IterationResult:
        run_id = f"{parent}-it{index:03d}"
        try:
            record, dag = prepare_run(self.ws, self._payload(cfg, overrides), run_id=run_id,
                                      flavour="calibration", parent=parent, tmpl=tmpl)
        except CimfError as exc:
            return IterationResult(index, overrides, None, run_id, "failed", error=str(exc))
        record = self.ws.engine.execute(dag, reuse=True, record=record)
        counts = record.step_counts()
        res = IterationResult(index, overrides, None, run_id, record.status,
                              executed_steps=counts["succeeded"] + counts["failed"],
                              reused_steps=counts["reused"])
        if record.status != "succeeded":
            res.error = "; ".join(f"{s.step_id}: {s.error}" for s in record.steps if s.error)
            return res
        data, _ = self.ws.store.get(record.bucket, "iou.json")
        doc = json.loads(data)
        res.iou = float(doc["iou"])
        res.empty_union = bool(doc["empty_union"])
        return res

    def _check_truth(self, tmpl, cfg):
        try:
            truth = loads(_truth_bytes(self.ws, cfg.ground_truth).decode("utf-8"))
        except (OSError, UnicodeDecodeError, RasterError, NotFound, KeyError) as exc:
            raise ValidationError("options.ground_truth", f"unreadable ground truth: {exc}") from None
        return truth

    def calibrate(self, cfg: CalibrationConfig, run_id: str | None = None,
                  user_payload: dict | None = None) -> CalibrationReport:
        tmpl = self._template(cfg)
        space = self._search_space(tmpl, cfg)
        truth = self._check_truth(tmpl, cfg)
        parent = run_id or new_run_id("cal")
        if parent not in self.ws.pwc:
            bucket = self.ws.store.create_bucket(parent)
            record = RunRecord(parent, user_payload or cfg.fixed_payload,
                               {"calibration": cfg.to_dict()}, tmpl.workflow_name,
                               tmpl.version_hash, "calibration", bucket,
                               submitted_at=now_rfc3339())
            self.ws.pwc.open_run(record)
        else:
            record = self.ws.pwc.get(parent)
        record.status = "running"

        sampler = UniformSampler(cfg.seed)
        samples = [sampler.sample(space) for _ in range(cfg.iterations)]
        report = CalibrationReport(parent)

        baseline = self._run_one(tmpl, cfg, parent, 0, {})
        if baseline.run_id in self.ws.pwc:
            try:
                self._check_alignment(baseline, truth)
            except MisalignedError as exc:
                record.status, record.error, record.ended_at = "failed", str(exc), now_rfc3339()
                record.children = [baseline.run_id]
                self.ws.pwc.finalize(record)
                raise
        results = [baseline]
        width = max(1, cfg.batch_width)
        with ThreadPoolExecutor(max_workers=width) as pool:
            for start in range(0, len(samples), width):
                batch = list(enumerate(samples[start:start + width], start=start + 1))
                results += list(pool.map(lambda it: self._run_one(tmpl, cfg, parent, *it), batch))

        best = None
        for r in results:
            if r.iou is not None and (best is None or r.iou > best.iou):
                best = r
            report.best_so_far.append(best.iou if best else None)
        report.iterations = [asdict(r) for r in results]
        report.reused_step_counts = [r.reused_steps for r in results]
        report.initial_iou = baseline.iou
        record.children = [r.run_id for r in results]
        record.ended_at = now_rfc3339()
        if best is None:
            record.status = "failed"
            record.error = "baseline and every iteration failed"
            self.ws.store.put(record.bucket, REPORT_NAME, canonical_json(report.to_dict()))
            self.ws.pwc.finalize(record)
            raise CalibrationFailed(record.error)
        report.best_iou = best.iou
        report.best_iteration = best.index
        defaults = {p.name: tmpl.options[p.name].get("default") for p in space}
        report.best_params = {**defaults, **best.params}
        self.ws.store.put(record.bucket, PARAMS_NAME, canonical_json(report.best_params))
        self.ws.store.put(record.bucket, REPORT_NAME, canonical_json(report.to_dict()))
        record.status = "succeeded"
        self.ws.pwc.finalize(record)
        return report

    def _check_alignment(self, baseline, truth):
        bucket = self.ws.pwc.get(baseline.run_id).bucket
        try:
            data, _ = self.ws.store.get(bucket, "extent.asc")
        except NotFound:
            return  # the model itself failed; reported per iteration
        extent = loads(data.decode("utf-8"))
        if extent.header != truth.header:
            raise MisalignedError(f"ground truth grid {truth.header} does not match model grid "
                                  f"{extent.header}")


def _truth_bytes(ws, ref) -> bytes:
    if "content" in ref:
        c = ref["content"]
        return c.encode("utf-8") if isinstance(c, str) else bytes(c)
    return ws.read_file(ref)
