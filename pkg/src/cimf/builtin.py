"""Bundled modules and the five-step flood workflow template."""
from __future__ import annotations

import json
from importlib import resources

from .errors import Duplicate
from .modules import script

PY = ["{python}", "{exe}"]


def _io(name, hint="", required=True, collection=False):
    d = {"logical_name": name, "required": required, "media_hint": hint}
    if collection:
        d["collection"] = True
    return d


MODULES = {
    "precip_query": {
        "name": "precip-query", "tag": "1.0", "run_command": PY,
        "inputs": [_io("precip_source.json", "application/json")],
        "outputs": [_io("precip_raw.json", "application/json")],
        "params": [{"name": "start", "type": "string", "default": ""},
                   {"name": "end", "type": "string", "default": ""}],
        "description": "Fetch the precipitation series (or generator) for the run period",
    },
    "dem_query": {
        "name": "dem-query", "tag": "1.0", "run_command": PY,
        "inputs": [_io("dem_source.json", "application/json")],
        "outputs": [_io("dem.asc", "raster/asciigrid")],
        "params": [{"name": n, "type": "number", "default": None}
                   for n in ("min_x", "min_y", "max_x", "max_y")],
        "description": "Fetch the elevation model for the bounding box",
    },
    "preprocess": {
        "name": "precip-preprocess", "tag": "1.0", "run_command": PY,
        "inputs": [_io("precip_raw.json", "application/json")],
        "outputs": [_io("precip.csv", "text/csv")],
        "params": [{"name": "member", "type": "string", "default": ""},
                   {"name": "scale", "type": "number", "default": 1.0, "min": 0}],
        "description": "Select and scale one member's precipitation series",
    },
    "flood_model": {
        "name": "ifm-toy", "tag": "1.0", "run_command": PY,
        "inputs": [_io("dem.asc", "raster/asciigrid"), _io("precip.csv", "text/csv")],
        "outputs": [_io("depth.asc", "raster/asciigrid"), _io("budget.json", "application/json")],
        "params": [
            {"name": "infiltration_rate", "type": "number", "default": 0.005, "min": 0},
            {"name": "routing_coefficient", "type": "number", "default": 0.5, "min": 0, "max": 1},
            {"name": "routing_sweeps", "type": "integer", "default": 4, "min": 1},
            {"name": "timestep", "type": "number", "default": 1.0, "min": 0},
        ],
        "description": "Reference pluvial flood model (soil loss + overland routing)",
        "source_ref": "cimf.flood",
    },
    "flood_extent": {
        "name": "flood-extent", "tag": "1.0", "run_command": PY,
        "inputs": [_io("depth.asc", "raster/asciigrid")],
        "outputs": [_io("extent.asc", "raster/asciigrid"),
                    _io("extent_summary.json", "application/json")],
        "params": [{"name": "threshold", "type": "number", "default": 0.15, "min": 0}],
        "description": "Flood extent mask from a depth raster",
    },
    "ensemble_metrics": {
        "name": "metrics", "tag": "1.0", "run_command": PY,
        "inputs": [_io("members", "raster/asciigrid", collection=True)],
        "outputs": [_io("metric.asc", "raster/asciigrid"),
                    _io("metric_meta.json", "application/json")],
        "params": [{"name": "metric", "type": "string", "default": "exceedance_probability"},
                   {"name": "threshold", "type": "number", "default": 0.15, "min": 0},
                   {"name": "per_member_reduction", "type": "string", "default": "max_over_time"}],
        "description": "Ensemble risk metrics over member depth rasters",
    },
    "iou_eval": {
        "name": "iou", "tag": "1.0", "run_command": PY,
        "inputs": [_io("extent.asc", "raster/asciigrid"), _io("truth.asc", "raster/asciigrid")],
        "outputs": [_io("iou.json", "application/json")],
        "params": [{"name": "threshold", "type": "number", "default": 0.5, "min": 0}],
        "description": "Intersection over union against a ground-truth extent",
    },
}


def module_spec(key: str) -> dict:
    spec = dict(MODULES[key])
    spec["executable_name"] = f"{key}.py"
    return spec


def flood_template() -> dict:
    text = resources.files("cimf.data").joinpath("flood_template.json").read_text("utf-8")
    return json.loads(text)


def install(registry, catalog=None) -> list[tuple[str, str]]:
    """On-board every bundled module (skipping ones present) and the template."""
    done = []
    for key in MODULES:
        spec = module_spec(key)
        try:
            done.append(registry.onboard_module(spec, script(key)))
        except Duplicate:
            pass
    if catalog is not None:
        catalog.register_template(flood_template())
    return done
