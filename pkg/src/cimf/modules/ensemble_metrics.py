#!/usr/bin/env python3
"""Fan-in metrics over the members listed in stack_manifest.json.

Writes metric.asc and metric_meta.json (member counts and labels).
"""
import json
import sys

from cimf import metrics, raster

p = json.load(open("cimf_params.json"))
manifest = json.load(open("stack_manifest.json"))
members = manifest["members"]
if not members:
    sys.exit("no successful members to aggregate")

spec = metrics.MetricSpec(p["metric"], p["threshold"], p["per_member_reduction"])
series = [[raster.read(f) for f in m["files"]] for m in members]
labels = [m["label"] for m in members]
result = metrics.compute(spec, series, labels)
raster.write("metric.asc", result)
meta = {"metric": spec.metric, "threshold": spec.threshold,
        "per_member_reduction": spec.per_member_reduction,
        "members": labels, "n_members": len(labels),
        "n_expected": manifest["n_expected"], "failed": manifest["failed"]}
with open("metric_meta.json", "w") as fh:
    json.dump(meta, fh, sort_keys=True)
print(f"{spec.metric} over {len(labels)}/{manifest['n_expected']} members")
