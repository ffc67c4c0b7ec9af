#!/usr/bin/env python3
"""Normalise a precipitation source document into precip_raw.json.

Accepted sources:
  {"rates": [...]}                       one series
  {"series": {"<label>": [...], ...}}    one series per member label
  {"synthetic": {"steps": 12, "seed": 0, "peak": 0.04}}
"""
import json
import sys

params = json.load(open("cimf_params.json"))
src = json.load(open("precip_source.json"))

if "rates" in src:
    out = {"series": {"": [float(r) for r in src["rates"]]}}
elif "series" in src:
    out = {"series": {str(k): [float(r) for r in v] for k, v in src["series"].items()}}
elif "synthetic" in src:
    syn = dict(src["synthetic"])
    out = {"synthetic": {"steps": int(syn.get("steps", 12)), "seed": int(syn.get("seed", 0)),
                         "peak": float(syn.get("peak", 0.04))}}
else:
    sys.exit("precip_source.json: expected one of rates, series, synthetic")

out["period"] = {"start": params["start"], "end": params["end"]}
with open("precip_raw.json", "w") as fh:
    json.dump(out, fh, sort_keys=True)
print("series:", sorted(out.get("series", {})) or "synthetic")
