#!/usr/bin/env python3
"""Threshold depth.asc into a 0/1 flood extent raster."""
import json

from cimf import metrics, raster

p = json.load(open("cimf_params.json"))
depth = raster.read("depth.asc")
mask, n_nodata = metrics.extent_mask(depth, p["threshold"])
raster.write("extent.asc", depth.like(mask.astype(float)))
with open("extent_summary.json", "w") as fh:
    json.dump({"threshold": p["threshold"], "flooded_cells": int(mask.sum()),
               "nodata_cells": n_nodata}, fh, sort_keys=True)
