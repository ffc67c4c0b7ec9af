#!/usr/bin/env python3
"""Produce dem.asc for the requested bounding box.

Sources: {"synthetic": {"size": 32, "seed": 0, "relief": 2.0, "collar": true}}
or {"asc": "<ascii grid text>"} passed through unchanged.
"""
import json
import sys

from cimf import flood, raster

p = json.load(open("cimf_params.json"))
src = json.load(open("dem_source.json"))

if "asc" in src:
    dem = raster.loads(src["asc"])
elif "synthetic" in src:
    syn = src["synthetic"]
    size = int(syn.get("size", 32))
    width, height = p["max_x"] - p["min_x"], p["max_y"] - p["min_y"]
    dem = flood.synthetic_dem(size=size, seed=int(syn.get("seed", 0)),
                              relief=float(syn.get("relief", 2.0)),
                              collar=bool(syn.get("collar", True)),
                              xllcorner=p["min_x"], yllcorner=p["min_y"],
                              cellsize=min(width, height) / size)
else:
    sys.exit("dem_source.json: expected 'synthetic' or 'asc'")
raster.write("dem.asc", dem)
print(f"dem {dem.nrows}x{dem.ncols} cellsize {dem.cellsize}")
