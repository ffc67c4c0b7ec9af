#!/usr/bin/env python3
"""IoU between extent.asc and truth.asc (cells >= threshold count as wet)."""
import json

from cimf import calibration, metrics, raster

p = json.load(open("cimf_params.json"))
pred, _ = metrics.extent_mask(raster.read("extent.asc"), p["threshold"])
truth, _ = metrics.extent_mask(raster.read("truth.asc"), p["threshold"])
value, empty = calibration.iou(pred, truth)
with open("iou.json", "w") as fh:
    json.dump({"iou": value, "empty_union": empty, "predicted_cells": int(pred.sum()),
               "truth_cells": int(truth.sum())}, fh, sort_keys=True)
print(f"iou {value:.6f}")
