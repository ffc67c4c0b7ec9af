#!/usr/bin/env python3
"""Calibration analogue: synthesise a ground-truth extent with the toy model
at known parameters, then let the calibration workflow search for them."""
import json
import time

from cimf.flood import FloodParams, simulate, synthetic_dem, synthetic_precip
from cimf.metrics import extent_mask
from cimf.raster import dumps
from common import fetch, parser, payload, submit

p = parser(__doc__)
p.add_argument("--iterations", type=int, default=100)
p.add_argument("--seed", type=int, default=7)
p.add_argument("--size", type=int, default=64)
p.add_argument("--batch-width", type=int, default=4)
args = p.parse_args()

theta = {"infiltration_rate": 0.012, "routing_coefficient": 0.8}
cell = 30.0
bbox = [0.0, 0.0, args.size * cell, args.size * cell]
dem = synthetic_dem(args.size, seed=2, cellsize=cell)
rates = synthetic_precip(12, seed=3, peak=0.06)
depth, _ = simulate(dem, rates, FloodParams(**theta))
truth = dem.like(extent_mask(depth, 0.15)[0].astype(float))

body = payload("calibration", bbox=bbox, dem={"synthetic": {"size": args.size, "seed": 2}},
               precipitation={"synthetic": {"steps": 12, "seed": 3, "peak": 0.06}},
               ground_truth={"content": dumps(truth)}, extent_threshold=0.15,
               calibration={"search_params": [
                   {"name": "infiltration_rate", "lower": 0.0, "upper": 0.02},
                   {"name": "routing_coefficient", "lower": 0.1, "upper": 1.0}],
                   "iterations": args.iterations, "seed": args.seed,
                   "batch_width": args.batch_width})
t0 = time.monotonic()
res = submit(args.root, args.out, "calibration", body)
print(f"{res['run_id']}: {res['state']} in {time.monotonic() - t0:.1f} s")
report = json.loads(fetch(args.root, res["run_id"], "calibration_report.json",
                          f"{args.out}/calibration/report.json").read_text())
print(f"IoU at defaults {report['initial_iou']:.3f} -> best {report['best_iou']:.3f} "
      f"(iteration {report['best_iteration']})")
print(f"true parameters {theta}; best found {report['best_params']}")
