#!/usr/bin/env python3
"""One flood event on the bundled 32x32 synthetic DEM, then a rerun with a new
infiltration rate to show which steps are reused."""
import json

from common import fetch, parser, payload, submit

args = parser(__doc__).parse_args()
precip = {"synthetic": {"steps": 12, "seed": 1, "peak": 0.06}}

first = submit(args.root, args.out, "single", payload("flood-single", precipitation=precip))
print(f"{first['run_id']}: {first['state']}  steps {first['steps']}")
budget = json.loads(fetch(args.root, first["run_id"], "budget.json",
                          f"{args.out}/single/budget.json").read_text())
fetch(args.root, first["run_id"], "depth.asc", f"{args.out}/single/depth.asc")
closure = abs(budget["precip_in"] - budget["stored"] - budget["infiltrated"] - budget["outflow"])
print(f"water budget: in {budget['precip_in']:.6g}, stored {budget['stored']:.6g}, "
      f"infiltrated {budget['infiltrated']:.6g}, outflow {budget['outflow']:.6g}, "
      f"relative closure {closure / budget['precip_in']:.2e}")

again = submit(args.root, args.out, "single-rerun",
               payload("flood-single", precipitation=precip, infiltration_rate=0.002))
print(f"{again['run_id']}: {again['state']}  step states {again['step_states']}")
