#!/usr/bin/env python3
"""Forecast analogue: a 10-member ensemble. With --break-member one member is
given an invalid rainfall series to show the fan-in over surviving members."""
import json

from cimf.flood import synthetic_precip
from cimf.metrics import extent_mask
from cimf.raster import read
from common import fetch, parser, payload, submit

p = parser(__doc__)
p.add_argument("--members", type=int, default=10)
p.add_argument("--break-member", default=None, help="label of a member to corrupt, e.g. m3")
args = p.parse_args()

labels = [f"m{i}" for i in range(args.members)]
series = {m: synthetic_precip(12, seed=21, peak=0.09, label=m) for m in labels}
if args.break_member:
    series[args.break_member] = [0.01, -0.02, 0.01]
res = submit(args.root, args.out, "forecast",
             payload("flood-forecast", members=labels, precipitation={"series": series}))
print(f"{res['run_id']}: {res['state']}; steps {res['steps']}")
meta = json.loads(fetch(args.root, res["run_id"], "metric_meta.json",
                        f"{args.out}/forecast/metric_meta.json").read_text())
print(f"fan-in used {meta['n_members']}/{meta['n_expected']} members; failed: {meta['failed']}")
prob = read(fetch(args.root, res["run_id"], "metric.asc", f"{args.out}/forecast/metric.asc"))
mask, _ = extent_mask(prob, 0.15)
print(f"cells with exceedance probability >= 0.15: {int(mask.sum())}")
