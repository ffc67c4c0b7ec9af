#!/usr/bin/env python3
"""Climatology analogue: one member per year 2001-2021, each with its own
synthetic December rainfall, reduced to the per-cell probability of
exceeding 15 cm."""
import time

from cimf.flood import synthetic_precip
from cimf.raster import read
from common import fetch, parser, payload, submit

p = parser(__doc__)
p.add_argument("--threshold", type=float, default=0.15)
args = p.parse_args()

years = list(range(2001, 2022))
series = {str(y): synthetic_precip(12, seed=11, peak=0.08, label=str(y)) for y in years}
body = payload("flood-climatology", members=years, precipitation={"series": series},
               extent_threshold=args.threshold, metric="exceedance_probability")
t0 = time.monotonic()
res = submit(args.root, args.out, "climatology", body)
print(f"{res['run_id']}: {res['state']} in {time.monotonic() - t0:.1f} s; steps {res['steps']}")
path = fetch(args.root, res["run_id"], "metric.asc", f"{args.out}/climatology/metric.asc")
prob = read(path)
valid = prob.values[~prob.nodata_mask]
print(f"cells with P(depth >= {args.threshold} m) > 0: {(valid > 0).sum()} / {valid.size}; "
      f"max probability {valid.max():.3f}")
