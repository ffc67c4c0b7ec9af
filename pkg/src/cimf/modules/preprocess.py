#!/usr/bin/env python3
"""Select one member's precipitation series and write precip.csv."""
import json
import sys

from cimf import flood

p = json.load(open("cimf_params.json"))
raw = json.load(open("precip_raw.json"))
member = p["member"]

if "series" in raw:
    series = raw["series"]
    if member in series:
        rates = series[member]
    elif member == "" and len(series) == 1:
        rates = next(iter(series.values()))
    else:
        sys.exit(f"no precipitation series for member {member!r}")
else:
    syn = raw["synthetic"]
    rates = flood.synthetic_precip(syn["steps"], syn["seed"], syn["peak"], label=member)

rates = [r * p["scale"] for r in rates]
with open("precip.csv", "w") as fh:
    fh.write(flood.write_precip(rates))
print(f"member {member!r}: {len(rates)} steps, total {sum(rates):.6g} m/h")
