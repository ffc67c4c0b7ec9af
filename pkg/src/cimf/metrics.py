"""Ensemble risk metrics over aligned depth rasters.

All threshold comparisons are inclusive (``value >= threshold``). A cell
that is nodata in any member is nodata in probability and maximum
outputs; :func:`extent_mask` maps nodata to ``False``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RasterError
from .raster import Raster, require_aligned

METRICS = ("exceedance_probability", "days_above_threshold", "max_depth")
REDUCTIONS = ("max_over_time", "count_days_over_threshold")
DEFAULT_THRESHOLD = 0.15


@dataclass
class EnsembleStack:
    members: list
    member_labels: list

    def __post_init__(self):
        if not self.members:
            raise RasterError("ensemble stack needs at least one member")
        if len(self.member_labels) != len(self.members):
            raise RasterError("one label per member required")
        if len(set(map(str, self.member_labels))) != len(self.member_labels):
            raise RasterError("member labels must be unique")
        require_aligned(self.members)

    @classmethod
    def of(cls, members, labels=None):
        members = list(members)
        return cls(members, list(labels) if labels is not None else list(range(len(members))))

    def __len__(self):
        return len(self.members)

    def cube(self) -> tuple[np.ndarray, np.ndarray]:
        """(members x rows x cols) values and the any-member nodata mask."""
        data = np.stack([m.values for m in self.members])
        nodata = np.any(data == self.members[0].nodata, axis=0)
        return data, nodata


@dataclass(frozen=True)
class MetricSpec:
    metric: str = "exceedance_probability"
    threshold: float = DEFAULT_THRESHOLD
    per_member_reduction: str = "max_over_time"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.per_member_reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.per_member_reduction!r}")
        if not self.threshold >= 0:
            raise ValueError("threshold must be >= 0")


def _as_stack(stack) -> EnsembleStack:
    return stack if isinstance(stack, EnsembleStack) else EnsembleStack.of(stack)


def exceedance_probability(stack, threshold: float = DEFAULT_THRESHOLD) -> Raster:
    stack = _as_stack(stack)
    data, nodata = stack.cube()
    counts = np.count_nonzero(data >= threshold, axis=0)
    prob = counts / len(stack)
    ref = stack.members[0]
    return ref.like(np.where(nodata, ref.nodata, prob))


def max_depth(stack) -> Raster:
    stack = _as_stack(stack)
    data, nodata = stack.cube()
    ref = stack.members[0]
    return ref.like(np.where(nodata, ref.nodata, data.max(axis=0)))


def days_above_threshold(series, threshold: float = DEFAULT_THRESHOLD) -> Raster:
    """Per-cell count of time steps with depth at or above ``threshold``.

    Cells that are nodata on any day stay nodata.
    """
    series = list(series)
    if not series:
        raise RasterError("empty time series")
    require_aligned(series)
    data = np.stack([r.values for r in series])
    ref = series[0]
    nodata = np.any(data == ref.nodata, axis=0)
    counts = np.count_nonzero(data >= threshold, axis=0).astype(np.float64)
    return ref.like(np.where(nodata, ref.nodata, counts))


def extent_mask(raster: Raster, threshold: float = DEFAULT_THRESHOLD) -> tuple[np.ndarray, int]:
    """Boolean flood extent and the number of nodata cells excluded from it."""
    nodata = raster.nodata_mask
    mask = (raster.values >= threshold) & ~nodata
    return mask, int(np.count_nonzero(nodata))


def reduce_member(series, spec: MetricSpec) -> Raster:
    """Collapse one member's time series to a single raster."""
    series = list(series)
    if len(series) == 1 and spec.per_member_reduction == "max_over_time":
        return series[0]
    if spec.per_member_reduction == "max_over_time":
        return max_depth(EnsembleStack.of(series))
    return days_above_threshold(series, spec.threshold)


def compute(spec: MetricSpec, member_series, labels=None) -> Raster:
    """Evaluate ``spec`` over members given as lists of per-step rasters.

    ``days_above_threshold`` is computed within each member and then
    averaged over members.
    """
    member_series = [list(s) for s in member_series]
    if spec.metric == "days_above_threshold":
        counts = [days_above_threshold(s, spec.threshold) for s in member_series]
        stack = EnsembleStack.of(counts, labels)
        data, nodata = stack.cube()
        ref = counts[0]
        return ref.like(np.where(nodata, ref.nodata, data.mean(axis=0)))
    reduced = [reduce_member(s, spec) for s in member_series]
    stack = EnsembleStack.of(reduced, labels)
    if spec.metric == "max_depth":
        return max_depth(stack)
    return exceedance_probability(stack, spec.threshold)
