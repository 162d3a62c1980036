"""Per-volume radius thresholds and scale masks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .branches import BranchTable
from .volume import MASK, Volume

QUARTILES = "quartile"
EVEN_QUANTILES = "even-quantile"
ESTIMATOR = "linear interpolation between order statistics, h = (n - 1) p"


@dataclass(frozen=True)
class ScaleThresholds:
    values: tuple
    n_scales: int
    estimator: str


@dataclass(frozen=True, eq=False)
class ScaleDecomposition:
    masks: list  # Volume per scale, index 0 = smallest radii
    thresholds: ScaleThresholds
    branch_scales: np.ndarray  # scale (1..S) per branch id, position j - 1


def quantile(values, p: float) -> float:
    """Linear interpolation between order statistics at ``h = (n - 1) p``."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise ValueError("quantile of an empty sample")
    h = (x.size - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def compute_thresholds(radii, n_scales: int = 3) -> ScaleThresholds:
    """``S - 1`` ascending thresholds: (Q1, Q3) for three scales, k/S quantiles otherwise."""
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size == 0:
        raise ValueError("no branch radii to threshold")
    if n_scales < 2:
        raise ValueError(f"need at least 2 scales, got {n_scales}")
    if n_scales == 3:
        probs, tag = (0.25, 0.75), QUARTILES
    else:
        probs, tag = tuple(k / n_scales for k in range(1, n_scales)), EVEN_QUANTILES
    return ScaleThresholds(tuple(quantile(radii, p) for p in probs), n_scales, tag)


def scale_of(radius: float, thresholds: ScaleThresholds) -> int:
    """1 + number of thresholds strictly below ``radius``."""
    return 1 + sum(t < radius for t in thresholds.values)


def assign_scales(branch_labels: Volume, table: BranchTable, thresholds: ScaleThresholds) -> ScaleDecomposition:
    present = np.unique(branch_labels.data)
    present = present[present != 0]
    known = set(int(j) for j in table.ids)
    missing = [int(j) for j in present if int(j) not in known]
    if missing:
        raise ValueError(f"branch ids {missing} missing from the branch table")
    lut = np.zeros(int(max(table.ids.max(initial=0), present.max(initial=0))) + 1, dtype=np.int64)
    scales = np.array([scale_of(r, thresholds) for r in table.radius_mm], dtype=np.int64)
    lut[table.ids] = scales
    per_voxel = lut[branch_labels.data]
    masks = [
        Volume(per_voxel == s, branch_labels.spacing, MASK) for s in range(1, thresholds.n_scales + 1)
    ]
    return ScaleDecomposition(masks, thresholds, scales)


def radius_statistics(table: BranchTable) -> dict:
    """n_b, min, Q1, median, Q3 and max of the branch radii."""
    r = np.asarray(table.radius_mm, dtype=np.float64)
    if r.size == 0:
        return {"n_b": 0, "min": None, "q1": None, "median": None, "q3": None, "max": None}
    return {
        "n_b": int(r.size),
        "min": float(r.min()),
        "q1": quantile(r, 0.25),
        "median": quantile(r, 0.5),
        "q3": quantile(r, 0.75),
        "max": float(r.max()),
    }


STATS_FIELDS = ("volume", "n_b", "min", "q1", "median", "q3", "max")


def stats_row(name: str, stats: dict) -> list:
    """CSV cells in ``STATS_FIELDS`` order; missing values are empty."""
    return [name] + ["" if stats[k] is None else repr(stats[k]) for k in STATS_FIELDS[1:]]
