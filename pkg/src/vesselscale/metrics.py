"""Overlap, connectivity and surface-distance metrics for binary masks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .branches import squared_distances
from .skeleton import thin_array
from .volume import Volume, foreground_coords

SKELETONIZER = "vesselscale directional thinning (U,D,N,S,E,W), 26/6 topology, endpoints kept"


@dataclass(frozen=True)
class MetricsReport:
    dsc: float
    jacc: float
    cldsc: float
    hd_mm: float  # math.inf when exactly one mask is empty

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.hd_mm):
            d["hd_mm"] = "inf"
        return d


def _pair(gt: Volume, pred: Volume):
    if gt.dims != pred.dims:
        raise ValueError(f"dims mismatch: {gt.dims} vs {pred.dims}")
    return gt.data != 0, pred.data != 0


def dice(gt: Volume, pred: Volume) -> float:
    a, b = _pair(gt, pred)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def jaccard(gt: Volume, pred: Volume) -> float:
    a, b = _pair(gt, pred)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def cl_dice(gt: Volume, pred: Volume) -> float:
    """Harmonic mean of skeleton-based topology precision and sensitivity."""
    a, b = _pair(gt, pred)
    if not a.any() and not b.any():
        return 1.0
    skel_a = thin_array(a) != 0
    skel_b = thin_array(b) != 0
    if not skel_a.any() or not skel_b.any():
        return 0.0
    tprec = np.count_nonzero(skel_b & a) / np.count_nonzero(skel_b)
    tsens = np.count_nonzero(skel_a & b) / np.count_nonzero(skel_a)
    if tprec + tsens == 0:
        return 0.0
    return float(2 * tprec * tsens / (tprec + tsens))


def directed_hausdorff(a, b, spacing) -> float:
    """max over voxels of ``a`` of the distance to the nearest voxel of ``b`` (mm)."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    # nearest b-voxels of a-voxels lie inside the joint bounding box
    box = ndimage.find_objects((a | b).astype(np.uint8))[0]
    a, b = a[box], b[box]
    _, feat = ndimage.distance_transform_edt(~b, sampling=spacing, return_indices=True)
    pts = foreground_coords(a)
    nearest = feat[:, pts[:, 0], pts[:, 1], pts[:, 2]].T
    return float(np.sqrt(squared_distances(pts, nearest, spacing).max()))


def hausdorff(gt: Volume, pred: Volume, spacing=None) -> float:
    """Symmetric Hausdorff distance between voxel centres in mm.

    Both empty gives 0; exactly one empty gives ``math.inf``.
    """
    a, b = _pair(gt, pred)
    if spacing is None:
        if gt.spacing != pred.spacing:
            raise ValueError(f"spacing mismatch: {gt.spacing} vs {pred.spacing}")
        spacing = gt.spacing
    spacing = tuple(float(s) for s in spacing)
    has_a, has_b = a.any(), b.any()
    if not has_a and not has_b:
        return 0.0
    if not has_a or not has_b:
        return math.inf
    return max(directed_hausdorff(a, b, spacing), directed_hausdorff(b, a, spacing))


def evaluate(gt: Volume, pred: Volume, spacing=None) -> MetricsReport:
    return MetricsReport(dice(gt, pred), jaccard(gt, pred), cl_dice(gt, pred), hausdorff(gt, pred, spacing))
