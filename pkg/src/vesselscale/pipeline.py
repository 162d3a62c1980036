"""Mask -> surface/skeleton -> branches -> radii -> scale masks."""
from __future__ import annotations

from dataclasses import dataclass

from .branches import (
    DEFAULT_M,
    BranchTable,
    LabeledSkeleton,
    LocalRadiusMap,
    branch_radius,
    label_branches,
    local_radius,
    reconstruct_branches,
)
from .scales import ScaleDecomposition, assign_scales, compute_thresholds, radius_statistics
from .skeleton import Skeleton, SurfaceSet, extract_surface, skeletonize
from .volume import MASK, Volume

DEFAULT_SCALES = 3


@dataclass(frozen=True, eq=False)
class Decomposition:
    surface: SurfaceSet
    skeleton: Skeleton
    labeled: LabeledSkeleton
    local_radii: LocalRadiusMap
    table: BranchTable
    branch_labels: Volume
    scales: ScaleDecomposition
    stats: dict


def decompose(mask: Volume, m: int = DEFAULT_M, n_scales: int = DEFAULT_SCALES) -> Decomposition:
    if mask.kind != MASK:
        raise ValueError("decompose expects a binary mask")
    surface = extract_surface(mask)
    skel = skeletonize(mask)
    labeled = label_branches(skel)
    radii = local_radius(skel, surface, mask.spacing, m)
    table = branch_radius(labeled, radii)
    labels = reconstruct_branches(mask, labeled, mask.spacing)
    table = table.with_reconstructed_counts(labels)
    thresholds = compute_thresholds(table.radius_mm, n_scales)
    scales = assign_scales(labels, table, thresholds)
    return Decomposition(surface, skel, labeled, radii, table, labels, scales, radius_statistics(table))
