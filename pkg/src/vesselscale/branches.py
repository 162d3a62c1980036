"""Branch labeling of a curve skeleton, radius estimation and branch territories.

All distances are physical (mm): voxel index differences scaled by spacing.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as graph_components
from scipy.spatial import cKDTree

from .skeleton import Skeleton, SurfaceSet
from .volume import LABELS, Volume, foreground_coords, linear_index

DEFAULT_M = 8

# the 13 offsets with a positive first non-zero component; each undirected
# 26-adjacency is generated once
_HALF_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dz in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
        if (dz, dy, dx) > (0, 0, 0)
    ],
    dtype=np.int64,
)


class EmptySkeletonError(ValueError):
    """Raised when there is no vasculature to decompose."""


@dataclass(frozen=True, eq=False)
class LabeledSkeleton:
    voxels: np.ndarray  # (q, 3), sorted by linear index
    labels: np.ndarray  # (q,), branch ids 1..n_branches
    n_branches: int
    dims: tuple


@dataclass(frozen=True, eq=False)
class LocalRadiusMap:
    voxels: np.ndarray
    radii: np.ndarray  # mm
    m: int


@dataclass(frozen=True, eq=False)
class BranchTable:
    ids: np.ndarray
    radius_mm: np.ndarray
    skeleton_voxels: np.ndarray
    reconstructed_voxels: np.ndarray

    CSV_HEADER = ("branch_id", "radius_mm", "skeleton_voxels", "reconstructed_voxels")

    def __len__(self):
        return len(self.ids)

    def radius_of(self, branch_id: int) -> float:
        return float(self.radius_mm[int(branch_id) - 1])

    def with_reconstructed_counts(self, branch_labels: Volume) -> "BranchTable":
        counts = np.bincount(branch_labels.flat(), minlength=len(self.ids) + 1)[1:]
        if len(counts) > len(self.ids):
            raise ValueError("label volume contains ids missing from the branch table")
        return BranchTable(self.ids, self.radius_mm, self.skeleton_voxels, counts.astype(np.int64))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        for row in zip(self.ids, self.radius_mm, self.skeleton_voxels, self.reconstructed_voxels):
            writer.writerow([int(row[0]), repr(float(row[1])), int(row[2]), int(row[3])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BranchTable":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != cls.CSV_HEADER:
            raise ValueError(f"unexpected branch table header {reader.fieldnames}")
        rows = list(reader)
        return cls(
            np.array([int(r["branch_id"]) for r in rows], dtype=np.int64),
            np.array([float(r["radius_mm"]) for r in rows], dtype=np.float64),
            np.array([int(r["skeleton_voxels"]) for r in rows], dtype=np.int64),
            np.array([int(r["reconstructed_voxels"]) for r in rows], dtype=np.int64),
        )


def squared_distances(a, b, spacing) -> np.ndarray:
    """Physical squared distance between matching rows of two index arrays.

    Index differences are taken in integers and scaled afterwards, summing
    x, y, z in that order; every exact comparison in the package uses this.
    """
    d = (np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)) * np.asarray(spacing, dtype=np.float64)
    d = d * d
    return (d[..., 0] + d[..., 1]) + d[..., 2]


def _adjacency_pairs(voxels, dims):
    """Index pairs (i, j) of 26-adjacent voxels; ``voxels`` sorted by linear index."""
    lin = linear_index(voxels, dims)
    rows, cols = [], []
    for off in _HALF_OFFSETS:
        nbr = voxels + off
        ok = np.all((nbr >= 0) & (nbr < np.asarray(dims)), axis=1)
        src = np.flatnonzero(ok)
        nlin = linear_index(nbr[ok], dims)
        pos = np.searchsorted(lin, nlin)
        pos = np.minimum(pos, len(lin) - 1)
        hit = lin[pos] == nlin
        rows.append(src[hit])
        cols.append(pos[hit])
    return np.concatenate(rows), np.concatenate(cols)


def _components(n, rows, cols, keep):
    """Component id per node of the subgraph induced by ``keep`` (-1 elsewhere)."""
    sel = keep[rows] & keep[cols]
    graph = coo_matrix((np.ones(sel.sum(), dtype=np.int8), (rows[sel], cols[sel])), shape=(n, n))
    _, comp = graph_components(graph, directed=False)
    return np.where(keep, comp, -1)


def label_branches(skel: Skeleton) -> LabeledSkeleton:
    """Split the skeleton graph at junction voxels (26-degree >= 3).

    Each component left after removing junctions is a branch; ids follow the
    ascending smallest linear index.  Junction voxels then join the adjacent
    branch with the lowest id, propagating through clusters of junctions.  A
    junction cluster touching no branch voxel becomes a branch itself.
    """
    vox = np.asarray(skel.voxels, dtype=np.int64)
    q = len(vox)
    if q == 0:
        raise EmptySkeletonError("empty skeleton: no vasculature to decompose")
    rows, cols = _adjacency_pairs(vox, skel.dims)
    degree = np.bincount(rows, minlength=q) + np.bincount(cols, minlength=q)
    junction = degree >= 3

    plain = _components(q, rows, cols, ~junction)
    jcomp = _components(q, rows, cols, junction)
    # junction clusters with no neighbouring branch voxel
    touching = np.zeros(q, dtype=bool)
    cross = junction[rows] != junction[cols]
    jside = np.where(junction[rows[cross]], rows[cross], cols[cross])
    touching[np.unique(jcomp[jside])] = True
    orphan = junction & ~touching[np.maximum(jcomp, 0)]

    seed = np.full(q, -1, dtype=np.int64)
    seed[~junction] = plain[~junction]
    if orphan.any():
        seed[orphan] = plain.max() + 1 + jcomp[orphan]
    seeded = seed >= 0
    groups = np.unique(seed[seeded])
    # voxels are in linear order, so the first position of a group is its smallest index
    first = np.full(groups.size, q, dtype=np.int64)
    np.minimum.at(first, np.searchsorted(groups, seed[seeded]), np.flatnonzero(seeded))
    rank = np.empty(groups.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, groups.size + 1)

    labels = np.zeros(q, dtype=np.int64)
    labels[seeded] = rank[np.searchsorted(groups, seed[seeded])]

    big = np.iinfo(np.int64).max
    while True:
        pending = labels == 0
        if not pending.any():
            break
        best = np.full(q, big, dtype=np.int64)
        for a, b in ((rows, cols), (cols, rows)):
            sel = pending[a] & (labels[b] > 0)
            np.minimum.at(best, a[sel], labels[b[sel]])
        update = pending & (best < big)
        if not update.any():  # unreachable: every junction cluster is seeded or touching
            raise RuntimeError("junction voxels could not be assigned to a branch")
        labels[update] = best[update]
    return LabeledSkeleton(vox, labels, int(groups.size), skel.dims)


def local_radius(skel: Skeleton, surface: SurfaceSet, spacing, m: int = DEFAULT_M) -> LocalRadiusMap:
    """Largest of the distances to the ``m`` nearest surface voxels, per skeleton voxel."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    surf = np.asarray(surface.voxels, dtype=np.int64)
    if len(surf) == 0:
        raise ValueError("empty surface")
    vox = np.asarray(skel.voxels, dtype=np.int64)
    if len(vox) == 0:
        return LocalRadiusMap(vox, np.zeros(0), m)
    sp = np.asarray(spacing, dtype=np.float64)
    k = min(m, len(surf))
    tree = cKDTree(surf * sp)
    _, idx = tree.query(vox * sp, k=k)
    idx = idx.reshape(len(vox), k)
    d2 = squared_distances(vox[:, None, :], surf[idx], sp)
    return LocalRadiusMap(vox, np.sqrt(d2.max(axis=1)), m)


def branch_radius(ls: LabeledSkeleton, lr: LocalRadiusMap) -> BranchTable:
    """Median local radius per branch (mean of the two middle values for even counts)."""
    if len(ls.voxels) != len(lr.voxels) or not np.array_equal(ls.voxels, lr.voxels):
        raise ValueError("labeled skeleton and radius map cover different voxels")
    ids = np.arange(1, ls.n_branches + 1, dtype=np.int64)
    radii = np.array([np.median(lr.radii[ls.labels == j]) for j in ids], dtype=np.float64)
    counts = np.bincount(ls.labels, minlength=ls.n_branches + 1)[1:].astype(np.int64)
    return BranchTable(ids, radii, counts, np.zeros_like(counts))


def reconstruct_branches(mask: Volume, ls: LabeledSkeleton, spacing=None, candidates: int = 8) -> Volume:
    """Give every foreground voxel the id of its nearest labeled skeleton voxel.

    Exact: ties on distance go to the smaller branch id, then to the skeleton
    voxel with the smaller linear index.  A k-d tree proposes ``candidates``
    neighbours; rows whose candidate list might hide further ties fall back
    to a radius query.
    """
    sp = np.asarray(mask.spacing if spacing is None else spacing, dtype=np.float64)
    fg = mask.data != 0
    vox = np.asarray(ls.voxels, dtype=np.int64)
    out = np.zeros(mask.dims, dtype=np.uint32)
    if len(vox) and not fg[tuple(vox.T)].all():
        raise ValueError("skeleton voxel outside the mask foreground")
    pts = foreground_coords(fg)
    if len(pts) == 0:
        return Volume(out, mask.spacing, LABELS)
    if len(vox) == 0:
        raise EmptySkeletonError("no labeled skeleton voxels to propagate")
    labels = np.asarray(ls.labels, dtype=np.int64)
    # lexicographic tie key: (branch id, linear index)
    key = labels * (int(np.prod(mask.dims)) + 1) + linear_index(vox, mask.dims)

    k = min(candidates, len(vox))
    tree = cKDTree(vox * sp)
    _, idx = tree.query(pts * sp, k=k)
    idx = idx.reshape(len(pts), k)
    d2 = squared_distances(pts[:, None, :], vox[idx], sp)
    best = idx[np.arange(len(pts)), _pick(d2, key[idx])]

    if k < len(vox):
        dmin = d2.min(axis=1)
        # the k-th candidate being (nearly) as close as the best may hide ties
        unsure = np.flatnonzero(d2.max(axis=1) <= dmin * (1 + 1e-9))
        for i in unsure:
            near = np.array(tree.query_ball_point(pts[i] * sp, np.sqrt(dmin[i]) * (1 + 1e-6) + 1e-9))
            dd = squared_distances(pts[i], vox[near], sp)
            best[i] = near[_pick(dd[None, :], key[near][None, :])[0]]

    out[tuple(pts.T)] = labels[best]
    return Volume(out, mask.spacing, LABELS)


def _pick(d2, keys):
    """Row-wise column of the minimum (distance, key)."""
    dmin = d2.min(axis=1, keepdims=True)
    return np.where(d2 == dmin, keys, np.iinfo(np.int64).max).argmin(axis=1)
