"""Surface extraction and topology-preserving 3D thinning.

Thinning follows the Lee, Kashyap & Chu (1994) scheme: six directional
sub-iterations, each collecting deletable border voxels and then removing
them one at a time after re-checking.  A voxel is deletable when it is a
simple point for the (26, 6) topology and not a curve endpoint.

Simplicity is tested with topological numbers (Bertrand & Malandain)::

    T26 = #26-components of the foreground in the 26-neighbourhood minus p
    T6  = #6-components of the background in the 18-neighbourhood that are
          6-adjacent to p

and p is simple iff ``T26 == 1`` and ``T6 == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .volume import MASK, Volume, foreground_coords, structure

# sub-iteration order: U, D, N, S, E, W  (U/D = +z/-z, N/S = +y/-y, E/W = +x/-x)
DIRECTIONS = np.array(
    [[0, 0, 1], [0, 0, -1], [0, 1, 0], [0, -1, 0], [1, 0, 0], [-1, 0, 0]], dtype=np.int64
)
DIRECTION_NAMES = ("U", "D", "N", "S", "E", "W")


def _neighbourhood_tables():
    offsets = np.array(
        [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.int64
    )
    adj26 = -np.ones((27, 26), dtype=np.int64)
    adj6 = -np.ones((27, 6), dtype=np.int64)
    for a in range(27):
        k26 = k6 = 0
        for b in range(27):
            if a == b:
                continue
            d = np.abs(offsets[a] - offsets[b])
            if d.max() == 1:
                adj26[a, k26] = b
                k26 += 1
                if d.sum() == 1:
                    adj6[a, k6] = b
                    k6 += 1
    l1 = np.abs(offsets).sum(axis=1)
    return offsets, adj26, adj6, (l1 >= 1) & (l1 <= 2), l1 == 1


OFFSETS, _ADJ26, _ADJ6, _N18, _N6 = _neighbourhood_tables()
_CENTER = 13


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    voxels: np.ndarray  # (n, 3), sorted by linear index
    dims: tuple

    def __len__(self):
        return len(self.voxels)


@dataclass(frozen=True, eq=False)
class Skeleton:
    voxels: np.ndarray  # (q, 3), sorted by linear index
    dims: tuple

    def __len__(self):
        return len(self.voxels)

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.dims, dtype=np.uint8)
        if len(self.voxels):
            out[tuple(self.voxels.T)] = 1
        return out

    def to_volume(self, spacing=(1.0, 1.0, 1.0)) -> Volume:
        return Volume(self.to_array(), spacing, MASK)


def surface_array(mask) -> np.ndarray:
    """Foreground voxels with at least one background 6-neighbour."""
    fg = np.asarray(mask) != 0
    inner = ndimage.binary_erosion(fg, structure=structure(6), border_value=0)
    return fg & ~inner


def extract_surface(mask: Volume) -> SurfaceSet:
    if mask.kind != MASK:
        raise ValueError("extract_surface expects a binary mask")
    return SurfaceSet(foreground_coords(surface_array(mask.data)), mask.dims)


@njit(cache=True)
def _gather(img, x, y, z, offsets, nb):
    total = 0
    for n in range(27):
        v = img[x + offsets[n, 0], y + offsets[n, 1], z + offsets[n, 2]]
        nb[n] = 1 if v != 0 else 0
        total += nb[n]
    return total


@njit(cache=True)
def _is_simple(nb, adj26, adj6, n18, n6, seen, stack):
    # T26: 26-components of foreground in N26 \ {p}
    for n in range(27):
        seen[n] = 0
    comps = 0
    for s in range(27):
        if s == 13 or nb[s] == 0 or seen[s]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[0] = s
        seen[s] = 1
        while top >= 0:
            a = stack[top]
            top -= 1
            for k in range(26):
                b = adj26[a, k]
                if b < 0:
                    break
                if b != 13 and nb[b] == 1 and seen[b] == 0:
                    seen[b] = 1
                    top += 1
                    stack[top] = b
    if comps != 1:
        return False
    # T6: 6-components of background in N18 that touch a 6-neighbour of p
    for n in range(27):
        seen[n] = 0
    comps = 0
    for s in range(27):
        if not n6[s] or nb[s] == 1 or seen[s]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[0] = s
        seen[s] = 1
        while top >= 0:
            a = stack[top]
            top -= 1
            for k in range(6):
                b = adj6[a, k]
                if b < 0:
                    break
                if n18[b] and nb[b] == 0 and seen[b] == 0:
                    seen[b] = 1
                    top += 1
                    stack[top] = b
    return comps == 1


@njit(cache=True)
def _thin(img, pts, directions, offsets, adj26, adj6, n18, n6):
    """Thin ``img`` (zero-padded, modified in place); ``pts`` in linear order."""
    nb = np.zeros(27, dtype=np.uint8)
    seen = np.zeros(27, dtype=np.uint8)
    stack = np.zeros(32, dtype=np.int64)
    npts = pts.shape[0]
    cand = np.zeros(npts, dtype=np.int64)
    while True:
        changed = 0
        for d in range(6):
            dx = directions[d, 0]
            dy = directions[d, 1]
            dz = directions[d, 2]
            ncand = 0
            for i in range(npts):
                x = pts[i, 0]
                y = pts[i, 1]
                z = pts[i, 2]
                if img[x, y, z] == 0 or img[x + dx, y + dy, z + dz] != 0:
                    continue
                # endpoint: exactly one foreground 26-neighbour (total counts p itself)
                if _gather(img, x, y, z, offsets, nb) == 2:
                    continue
                if _is_simple(nb, adj26, adj6, n18, n6, seen, stack):
                    cand[ncand] = i
                    ncand += 1
            for c in range(ncand):
                i = cand[c]
                x = pts[i, 0]
                y = pts[i, 1]
                z = pts[i, 2]
                if _gather(img, x, y, z, offsets, nb) == 2:
                    continue
                if _is_simple(nb, adj26, adj6, n18, n6, seen, stack):
                    img[x, y, z] = 0
                    changed += 1
        if changed == 0:
            break
        k = 0
        for i in range(npts):
            if img[pts[i, 0], pts[i, 1], pts[i, 2]] != 0:
                pts[k, 0] = pts[i, 0]
                pts[k, 1] = pts[i, 1]
                pts[k, 2] = pts[i, 2]
                k += 1
        npts = k
    return npts


def thin_array(mask) -> np.ndarray:
    """Thin a boolean 3D array; returns a uint8 array of the same shape."""
    fg = np.asarray(mask) != 0
    img = np.pad(fg.astype(np.uint8), 1)
    pts = foreground_coords(img)
    if len(pts):
        pts = np.ascontiguousarray(pts, dtype=np.int64)
        _thin(img, pts, DIRECTIONS, OFFSETS, _ADJ26, _ADJ6, _N18, _N6)
    return img[1:-1, 1:-1, 1:-1].copy()


def is_simple_point(neighbourhood) -> bool:
    """Simple-point test on a 3x3x3 array indexed ``[x, y, z]``."""
    cube = np.asarray(neighbourhood) != 0
    nb = np.array([cube[dx + 1, dy + 1, dz + 1] for dx, dy, dz in OFFSETS], dtype=np.uint8)
    return bool(
        _is_simple(nb, _ADJ26, _ADJ6, _N18, _N6, np.zeros(27, np.uint8), np.zeros(32, np.int64))
    )


def skeletonize(mask: Volume) -> Skeleton:
    """Medial-axis curve skeleton of a binary mask (index space, spacing ignored)."""
    if mask.kind != MASK:
        raise ValueError("skeletonize expects a binary mask")
    return Skeleton(foreground_coords(thin_array(mask.data)), mask.dims)
