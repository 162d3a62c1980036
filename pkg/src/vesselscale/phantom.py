"""Synthetic tubular trees with exact ground truth.

Voxel ``(i, j, k)`` has its centre at ``(i sx, j sy, k sz)`` mm.  A voxel is
foreground when its centre lies within ``radius`` of some segment (capsule
rasterization); its ground-truth label is the id of the closest containing
segment, ties going to the lower id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .branches import BranchTable
from .volume import LABELS, MASK, Volume


@dataclass(frozen=True)
class Segment:
    start: tuple
    end: tuple
    radius: float
    branch_id: int


@dataclass(frozen=True)
class PhantomSpec:
    segments: tuple
    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"bad dims {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"bad spacing {self.spacing}")
        lo = -0.5 * np.asarray(self.spacing)
        hi = (np.asarray(self.dims) - 0.5) * np.asarray(self.spacing)
        radius_of = {}
        for seg in self.segments:
            if not seg.radius > 0:
                raise ValueError(f"segment radius must be positive, got {seg.radius}")
            for p in (seg.start, seg.end):
                p = np.asarray(p, dtype=float)
                if p.shape != (3,) or np.any(p < lo) or np.any(p > hi):
                    raise ValueError(f"segment endpoint {tuple(p)} outside the volume extent")
            if radius_of.setdefault(seg.branch_id, seg.radius) != seg.radius:
                raise ValueError(f"branch {seg.branch_id} has segments with different radii")
        ids = sorted(radius_of)
        if ids and ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"branch ids must be contiguous from 1, got {ids}")

    @property
    def n_branches(self) -> int:
        return len({s.branch_id for s in self.segments})

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        segs = [
            Segment(tuple(s["start"]), tuple(s["end"]), float(s["radius_mm"]), int(s["id"]))
            for s in d["segments"]
        ]
        return cls(segs, tuple(d["dims"]), tuple(d.get("spacing_mm", (1.0, 1.0, 1.0))))

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing),
            "segments": [
                {"start": list(s.start), "end": list(s.end), "radius_mm": s.radius, "id": s.branch_id}
                for s in self.segments
            ],
        }


def _segment_distance(px, py, pz, a, b):
    ab = b - a
    ll = float(ab @ ab)
    dx, dy, dz = px - a[0], py - a[1], pz - a[2]
    if ll == 0:
        t = 0.0
    else:
        t = np.clip((dx * ab[0] + dy * ab[1] + dz * ab[2]) / ll, 0.0, 1.0)
    ex, ey, ez = dx - t * ab[0], dy - t * ab[1], dz - t * ab[2]
    return np.sqrt(ex * ex + ey * ey + ez * ez)


def generate_tree(spec: PhantomSpec) -> tuple[Volume, Volume, BranchTable]:
    """Rasterize ``spec`` into ``(mask, ground-truth labels, ground-truth table)``.

    The table carries the declared radii; its skeleton counts are zero.
    """
    if not spec.segments:
        raise ValueError("phantom spec has no segments")
    dims = np.asarray(spec.dims)
    sp = np.asarray(spec.spacing)
    best = np.full(spec.dims, np.inf)
    labels = np.zeros(spec.dims, dtype=np.uint32)
    for seg in sorted(spec.segments, key=lambda s: s.branch_id):
        a = np.asarray(seg.start, dtype=float)
        b = np.asarray(seg.end, dtype=float)
        lo = np.maximum(np.floor((np.minimum(a, b) - seg.radius) / sp).astype(int), 0)
        hi = np.minimum(np.ceil((np.maximum(a, b) + seg.radius) / sp).astype(int) + 1, dims)
        if np.any(hi <= lo):
            continue
        box = tuple(slice(l, h) for l, h in zip(lo, hi))
        px, py, pz = np.meshgrid(
            *(np.arange(l, h) * s for l, h, s in zip(lo, hi, sp)), indexing="ij", sparse=True
        )
        d = _segment_distance(px, py, pz, a, b)
        # segments are visited in id order, so a strict < keeps the lower id on ties
        take = (d <= seg.radius) & (d < best[box])
        best[box] = np.where(take, d, best[box])
        labels[box] = np.where(take, seg.branch_id, labels[box])
    mask = labels != 0
    if not mask.any():
        raise ValueError("phantom spec produced an empty mask")
    n_b = spec.n_branches
    radii = np.zeros(n_b)
    for seg in spec.segments:
        radii[seg.branch_id - 1] = seg.radius
    counts = np.bincount(labels.ravel(), minlength=n_b + 1)[1:].astype(np.int64)
    table = BranchTable(np.arange(1, n_b + 1), radii, np.zeros(n_b, dtype=np.int64), counts)
    return Volume(mask, spec.spacing, MASK), Volume(labels, spec.spacing, LABELS), table


def cylinder(radius: float, length: int, pad: int = 3, spacing=(1.0, 1.0, 1.0)) -> tuple[Volume, tuple]:
    """Straight z-aligned cylinder (flat ends) with its axis on voxel centres.

    Returns the mask and the axis ``(x, y)`` index.
    """
    half = int(np.ceil(radius / min(spacing[:2]))) + pad
    n = 2 * half + 1
    x, y, z = np.ogrid[:n, :n, : length + 2 * pad]
    r2 = ((x - half) * spacing[0]) ** 2 + ((y - half) * spacing[1]) ** 2
    data = (r2 <= radius * radius) & (z >= pad) & (z < pad + length)
    return Volume(data, spacing, MASK), (half, half)


def y_tree(parent_radius=6.0, child_radius=2.0, parent_length=40.0, child_length=30.0,
           angle_deg=40.0, margin=4.0) -> PhantomSpec:
    """Parent vessel along +z splitting into two children in the x-z plane."""
    theta = np.deg2rad(angle_deg)
    spread = child_length * np.sin(theta)
    cx = margin + parent_radius + spread
    z0 = margin + parent_radius
    fork = (cx, cx, z0 + parent_length)
    dz = child_length * np.cos(theta)
    left = (cx - spread, cx, fork[2] + dz)
    right = (cx + spread, cx, fork[2] + dz)
    nx = int(np.ceil(2 * cx)) + 1
    nz = int(np.ceil(fork[2] + dz + child_radius + margin)) + 1
    segs = [
        Segment((cx, cx, z0), fork, parent_radius, 1),
        Segment(fork, left, child_radius, 2),
        Segment(fork, right, child_radius, 3),
    ]
    return PhantomSpec(segs, (nx, nx, nz))


def random_tree(rng: np.random.Generator, dims=(96, 96, 96), depth: int = 3,
                root_radius=(3.0, 6.0), shrink=(0.55, 0.85), length=(12.0, 30.0),
                min_radius: float = 1.0) -> PhantomSpec:
    """Random binary branching tree grown from near the z = 0 face.

    Children start at their parent's end point, so the mask is connected.
    Every segment gets its own branch id.
    """
    dims = np.asarray(dims, dtype=float)
    r0 = rng.uniform(*root_radius)
    margin = r0 + 1.0
    lo, hi = np.full(3, margin), dims - 1 - margin
    start = np.array([rng.uniform(lo[0] + 0.3 * (hi[0] - lo[0]), hi[0] - 0.3 * (hi[0] - lo[0])),
                      rng.uniform(lo[1] + 0.3 * (hi[1] - lo[1]), hi[1] - 0.3 * (hi[1] - lo[1])),
                      lo[2]])
    segs = []

    def grow(p0, direction, radius, level):
        seg_len = rng.uniform(*length)
        p1 = np.clip(p0 + seg_len * direction, lo, hi)
        if np.linalg.norm(p1 - p0) < 2.0:
            return
        segs.append(Segment(tuple(p0), tuple(p1), float(radius), len(segs) + 1))
        if level >= depth:
            return
        for _ in range(2):
            r = radius * rng.uniform(*shrink)
            if r < min_radius:
                continue
            d = direction + rng.normal(scale=0.8, size=3)
            d /= np.linalg.norm(d)
            grow(p1, d, r, level + 1)

    grow(start, np.array([0.0, 0.0, 1.0]), r0, 0)
    return PhantomSpec(segs, tuple(int(n) for n in dims))


def separated_tubes(radii, length: float = 30.0, gap_factor: float = 4.5) -> PhantomSpec:
    """Parallel z-aligned capsules on a row along x, gaps wider than 4 max radii."""
    rmax = max(radii)
    gap = gap_factor * rmax
    segs = []
    x = rmax + 3.0
    for j, r in enumerate(radii, start=1):
        segs.append(Segment((x, rmax + 3.0, rmax + 3.0), (x, rmax + 3.0, rmax + 3.0 + length), float(r), j))
        x += 2 * rmax + gap
    dims = (int(np.ceil(x - gap + rmax + 3.0)) + 1, int(np.ceil(2 * rmax + 6.0)) + 1,
            int(np.ceil(length + 2 * rmax + 6.0)) + 1)
    return PhantomSpec(segs, dims)
