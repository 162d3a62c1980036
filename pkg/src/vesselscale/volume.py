"""Dense 3D volumes with physical spacing.

Arrays are indexed ``data[x, y, z]`` with shape ``(nx, ny, nz)``.  The linear
voxel index used everywhere for ordering and tie-breaking is x-fastest::

    index = x + nx * (y + ny * z)

which is ``np.ravel_multi_index(..., order="F")``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MASK = "mask"
LABELS = "labels"
SCALAR = "scalar"

_KIND_DTYPES = {MASK: np.uint8, LABELS: np.uint32, SCALAR: np.float32}


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable voxel grid.

    ``kind`` is one of ``"mask"`` (values in {0, 1}), ``"labels"`` (0 is
    background) or ``"scalar"``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = MASK

    def __post_init__(self):
        if self.kind not in _KIND_DTYPES:
            raise ValueError(f"unknown payload kind {self.kind!r}")
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        if self.kind == MASK:
            if data.dtype == bool:
                data = data.astype(np.uint8)
            elif not np.isin(data, (0, 1)).all():
                raise ValueError("mask payload must contain only 0 and 1")
        elif self.kind == LABELS:
            if data.size and data.min() < 0:
                raise ValueError("label payload must be non-negative")
        data = np.array(data, dtype=_KIND_DTYPES[self.kind], copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Data in x-fastest linear order."""
        return self.data.ravel(order="F")

    def foreground(self) -> np.ndarray:
        return self.data != 0

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0), kind=MASK) -> "Volume":
        flat = np.asarray(flat)
        dims = tuple(int(n) for n in dims)
        if flat.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"data length {flat.size} does not match dims {dims}")
        return cls(flat.reshape(dims, order="F"), spacing, kind)


def mask_volume(data, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(data) != 0, spacing, MASK)


def linear_index(coords, dims) -> np.ndarray:
    """x-fastest linear index of an ``(n, 3)`` coordinate array."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    return np.ravel_multi_index(coords.T, dims, order="F")


def coords_from_index(index, dims) -> np.ndarray:
    return np.stack(np.unravel_index(np.asarray(index, dtype=np.int64), dims, order="F"), axis=1)


def foreground_coords(data) -> np.ndarray:
    """Coordinates of non-zero voxels, sorted by linear index."""
    flat = np.flatnonzero(np.asarray(data).ravel(order="F"))
    return coords_from_index(flat, np.shape(data))


def resample_nearest(v: Volume, target_dims) -> Volume:
    """Nearest-neighbour resampling to ``target_dims`` keeping the physical extent.

    Output voxel ``i`` along an axis of ``n_in -> n_out`` voxels takes source
    voxel ``floor((i + 0.5) * n_in / n_out)``.
    """
    target = tuple(int(n) for n in target_dims)
    if len(target) != 3 or min(target) < 1:
        raise ValueError(f"target dims must be three positive integers, got {target_dims}")
    if target == v.dims:
        return v
    idx = [_nearest_source(n_in, n_out) for n_in, n_out in zip(v.dims, target)]
    data = v.data[np.ix_(*idx)]
    spacing = tuple(s * n_in / n_out for s, n_in, n_out in zip(v.spacing, v.dims, target))
    return Volume(data, spacing, v.kind)


def _nearest_source(n_in: int, n_out: int) -> np.ndarray:
    # integer arithmetic: floor((2i + 1) * n_in / (2 n_out))
    i = np.arange(n_out, dtype=np.int64)
    return np.minimum(((2 * i + 1) * n_in) // (2 * n_out), n_in - 1)


def structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def label_array(data, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Connected components of a boolean array with deterministic ids.

    Component ids follow the ascending smallest linear (x-fastest) index of
    each component.
    """
    labels, count = ndimage.label(np.asarray(data) != 0, structure=structure(connectivity))
    if count == 0:
        return labels.astype(np.uint32), 0
    flat = labels.ravel(order="F")
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    remap = np.zeros(count + 1, dtype=np.uint32)
    remap[ids[np.argsort(first, kind="stable")]] = np.arange(1, count + 1, dtype=np.uint32)
    return remap[labels], int(count)


def connected_components(mask: Volume, conn: int = 26) -> tuple[Volume, int]:
    if mask.kind != MASK:
        raise ValueError("connected_components expects a binary mask")
    labels, count = label_array(mask.data, conn)
    return Volume(labels, mask.spacing, LABELS), count
