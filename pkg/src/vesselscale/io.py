"""Volume file formats: a small NRRD subset and a raw + JSON sidecar pair.

Supported NRRD: magic ``NRRD0001``..``NRRD0005``, ``type`` uint8 / uint32 /
float, ``dimension: 3``, ``encoding`` raw or gzip, little endian, spacing from
``spacings`` or a diagonal ``space directions``.  Data is x-fastest.
"""
from __future__ import annotations

import gzip
import json
import os
import re
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .volume import LABELS, MASK, SCALAR, Volume


class VolumeFormatError(ValueError):
    pass


_NRRD_TYPES = {
    "uint8": np.dtype("<u1"),
    "uchar": np.dtype("<u1"),
    "unsigned char": np.dtype("<u1"),
    "uint8_t": np.dtype("<u1"),
    "uint32": np.dtype("<u4"),
    "uint": np.dtype("<u4"),
    "unsigned int": np.dtype("<u4"),
    "uint32_t": np.dtype("<u4"),
    "float": np.dtype("<f4"),
}
_KIND_TO_NRRD = {MASK: "uint8", LABELS: "uint32", SCALAR: "float"}
_KIND_TO_DTYPE = {MASK: np.dtype("<u1"), LABELS: np.dtype("<u4"), SCALAR: np.dtype("<f4")}
_DTYPE_NAMES = {"uint8": np.dtype("<u1"), "uint32": np.dtype("<u4"), "float32": np.dtype("<f4")}


def load_volume(path) -> Volume:
    """Read a volume from ``.nrrd`` or a ``.raw``/``.json`` sidecar pair."""
    path = Path(path)
    if path.suffix.lower() in (".raw", ".json"):
        return _load_sidecar(path)
    return _load_nrrd(path)


def save_volume(v: Volume, path, encoding: str = "gzip") -> None:
    """Write ``v`` atomically; ``.raw``/``.json`` paths use the sidecar format."""
    path = Path(path)
    if path.suffix.lower() in (".raw", ".json"):
        _save_sidecar(v, path)
    else:
        atomic_write_bytes(path, nrrd_bytes(v, encoding))


def _kind_for(dtype: np.dtype, values: np.ndarray, source) -> str:
    if dtype == np.dtype("<u1"):
        if values.size and values.max() > 1:
            raise VolumeFormatError(f"{source}: uint8 volume contains values outside {{0, 1}}")
        return MASK
    if dtype == np.dtype("<u4"):
        return LABELS
    return SCALAR


def _parse_header(lines, source) -> dict:
    fields = {}
    for line in lines:
        if not line or line.startswith("#"):
            continue
        if ":=" in line:  # key/value pairs
            continue
        if ":" not in line:
            raise VolumeFormatError(f"{source}: malformed header line {line!r}")
        key, value = line.split(":", 1)
        fields[key.strip().lower()] = value.strip()
    return fields


def _floats(text, source, what):
    try:
        return [float(t) for t in text.split()]
    except ValueError:
        raise VolumeFormatError(f"{source}: bad {what} {text!r}") from None


def _spacing_from(fields, source):
    if "spacings" in fields:
        sp = _floats(fields["spacings"], source, "spacings")
    elif "space directions" in fields:
        vecs = re.findall(r"\(([^)]*)\)", fields["space directions"])
        if len(vecs) != 3:
            raise VolumeFormatError(f"{source}: expected 3 space direction vectors")
        mat = np.array([_floats(v.replace(",", " "), source, "space directions") for v in vecs])
        if mat.shape != (3, 3) or np.any(mat[~np.eye(3, dtype=bool)] != 0):
            raise VolumeFormatError(f"{source}: only diagonal space directions are supported")
        sp = list(np.abs(np.diag(mat)))
    else:
        sp = [1.0, 1.0, 1.0]
    if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
        raise VolumeFormatError(f"{source}: spacing must be three positive values, got {sp}")
    return tuple(float(s) for s in sp)


def _load_nrrd(path: Path) -> Volume:
    raw = path.read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise VolumeFormatError(f"{path}: missing blank line after NRRD header")
    header = raw[:sep].decode("ascii", errors="replace").replace("\r", "").split("\n")
    payload = raw[sep + 2:]
    if not re.fullmatch(r"NRRD000[1-5]", header[0].strip()):
        raise VolumeFormatError(f"{path}: not a supported NRRD file (magic {header[0]!r})")
    fields = _parse_header(header[1:], path)
    for key in ("type", "dimension", "sizes", "encoding"):
        if key not in fields:
            raise VolumeFormatError(f"{path}: missing required field {key!r}")
    if fields["type"].lower() not in _NRRD_TYPES:
        raise VolumeFormatError(f"{path}: unsupported type {fields['type']!r}")
    dtype = _NRRD_TYPES[fields["type"].lower()]
    if fields["dimension"] != "3":
        raise VolumeFormatError(f"{path}: only 3D volumes are supported")
    try:
        dims = tuple(int(t) for t in fields["sizes"].split())
    except ValueError:
        raise VolumeFormatError(f"{path}: bad sizes {fields['sizes']!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{path}: bad sizes {fields['sizes']!r}")
    if "data file" in fields or "datafile" in fields:
        raise VolumeFormatError(f"{path}: detached data files are not supported")
    endian = fields.get("endian", "little").lower()
    if dtype.itemsize > 1 and endian != "little":
        raise VolumeFormatError(f"{path}: only little-endian data is supported")
    encoding = fields["encoding"].lower()
    if encoding == "raw":
        data = payload
    elif encoding in ("gzip", "gz"):
        try:
            data = gzip.decompress(payload)
        except (OSError, EOFError, zlib.error) as exc:
            raise VolumeFormatError(f"{path}: corrupt gzip payload ({exc})") from None
    else:
        raise VolumeFormatError(f"{path}: unsupported encoding {encoding!r}")
    n = dims[0] * dims[1] * dims[2]
    if len(data) != n * dtype.itemsize:
        raise VolumeFormatError(
            f"{path}: data length mismatch, expected {n * dtype.itemsize} bytes, got {len(data)}"
        )
    flat = np.frombuffer(data, dtype=dtype)
    kind = _kind_for(dtype, flat, path)
    return Volume.from_flat(flat, dims, _spacing_from(fields, path), kind)


def nrrd_bytes(v: Volume, encoding: str = "gzip") -> bytes:
    if encoding not in ("raw", "gzip"):
        raise ValueError(f"encoding must be 'raw' or 'gzip', got {encoding!r}")
    header = [
        "NRRD0004",
        f"type: {_KIND_TO_NRRD[v.kind]}",
        "dimension: 3",
        "sizes: {} {} {}".format(*v.dims),
        "spacings: {!r} {!r} {!r}".format(*v.spacing),
        f"encoding: {encoding}",
        "endian: little",
    ]
    data = v.flat().astype(_KIND_TO_DTYPE[v.kind], copy=False).tobytes()
    if encoding == "gzip":
        data = gzip.compress(data, compresslevel=6, mtime=0)
    return ("\n".join(header) + "\n\n").encode("ascii") + data


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    return path.parent / (path.stem + ".raw"), path.parent / (path.stem + ".json")


def _load_sidecar(path: Path) -> Volume:
    raw_path, json_path = _sidecar_paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{json_path}: invalid JSON ({exc})") from None
    try:
        dims = tuple(int(n) for n in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing_mm"])
        dtype = _DTYPE_NAMES[meta["dtype"]]
    except KeyError as exc:
        raise VolumeFormatError(f"{json_path}: missing or unsupported key {exc}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{json_path}: bad dims {meta['dims']}")
    if len(spacing) != 3 or min(spacing) <= 0:
        raise VolumeFormatError(f"{json_path}: bad spacing {meta['spacing_mm']}")
    data = raw_path.read_bytes()
    n = dims[0] * dims[1] * dims[2]
    if len(data) != n * dtype.itemsize:
        raise VolumeFormatError(
            f"{raw_path}: data length mismatch, expected {n * dtype.itemsize} bytes, got {len(data)}"
        )
    flat = np.frombuffer(data, dtype=dtype)
    return Volume.from_flat(flat, dims, spacing, _kind_for(dtype, flat, raw_path))


def _save_sidecar(v: Volume, path: Path) -> None:
    raw_path, json_path = _sidecar_paths(path)
    dtype = {MASK: "uint8", LABELS: "uint32", SCALAR: "float32"}[v.kind]
    meta = {"dims": list(v.dims), "spacing_mm": list(v.spacing), "dtype": dtype}
    atomic_write_bytes(raw_path, v.flat().astype(_KIND_TO_DTYPE[v.kind], copy=False).tobytes())
    atomic_write_bytes(json_path, (json.dumps(meta, indent=2) + "\n").encode())


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the destination directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
