"""ABFTGRID v1 binary files and a small CSV form for debugging.

Binary layout: 8-byte magic ``ABFTGRID``, five little-endian u32 fields
``version, nx, ny, nz, dtype`` (0 = binary32, 1 = binary64), then
``nz*ny*nx`` little-endian values, layer-major and row-major.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .grid import Grid2D, Tile3D, as_array3

MAGIC = b"ABFTGRID"
VERSION = 1
_HEADER = struct.Struct("<5I")
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CSV_MAX = 64


def _code_for(dtype) -> int:
    size = np.dtype(dtype).itemsize
    if size == 4:
        return 0
    if size == 8:
        return 1
    raise ValueError(f"unsupported element type {dtype}")


def to_bytes(state: Union[Grid2D, Tile3D]) -> bytes:
    arr = as_array3(state)
    code = _code_for(arr.dtype)
    nz, ny, nx = arr.shape
    body = np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()
    return MAGIC + _HEADER.pack(VERSION, nx, ny, nz, code) + body


def from_bytes(blob: bytes) -> Tile3D:
    if blob[:8] != MAGIC:
        raise ValueError("not an ABFTGRID file")
    version, nx, ny, nz, code = _HEADER.unpack_from(blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported ABFTGRID version {version}")
    if code not in _CODES:
        raise ValueError(f"unknown dtype code {code}")
    dt = _CODES[code]
    start = 8 + _HEADER.size
    count = nx * ny * nz
    if len(blob) != start + count * dt.itemsize:
        raise ValueError("ABFTGRID payload length does not match header")
    data = np.frombuffer(blob, dtype=dt, count=count, offset=start).reshape(nz, ny, nx)
    return Tile3D(data.astype(dt.newbyteorder("="), copy=True))


def write_grid(path, state: Union[Grid2D, Tile3D]) -> None:
    Path(path).write_bytes(to_bytes(state))


def read_grid(path) -> Tile3D:
    return from_bytes(Path(path).read_bytes())


def write_csv(path, grid: Grid2D) -> None:
    """One CSV row per ``y``; values use the shortest round-tripping repr."""
    if grid.nx > CSV_MAX or grid.ny > CSV_MAX:
        raise ValueError(f"CSV form is limited to {CSV_MAX}x{CSV_MAX} grids")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid.data:
            writer.writerow([repr(v.item()) if grid.dtype == np.float64 else str(v) for v in row])


def read_csv(path, dtype=np.float32) -> Grid2D:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged CSV grid")
    return Grid2D(np.array(rows, dtype=dtype))
