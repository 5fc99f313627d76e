"""Row/column checksums and the fused sweep that accumulates one of them."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import _jit
from .grid import (BoundaryCondition, BounceBack, ConstantField, Grid2D, Stencil, Tile3D,
                   ZERO_FIELD, _prepare, as_array3, sweep_array)


class Which(enum.Enum):
    B_ONLY = "b"
    BOTH = "both"


@dataclass
class ChecksumPair:
    """Per-layer checksum vectors.

    ``a[z, x]`` sums column ``x`` over ``y`` and ``b[z, y]`` sums row ``y``
    over ``x``. For a plain 2D grid ``nz == 1``; :meth:`layer_a` and
    :meth:`layer_b` give the 1D views.
    """

    a: Optional[np.ndarray]
    b: np.ndarray
    iteration: int
    which: Which

    def layer_a(self, z: int = 0) -> np.ndarray:
        if self.a is None:
            raise ValueError("row checksum a was not computed")
        return self.a[z]

    def layer_b(self, z: int = 0) -> np.ndarray:
        return self.b[z]

    def copy(self) -> "ChecksumPair":
        return ChecksumPair(None if self.a is None else self.a.copy(), self.b.copy(),
                            self.iteration, self.which)


def checksum_arrays(u: np.ndarray, want_a: bool = True, want_b: bool = True):
    nz, ny, nx = u.shape
    a = np.empty((nz, nx), dtype=u.dtype) if want_a else np.empty((1, 1), dtype=u.dtype)
    b = np.empty((nz, ny), dtype=u.dtype) if want_b else np.empty((1, 1), dtype=u.dtype)
    _jit.checksum_kernel(u, a, b, u.dtype.type(0), want_a, want_b)
    return (a if want_a else None), (b if want_b else None)


def compute_checksums(state: Union[Grid2D, Tile3D], which: Which = Which.BOTH) -> ChecksumPair:
    u = np.ascontiguousarray(as_array3(state))
    a, b = checksum_arrays(u, want_a=which is Which.BOTH, want_b=True)
    return ChecksumPair(a, b, state.iteration, which)


def sweep_with_checksum(grid: Grid2D, stencil: Stencil, C: ConstantField = ZERO_FIELD,
                        bc: BoundaryCondition = BounceBack()) -> tuple[Grid2D, np.ndarray]:
    """Sweep and accumulate ``b`` of the new grid in the same pass.

    The grid is bitwise identical to :func:`stencilguard.grid.sweep`; the
    returned ``b`` has length ``ny``.
    """
    u, plan, Carr = _prepare(grid, stencil, C, bc)
    b = np.empty((1, grid.ny), dtype=u.dtype)
    out = sweep_array(u, plan, Carr, bsum=b)
    return Grid2D(out[0], grid.iteration + 1), b[0]


def sweep_tile_with_checksum(tile: Tile3D, kernel) -> tuple[Tile3D, np.ndarray]:
    u, plan, Carr = _prepare(tile, kernel.tile_stencil(), kernel.constant, kernel.bc)
    b = np.empty((tile.nz, tile.ny), dtype=u.dtype)
    out = sweep_array(u, plan, Carr, bsum=b)
    return Tile3D(out, tile.iteration + 1), b
