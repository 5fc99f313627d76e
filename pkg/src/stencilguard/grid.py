"""Grids, stencils, boundary policies and the reference Jacobi sweep.

Layout conventions used everywhere in the package:

* a :class:`Grid2D` stores ``data[y, x]`` (rows are ``y``), shape ``(ny, nx)``;
* a :class:`Tile3D` stores ``data[z, y, x]``, one independently protected
  2D layer per ``z``;
* the value ``u[x, y]`` of the update rule is ``data[y, x]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable, Optional, Protocol, Union

import numpy as np

from . import _jit
from .errors import DimensionMismatch

if TYPE_CHECKING:
    from .kernels import KernelSpec

DEFAULT_DTYPE = np.float32


@dataclass(frozen=True)
class StencilPoint:
    di: int
    dj: int
    w: float
    dk: int = 0  # vertical offset, only used by 3D tiles


@dataclass(frozen=True)
class Stencil:
    points: tuple[StencilPoint, ...]
    name: str = "stencil"

    def __post_init__(self):
        pts = tuple(p if isinstance(p, StencilPoint) else StencilPoint(*p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("a stencil needs at least one point")
        offsets = [(p.di, p.dj, p.dk) for p in pts]
        if len(set(offsets)) != len(offsets):
            raise ValueError(f"duplicate offsets in stencil {self.name!r}")
        if any(abs(p.dk) > 1 for p in pts):
            raise ValueError("vertical offsets must lie in {-1, 0, 1}")

    @classmethod
    def from_tuples(cls, triples: Iterable[tuple], name: str = "stencil") -> "Stencil":
        """Build from ``(di, dj, w)`` or ``(di, dj, w, dk)`` tuples."""
        return cls(tuple(StencilPoint(*t) for t in triples), name)

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def is_planar(self) -> bool:
        return all(p.dk == 0 for p in self.points)

    def weight_sum(self) -> float:
        return float(sum(p.w for p in self.points))

    def check_fits(self, nx: int, ny: int) -> None:
        for p in self.points:
            if abs(p.di) > nx - 1 or abs(p.dj) > ny - 1:
                raise DimensionMismatch(
                    f"offset ({p.di},{p.dj}) does not fit a {nx}x{ny} grid")


# -- boundary conditions ----------------------------------------------------

@dataclass(frozen=True)
class BounceBack:
    """Out-of-range reads clamp to the nearest in-domain index."""


@dataclass(frozen=True)
class Periodic:
    """Out-of-range reads wrap modulo the extent."""


@dataclass(frozen=True)
class ZeroGhost:
    """Empty boundary: out-of-range reads return 0."""


@dataclass(frozen=True)
class ConstantGhost:
    value: float


BoundaryCondition = Union[BounceBack, Periodic, ZeroGhost, ConstantGhost]

_BC_NAMES = {"bounceback": BounceBack, "periodic": Periodic, "zero": ZeroGhost}


def parse_bc(text: str) -> BoundaryCondition:
    """``bounceback``, ``periodic``, ``zero`` or ``constant:<value>``."""
    text = text.strip().lower()
    if text.startswith("constant:"):
        return ConstantGhost(float(text.split(":", 1)[1]))
    try:
        return _BC_NAMES[text]()
    except KeyError:
        raise ValueError(f"unknown boundary condition {text!r}") from None


def ghost_value(bc: BoundaryCondition) -> Optional[float]:
    if isinstance(bc, ZeroGhost):
        return 0.0
    if isinstance(bc, ConstantGhost):
        return float(bc.value)
    return None


@dataclass(frozen=True)
class InDomain:
    index: int


@dataclass(frozen=True)
class GhostValue:
    value: float


def resolve(index: int, extent: int, bc: BoundaryCondition) -> Union[InDomain, GhostValue]:
    if extent < 1:
        raise ValueError("extent must be >= 1")
    if 0 <= index < extent:
        return InDomain(index)
    if isinstance(bc, Periodic):
        return InDomain(index % extent)
    if isinstance(bc, BounceBack):
        return InDomain(min(max(index, 0), extent - 1))
    return GhostValue(ghost_value(bc))


def resolve_indices(indices: np.ndarray, extent: int, bc: BoundaryCondition) -> np.ndarray:
    """Vectorised :func:`resolve`; ghost reads come back as ``-1``."""
    idx = np.asarray(indices, dtype=np.int64)
    if isinstance(bc, Periodic):
        return np.mod(idx, extent)
    if isinstance(bc, BounceBack):
        return np.clip(idx, 0, extent - 1)
    return np.where((idx >= 0) & (idx < extent), idx, -1)


# -- state ------------------------------------------------------------------

@dataclass
class Grid2D:
    data: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise DimensionMismatch(f"Grid2D needs a non-empty (ny, nx) array, got {self.data.shape}")

    @classmethod
    def zeros(cls, nx: int, ny: int, dtype=DEFAULT_DTYPE) -> "Grid2D":
        return cls(np.zeros((ny, nx), dtype=dtype))

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def ny(self) -> int:
        return self.data.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def value(self, x: int, y: int):
        return self.data[y, x]

    def as_tile(self) -> "Tile3D":
        return Tile3D(self.data[np.newaxis], self.iteration)

    def copy(self) -> "Grid2D":
        return Grid2D(self.data.copy(), self.iteration)


@dataclass
class Tile3D:
    data: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DimensionMismatch(f"Tile3D needs a non-empty (nz, ny, nx) array, got {self.data.shape}")

    @classmethod
    def zeros(cls, nx: int, ny: int, nz: int, dtype=DEFAULT_DTYPE) -> "Tile3D":
        return cls(np.zeros((nz, ny, nx), dtype=dtype))

    @property
    def nx(self) -> int:
        return self.data.shape[2]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def layer(self, z: int) -> Grid2D:
        return Grid2D(self.data[z], self.iteration)

    @property
    def layers(self) -> list[Grid2D]:
        return [self.layer(z) for z in range(self.nz)]

    def copy(self) -> "Tile3D":
        return Tile3D(self.data.copy(), self.iteration)


def as_array3(state: Union[Grid2D, Tile3D]) -> np.ndarray:
    return state.data if state.data.ndim == 3 else state.data[np.newaxis]


# -- constant term ------------------------------------------------------------

class ConstantField:
    """The optional per-cell constant term added by every update."""

    def materialize(self, shape: tuple[int, int, int], dtype) -> np.ndarray:
        raise NotImplementedError

    def array(self, shape: tuple[int, int, int], dtype) -> np.ndarray:
        """Cached read-only :meth:`materialize`."""
        key = (tuple(shape), np.dtype(dtype).str)
        cache = self.__dict__.setdefault("_array_cache", {})
        if key not in cache:
            arr = self.materialize(tuple(shape), dtype)
            arr.setflags(write=False)
            cache[key] = arr
        return cache[key]

    def sums(self, shape: tuple[int, int, int], dtype) -> tuple[np.ndarray, np.ndarray]:
        """``(c_x, c_y)`` per layer: ``c_x[z, x] = sum_y C`` and ``c_y[z, y] = sum_x C``."""
        key = (tuple(shape), np.dtype(dtype).str)
        cache = self.__dict__.setdefault("_sums_cache", {})
        if key not in cache:
            C = self.array(shape, dtype)
            nz, ny, nx = shape
            c_x = np.empty((nz, nx), dtype=dtype)
            c_y = np.empty((nz, ny), dtype=dtype)
            _jit.checksum_kernel(C, c_x, c_y, np.dtype(dtype).type(0), True, True)
            cache[key] = (c_x, c_y)
        return cache[key]


@dataclass(eq=False)
class Uniform(ConstantField):
    c: float = 0.0

    def materialize(self, shape, dtype):
        return np.full(shape, self.c, dtype=dtype)


@dataclass(eq=False)
class PerCell(ConstantField):
    data: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        self.data = np.array(self.data, copy=True)
        self.data.setflags(write=False)

    def materialize(self, shape, dtype):
        nz, ny, nx = shape
        d = self.data
        if d.shape == (ny, nx):
            return np.ascontiguousarray(np.broadcast_to(d, shape), dtype=dtype)
        if d.shape == tuple(shape):
            return np.ascontiguousarray(d, dtype=dtype)
        raise DimensionMismatch(f"constant field {d.shape} does not match grid {shape}")


ZERO_FIELD = Uniform(0.0)


# -- compiled plan --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StencilPlan:
    """Index maps and typed weights for one (stencil, bc, shape, dtype)."""

    stencil: Stencil
    bc: BoundaryCondition
    shape: tuple[int, int, int]
    dtype: np.dtype
    di: np.ndarray
    dj: np.ndarray
    dk: np.ndarray
    w: np.ndarray
    xmap: np.ndarray
    ymap: np.ndarray
    zmap: np.ndarray
    ghost: np.generic
    zero: np.generic


@lru_cache(maxsize=256)
def _plan_cached(stencil: Stencil, bc: BoundaryCondition, shape: tuple, dtype_str: str) -> StencilPlan:
    dtype = np.dtype(dtype_str)
    nz, ny, nx = shape
    stencil.check_fits(nx, ny)
    di = np.array([p.di for p in stencil.points], dtype=np.int64)
    dj = np.array([p.dj for p in stencil.points], dtype=np.int64)
    dk = np.array([p.dk for p in stencil.points], dtype=np.int64)
    w = np.array([p.w for p in stencil.points], dtype=dtype)
    xmap = np.stack([resolve_indices(np.arange(nx) + d, nx, bc) for d in di])
    ymap = np.stack([resolve_indices(np.arange(ny) + d, ny, bc) for d in dj])
    zmap = np.stack([resolve_indices(np.arange(nz) + d, nz, bc) for d in dk])
    g = ghost_value(bc)
    return StencilPlan(stencil, bc, shape, dtype, di, dj, dk, w,
                       xmap, ymap, zmap, dtype.type(0.0 if g is None else g), dtype.type(0))


def make_plan(stencil: Stencil, bc: BoundaryCondition, shape: tuple[int, int, int], dtype) -> StencilPlan:
    return _plan_cached(stencil, bc, tuple(int(s) for s in shape), np.dtype(dtype).str)


class FaultSource(Protocol):
    def take(self, iteration: int) -> Optional[tuple[int, int, int, int]]:
        """Return ``(z, y, x, xor_mask)`` if a fault fires on this sweep."""


_NO_FAULT = (-1, -1, -1, 0)


def sweep_array(u: np.ndarray, plan: StencilPlan, C: np.ndarray, out: Optional[np.ndarray] = None,
                bsum: Optional[np.ndarray] = None, fault: Optional[tuple] = None) -> np.ndarray:
    """Low-level sweep of a 3D array into ``out``.

    When ``bsum`` is given the per-row sums of the stored values are written
    into it during the same pass. ``fault`` is ``(z, y, x, xor_mask)``.
    """
    if out is None:
        out = np.empty_like(u)
    with_sum = bsum is not None
    if bsum is None:
        bsum = np.empty((1, 1), dtype=u.dtype)
    fz, fy, fx, mask = fault if fault is not None else _NO_FAULT
    bits = _jit.bits_dtype(u.dtype)
    _jit.sweep_kernel(u, out, C, plan.w, plan.di, plan.xmap, plan.ymap, plan.zmap, plan.ghost, plan.zero,
                      bsum, with_sum, out.view(bits), fz, fy, fx, bits(mask))
    if with_sum and fz >= 0:
        bsum[fz, fy] = _jit.row_sum(out[fz, fy], plan.zero)
    return out


def _prepare(state, stencil, C: ConstantField, bc):
    u = np.ascontiguousarray(as_array3(state))
    plan = make_plan(stencil, bc, u.shape, u.dtype)
    Carr = C.array(u.shape, u.dtype)
    return u, plan, Carr


def sweep(grid: Grid2D, stencil: Stencil, C: ConstantField = ZERO_FIELD,
          bc: BoundaryCondition = BounceBack()) -> Grid2D:
    """One Jacobi sweep of a 2D grid; the input is left untouched."""
    if not stencil.is_planar:
        raise ValueError("2D sweep needs a planar stencil")
    u, plan, Carr = _prepare(grid, stencil, C, bc)
    out = sweep_array(u, plan, Carr)
    return Grid2D(out[0], grid.iteration + 1)


def sweep_tile(tile: Tile3D, kernel: "KernelSpec") -> Tile3D:
    """One Jacobi sweep of a 3D tile; every read comes from iteration t."""
    u, plan, Carr = _prepare(tile, kernel.tile_stencil(), kernel.constant, kernel.bc)
    return Tile3D(sweep_array(u, plan, Carr), tile.iteration + 1)


def run_unprotected(tile: Tile3D, kernel: "KernelSpec", iterations: int,
                    fault: Optional[FaultSource] = None) -> Tile3D:
    """Plain sweeps with two ping-pong buffers, optionally hit by a fault."""
    u = np.array(as_array3(tile), copy=True)
    plan = make_plan(kernel.tile_stencil(), kernel.bc, u.shape, u.dtype)
    Carr = kernel.constant.array(u.shape, u.dtype)
    nxt = np.empty_like(u)
    t0 = tile.iteration
    for t in range(t0, t0 + iterations):
        f = fault.take(t) if fault is not None else None
        sweep_array(u, plan, Carr, out=nxt, fault=f)
        u, nxt = nxt, u
    return Tile3D(u, t0 + iterations)
