"""Built-in stencil kernels.

The thermal kernel follows the HotSpot3D update structure: a 7-point stencil
(east/west/north/south in the layer, top/bottom across layers) plus a
per-cell heating term from a power map. Its conductances are derived from the
chip geometry in :class:`ThermalParams`, which is the single table of
constants for that kernel. There is no ambient sink: the centre weight is
``1 - sum(neighbour weights)``, so a uniform tile with no power is a fixed
point. Temperatures are normalised (O(1) values, starting at or above 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParams
from .grid import (BoundaryCondition, BounceBack, ConstantField, PerCell, Stencil, StencilPoint,
                   Tile3D, ZERO_FIELD)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    name: str
    stencil: Stencil
    w_top: float = 0.0
    w_bottom: float = 0.0
    constant: ConstantField = ZERO_FIELD
    bc: BoundaryCondition = BounceBack()
    initial: Optional[Callable[[tuple[int, int, int]], np.ndarray]] = field(default=None, repr=False)

    @cached_property
    def _tile_stencil(self) -> Stencil:
        pts = list(self.stencil.points)
        if self.w_top != 0.0:
            pts.append(StencilPoint(0, 0, self.w_top, 1))
        if self.w_bottom != 0.0:
            pts.append(StencilPoint(0, 0, self.w_bottom, -1))
        return Stencil(tuple(pts), self.name)

    def tile_stencil(self) -> Stencil:
        """In-layer points followed by the vertical ones (top is ``z+1``)."""
        return self._tile_stencil

    def weight_sum(self) -> float:
        return self.tile_stencil().weight_sum()

    def initial_tile(self, dims: tuple[int, int, int], dtype=np.float32) -> Tile3D:
        """Deterministic starting state for ``dims = (nx, ny, nz)``."""
        nx, ny, nz = dims
        shape = (nz, ny, nx)
        data = self.initial(shape) if self.initial is not None else np.ones(shape)
        return Tile3D(np.ascontiguousarray(data, dtype=dtype))


def make_five_point(w1: float, w2: float, w3: float, w4: float, w5: float,
                    bc: BoundaryCondition = BounceBack(), constant: ConstantField = ZERO_FIELD,
                    name: str = "five-point") -> KernelSpec:
    """Centre, west, east, south, north weights; any values are accepted."""
    stencil = Stencil.from_tuples([(0, 0, w1), (-1, 0, w2), (1, 0, w3), (0, 1, w4), (0, -1, w5)], name)
    return KernelSpec(name, stencil, constant=constant, bc=bc, initial=_wavy_initial)


def _wavy_initial(shape):
    nz, ny, nx = shape
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return 1.0 + 0.25 * (1 + np.sin(2 * np.pi * x / max(nx, 2)) * np.cos(2 * np.pi * y / max(ny, 2))) \
        + 0.01 * z


@dataclass(frozen=True)
class ThermalParams:
    """Chip geometry and material constants (SI units)."""

    chip_height: float = 0.016
    chip_width: float = 0.016
    t_chip: float = 0.0005
    k_si: float = 100.0
    spec_heat_si: float = 1.75e6
    factor_chip: float = 0.5
    max_pd: float = 3.0e6
    precision: float = 0.001
    base_temperature: float = 1.0
    initial_spread: float = 0.1

    def coefficients(self, nx: int, ny: int, nz: int) -> dict[str, float]:
        dx = self.chip_height / nx
        dy = self.chip_width / ny
        dz = self.t_chip / nz
        cap = self.factor_chip * self.spec_heat_si * self.t_chip * dx * dy
        rx = dy / (2.0 * self.k_si * self.t_chip * dx)
        ry = dx / (2.0 * self.k_si * self.t_chip * dy)
        rz = dz / (self.k_si * dx * dy)
        max_slope = self.max_pd / (self.factor_chip * self.t_chip * self.spec_heat_si)
        step_div_cap = (self.precision / max_slope) / cap
        ce = step_div_cap / rx
        cn = step_div_cap / ry
        ct = step_div_cap / rz
        cc = 1.0 - (2.0 * ce + 2.0 * cn + 2.0 * ct)
        return {"cc": cc, "ce": ce, "cw": ce, "cn": cn, "cs": cn, "ct": ct, "cb": ct}


def default_power_map(nx: int, ny: int) -> np.ndarray:
    """Synthetic floorplan: four cores, a cache strip and idle background.

    Values are normalised power densities in [0, 1].
    """
    p = np.full((ny, nx), 0.05)
    hy, hx = ny // 2, nx // 2
    cores = [(0.6, 0, 0), (0.8, 0, hx), (0.5, hy, 0), (0.9, hy, hx)]
    for dens, y0, x0 in cores:
        p[y0 + ny // 16: y0 + hy - ny // 16, x0 + nx // 16: x0 + hx - nx // 16] = dens
    p[ny // 2 - max(ny // 32, 1): ny // 2 + max(ny // 32, 1), :] = 0.2
    return p


def make_hotspot3d_like(dims: tuple[int, int, int], params: ThermalParams = ThermalParams(),
                        power: Optional[np.ndarray] = None) -> KernelSpec:
    """7-point thermal kernel for a tile of ``dims = (nx, ny, nz)``.

    ``power`` is a normalised density map of shape ``(ny, nx)`` (applied to
    every layer) or ``(nz, ny, nx)``; defaults to :func:`default_power_map`.
    """
    nx, ny, nz = dims
    for name in ("chip_height", "chip_width", "t_chip", "k_si", "spec_heat_si", "factor_chip",
                 "max_pd", "precision"):
        if getattr(params, name) <= 0:
            raise InvalidParams(f"{name} must be positive")
    c = params.coefficients(nx, ny, nz)
    if any(v < 0 for v in c.values()):
        raise InvalidParams(f"negative stencil weight for dims {dims}: {c}")
    if power is None:
        power = default_power_map(nx, ny)
    power = np.asarray(power, dtype=np.float64)
    if np.any(power < 0):
        raise InvalidParams("power densities must be non-negative")
    # step/capacitance times cell power reduces to precision * density
    stencil = Stencil.from_tuples(
        [(0, 0, c["cc"]), (-1, 0, c["cw"]), (1, 0, c["ce"]), (0, 1, c["cs"]), (0, -1, c["cn"])],
        "hotspot3d")
    constant = PerCell(params.precision * power)
    pmap = power if power.ndim == 2 else power[0]
    peak = pmap.max() if pmap.max() > 0 else 1.0

    def initial(shape):
        return np.broadcast_to(params.base_temperature + params.initial_spread * pmap / peak, shape)

    return KernelSpec("hotspot3d", stencil, w_top=c["ct"], w_bottom=c["cb"], constant=constant,
                      bc=BounceBack(), initial=initial)


KERNELS: dict[str, Callable[[tuple[int, int, int]], KernelSpec]] = {
    "hotspot3d": lambda dims: make_hotspot3d_like(dims),
    "five-point": lambda dims: make_five_point(0.2, 0.2, 0.2, 0.2, 0.2),
    "average4": lambda dims: make_five_point(0.0, 0.25, 0.25, 0.25, 0.25, name="average4"),
}


@lru_cache(maxsize=32)
def _cached_kernel(name: str, dims: tuple[int, int, int]) -> KernelSpec:
    return KERNELS[name](dims)


def get_kernel(name: str, dims: tuple[int, int, int]) -> KernelSpec:
    """Shared, immutable kernel instance for ``name`` at ``dims = (nx, ny, nz)``."""
    if name not in KERNELS:
        raise KeyError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}")
    return _cached_kernel(name, tuple(int(d) for d in dims))
