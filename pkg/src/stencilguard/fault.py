"""Seeded single bit-flip injection.

Faults hit a freshly updated cell after its value is computed and before it
is stored, so the fused row sum already sees the damaged value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import BitOutOfRange

MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood); 64-bit state, portable across platforms."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n < 1:
            raise ValueError("n must be >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n


def _float_type(width: int):
    if width == 32:
        return np.float32, np.uint32
    if width == 64:
        return np.float64, np.uint64
    raise BitOutOfRange(f"unsupported element width {width}")


def flip_bit(value, bit: int, width: int = 32):
    """Return ``value`` with one bit of its IEEE-754 pattern inverted."""
    ftype, utype = _float_type(width)
    if not 0 <= bit < width:
        raise BitOutOfRange(f"bit {bit} outside 0..{width - 1}")
    arr = np.array([value], dtype=ftype)
    arr.view(utype)[0] ^= utype(1 << bit)
    return arr[0]


@dataclass(frozen=True)
class FaultSpec:
    iteration: int
    z: int
    y: int
    x: int
    bit: int
    target: str = "domain"  # or "checksum": flips the fused row sum b[z, y]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        return cls(**d)


def schedule_random_fault(rng_seed: int, dims: tuple[int, int, int], max_iteration: int,
                          element_width: int = 32, fixed_bit: Optional[int] = None) -> FaultSpec:
    """Draw iteration, cell and bit uniformly from one SplitMix64 stream.

    ``dims`` is ``(nx, ny, nz)``; the draw order is iteration, z, y, x, bit.
    """
    if max_iteration < 1:
        raise ValueError("max_iteration must be >= 1")
    nx, ny, nz = dims
    rng = SplitMix64(rng_seed)
    it = rng.below(max_iteration)
    z = rng.below(nz)
    y = rng.below(ny)
    x = rng.below(nx)
    bit = rng.below(element_width)
    if fixed_bit is not None:
        if not 0 <= fixed_bit < element_width:
            raise BitOutOfRange(f"bit {fixed_bit} outside 0..{element_width - 1}")
        bit = fixed_bit
    return FaultSpec(it, z, y, x, bit)


class FaultInjector:
    """Single-shot hook consumed by the sweep drivers."""

    def __init__(self, spec: Optional[FaultSpec], width: int = 32):
        self.spec = spec
        self.width = width
        self.armed = spec is not None
        self.fired_at: Optional[int] = None
        if spec is not None and not 0 <= spec.bit < width:
            raise BitOutOfRange(f"bit {spec.bit} outside 0..{width - 1}")

    def _fire(self, iteration: int, target: str) -> bool:
        if not self.armed or self.spec.target != target or self.spec.iteration != iteration:
            return False
        self.armed = False
        self.fired_at = iteration
        return True

    def take(self, iteration: int) -> Optional[tuple[int, int, int, int]]:
        if self._fire(iteration, "domain"):
            s = self.spec
            return s.z, s.y, s.x, 1 << s.bit
        return None

    def take_checksum(self, iteration: int) -> Optional[tuple[int, int, int]]:
        if self._fire(iteration, "checksum"):
            s = self.spec
            return s.z, s.y, 1 << s.bit
        return None


class FaultSchedule:
    """Several single-shot injectors consulted in order; at most one fires per sweep."""

    def __init__(self, specs, width: int = 32):
        self.injectors = [FaultInjector(s, width) for s in specs]

    @property
    def armed(self) -> bool:
        return any(i.armed for i in self.injectors)

    def take(self, iteration: int):
        for inj in self.injectors:
            hit = inj.take(iteration)
            if hit is not None:
                return hit
        return None

    def take_checksum(self, iteration: int):
        for inj in self.injectors:
            hit = inj.take_checksum(iteration)
            if hit is not None:
                return hit
        return None
