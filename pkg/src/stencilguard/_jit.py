"""Compiled inner loops.

All kernels work on 3D ``(nz, ny, nx)`` arrays; a 2D grid is a single layer.
Index maps are precomputed per stencil point: ``map[p, i]`` holds the resolved
in-domain index for ``i + offset[p]`` or ``-1`` when the read hits a ghost.

Arithmetic stays in the element type of the arrays passed in. Per cell the
update is ``C + w0*u0 + w1*u1 + ...`` accumulated left to right, and column
sums run y-ascending; the pure-Python oracles in the test suite rely on both
orders. Row sums go through :func:`row_sum`, which lets LLVM reassociate so
the reduction vectorises; a strict left-to-right chain made the fused sum cost
a quarter of the sweep. The lane order is fixed per build and machine, and
every row sum in the package (fused or direct) uses this one function, so
they agree bit for bit.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

# OpenMP first: the TBB probe warns on older system TBB builds
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


@njit(parallel=True, cache=True)
def sweep_kernel(u, out, C, w, di, xmap, ymap, zmap, ghost, zero,
                 bsum, with_sum, obits, fz, fy, fx, mask):
    nz, ny, nx = u.shape
    k = w.shape[0]
    for r in prange(nz * ny):
        z = r // ny
        y = r - z * ny
        orow = out[z, y]
        crow = C[z, y]
        for x in range(nx):
            orow[x] = crow[x]
        # one point at a time over the whole row; per cell the terms still
        # arrive in point order, so the rounding matches a cell-by-cell loop
        for p in range(k):
            wp = w[p]
            zz = zmap[p, z]
            yy = ymap[p, y]
            if zz < 0 or yy < 0:
                g = wp * ghost
                for x in range(nx):
                    orow[x] = orow[x] + g
                continue
            src = u[zz, yy]
            d = di[p]
            lo = max(0, -d)
            hi = min(nx, nx - d)
            for x in range(lo):
                xx = xmap[p, x]
                if xx < 0:
                    orow[x] = orow[x] + wp * ghost
                else:
                    orow[x] = orow[x] + wp * src[xx]
            # zero-based views let LLVM drop the negative-index fixups and vectorise
            ov = orow[lo:hi]
            sv = src[lo + d:hi + d]
            for x in range(hi - lo):
                ov[x] = ov[x] + wp * sv[x]
            for x in range(hi, nx):
                xx = xmap[p, x]
                if xx < 0:
                    orow[x] = orow[x] + wp * ghost
                else:
                    orow[x] = orow[x] + wp * src[xx]
        if z == fz and y == fy:
            # the flip hits the freshly updated value; the caller redoes this
            # row's sum because the compiler may not see the write through the
            # aliasing bit view
            obits[z, y, fx] = obits[z, y, fx] ^ mask
        if with_sum:
            bsum[z, y] = row_sum(orow, zero)


@njit(cache=True, fastmath={"reassoc"})
def row_sum(r, zero):
    s = zero
    for x in range(r.shape[0]):
        s = s + r[x]
    return s


@njit(cache=True)
def checksum_kernel(u, a, b, zero, want_a, want_b):
    nz, ny, nx = u.shape
    for z in range(nz):
        if want_a:
            for x in range(nx):
                a[z, x] = zero
            for y in range(ny):
                for x in range(nx):
                    a[z, x] = a[z, x] + u[z, y, x]
        if want_b:
            for y in range(ny):
                b[z, y] = row_sum(u[z, y], zero)


@njit(cache=True)
def interpolate_kernel(vec, cvec, w, map1d, zmap, ledger, slot, ghostsum, out):
    """Apply the stencil's 1D analogue to a stack of checksum vectors."""
    nz, n = vec.shape
    k = w.shape[0]
    for z in range(nz):
        for i in range(n):
            acc = cvec[z, i]
            for p in range(k):
                zz = zmap[p, z]
                ii = map1d[p, i]
                if zz < 0 or ii < 0:
                    term = ghostsum
                else:
                    term = vec[zz, ii]
                    sl = slot[p]
                    if sl >= 0:
                        term = term + ledger[sl, zz, ii]
                acc = acc + w[p] * term
            out[z, i] = acc


@njit(cache=True)
def any_gap_exceeds(direct, interp, epsilon, floor):
    """True when some entry's relative gap is above ``epsilon`` or non-finite."""
    d_flat = direct.ravel()
    q_flat = interp.ravel()
    for i in range(d_flat.shape[0]):
        d = np.float64(d_flat[i])
        q = np.float64(q_flat[i])
        if not (np.isfinite(d) and np.isfinite(q)):
            return True
        if abs(d) < floor:
            gap = abs(q - d)
        else:
            gap = abs(q / d - 1.0)
        if not gap <= epsilon:
            return True
    return False


def set_threads(n: int) -> int:
    """Clamp and apply the worker count; returns the count actually used."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def bits_dtype(dtype) -> type:
    return np.uint32 if np.dtype(dtype).itemsize == 4 else np.uint64
