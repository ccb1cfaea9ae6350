"""Numba kernels for the per-pixel reslice inner loops.

Both the grid-accelerated path and the brute-force oracle funnel every
candidate sample through the same _accumulate_run body, in the same storage
order (samples are sorted by linearized cell index, and the grid path walks
cells in ascending linear order). That shared ordering and shared arithmetic
is what makes the two paths bit-exact against each other.

Kernels are compiled nogil (not numba-parallel) and driven by a thread pool
in reslice.py, so any number of reslice calls can run concurrently on one
immutable volume.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

COVERAGE_MIN_WEIGHT = 1e-12  # total weight below this counts as no coverage

# cell ranges are inflated by this many cells so float rounding in the
# (point - origin) / voxel chain can never exclude a cell holding samples
# that pass the closed cube check; the extra cells only ever contribute
# cube-rejected samples, so both reslice paths stay bit-identical
CELL_RANGE_GUARD = 1e-9


@njit(nogil=True, cache=True, inline="always")
def _accumulate_run(
    i0, i1, wx, wy, wz, radius,
    xrx, xry, xrz, nrx, nry, nrz,
    positions, orientations, intensities,
    cos_nt, cos_it, kn, ki, kd,
    wsum, iwsum,
):
    for i in range(i0, i1):
        dx = positions[i, 0] - wx
        if dx < -radius or dx > radius:
            continue
        dy = positions[i, 1] - wy
        if dy < -radius or dy > radius:
            continue
        dz = positions[i, 2] - wz
        if dz < -radius or dz > radius:
            continue
        qw = np.float64(orientations[i, 0])
        qx = np.float64(orientations[i, 1])
        qy = np.float64(orientations[i, 2])
        qz = np.float64(orientations[i, 3])
        # sample plane normal R(q)*ez and lateral axis R(q)*ex
        nsx = 2.0 * (qx * qz + qw * qy)
        nsy = 2.0 * (qy * qz - qw * qx)
        nsz = 1.0 - 2.0 * (qx * qx + qy * qy)
        d_normal = nsx * nrx + nsy * nry + nsz * nrz
        if d_normal < cos_nt:
            continue
        xsx = 1.0 - 2.0 * (qy * qy + qz * qz)
        xsy = 2.0 * (qx * qy + qw * qz)
        xsz = 2.0 * (qx * qz - qw * qy)
        d_inplane = abs(xsx * xrx + xsy * xry + xsz * xrz)
        if d_inplane < cos_it:
            continue
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        w = math.exp(kn * (d_normal - 1.0) + ki * (d_inplane - 1.0) - kd * dist / radius)
        wsum += w
        iwsum += w * np.float64(intensities[i])
    return wsum, iwsum


@njit(nogil=True, cache=True, inline="always")
def _finalize_pixel(wsum, iwsum, unassigned):
    if wsum >= COVERAGE_MIN_WEIGHT:
        val = iwsum / wsum
        iv = int(math.floor(val + 0.5))  # half away from zero; val >= 0
        if iv < 0:
            iv = 0
        elif iv > 255:
            iv = 255
        return np.uint8(iv), True
    return np.uint8(unassigned), False


@njit(nogil=True, cache=True)
def reslice_rows_grid(
    out, cov, v0, v1,
    tx, ty, tz,
    r00, r01, r02, r10, r11, r12, r20, r21, r22,
    pitch_x, pitch_y,
    ox, oy, oz, voxel, nx, ny, nz,
    cell_starts, cell_counts,
    positions, orientations, intensities,
    radius, cos_nt, cos_it, kn, ki, kd, unassigned,
):
    width = out.shape[1]
    inv_v = 1.0 / voxel
    for v in range(v0, v1):
        for u in range(width):
            du = u * pitch_x
            dv = v * pitch_y
            wx = tx + du * r00 + dv * r01
            wy = ty + du * r10 + dv * r11
            wz = tz + du * r20 + dv * r21
            lox = int(math.floor((wx - radius - ox) * inv_v - CELL_RANGE_GUARD))
            hix = int(math.floor((wx + radius - ox) * inv_v + CELL_RANGE_GUARD))
            loy = int(math.floor((wy - radius - oy) * inv_v - CELL_RANGE_GUARD))
            hiy = int(math.floor((wy + radius - oy) * inv_v + CELL_RANGE_GUARD))
            loz = int(math.floor((wz - radius - oz) * inv_v - CELL_RANGE_GUARD))
            hiz = int(math.floor((wz + radius - oz) * inv_v + CELL_RANGE_GUARD))
            if lox < 0:
                lox = 0
            if loy < 0:
                loy = 0
            if loz < 0:
                loz = 0
            if hix >= nx:
                hix = nx - 1
            if hiy >= ny:
                hiy = ny - 1
            if hiz >= nz:
                hiz = nz - 1
            wsum = 0.0
            iwsum = 0.0
            for cx in range(lox, hix + 1):
                for cy in range(loy, hiy + 1):
                    base = (cx * ny + cy) * nz
                    for cz in range(loz, hiz + 1):
                        lin = base + cz
                        start = cell_starts[lin]
                        count = cell_counts[lin]
                        if count > 0:
                            wsum, iwsum = _accumulate_run(
                                start, start + count, wx, wy, wz, radius,
                                r00, r10, r20, r02, r12, r22,
                                positions, orientations, intensities,
                                cos_nt, cos_it, kn, ki, kd,
                                wsum, iwsum,
                            )
            out[v, u], cov[v, u] = _finalize_pixel(wsum, iwsum, unassigned)


@njit(nogil=True, cache=True)
def reslice_rows_bruteforce(
    out, cov, v0, v1,
    tx, ty, tz,
    r00, r01, r02, r10, r11, r12, r20, r21, r22,
    pitch_x, pitch_y,
    positions, orientations, intensities,
    radius, cos_nt, cos_it, kn, ki, kd, unassigned,
):
    width = out.shape[1]
    n = positions.shape[0]
    for v in range(v0, v1):
        for u in range(width):
            du = u * pitch_x
            dv = v * pitch_y
            wx = tx + du * r00 + dv * r01
            wy = ty + du * r10 + dv * r11
            wz = tz + du * r20 + dv * r21
            wsum, iwsum = _accumulate_run(
                0, n, wx, wy, wz, radius,
                r00, r10, r20, r02, r12, r22,
                positions, orientations, intensities,
                cos_nt, cos_it, kn, ki, kd,
                0.0, 0.0,
            )
            out[v, u], cov[v, u] = _finalize_pixel(wsum, iwsum, unassigned)


@njit(nogil=True, cache=True)
def trilinear_rows(
    out_val, out_cov, v0, v1,
    tx, ty, tz,
    r00, r01, r10, r11, r20, r21,
    pitch_x, pitch_y,
    ox, oy, oz, voxel, nx, ny, nz,
    values, occupied,
):
    """Trilinear interpolation of a scalar voxel grid at plane pixels.

    Weights are renormalized over occupied corner voxels; a pixel with no
    occupied corner (or total weight below the coverage floor) is uncovered.
    Writes float values; rounding to gray levels happens in the caller.
    """
    width = out_val.shape[1]
    inv_v = 1.0 / voxel
    for v in range(v0, v1):
        for u in range(width):
            du = u * pitch_x
            dv = v * pitch_y
            wx = tx + du * r00 + dv * r01
            wy = ty + du * r10 + dv * r11
            wz = tz + du * r20 + dv * r21
            gx = (wx - ox) * inv_v - 0.5  # voxel centers at origin + (i + 0.5) * voxel
            gy = (wy - oy) * inv_v - 0.5
            gz = (wz - oz) * inv_v - 0.5
            ix = int(math.floor(gx))
            iy = int(math.floor(gy))
            iz = int(math.floor(gz))
            fx = gx - ix
            fy = gy - iy
            fz = gz - iz
            wsum = 0.0
            vsum = 0.0
            for cx in range(2):
                jx = ix + cx
                if jx < 0 or jx >= nx:
                    continue
                wxc = fx if cx == 1 else 1.0 - fx
                for cy in range(2):
                    jy = iy + cy
                    if jy < 0 or jy >= ny:
                        continue
                    wyc = fy if cy == 1 else 1.0 - fy
                    for cz in range(2):
                        jz = iz + cz
                        if jz < 0 or jz >= nz:
                            continue
                        lin = (jx * ny + jy) * nz + jz
                        if occupied[lin]:
                            wc = wxc * wyc * (fz if cz == 1 else 1.0 - fz)
                            wsum += wc
                            vsum += wc * values[lin]
            if wsum >= COVERAGE_MIN_WEIGHT:
                out_val[v, u] = vsum / wsum
                out_cov[v, u] = True
            else:
                out_val[v, u] = 0.0
                out_cov[v, u] = False
