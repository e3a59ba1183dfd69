"""Numba-jitted hash grid kernels (hot path).

Forward lookup parallelizes over query points (disjoint writes, so the result
is independent of thread count). The backward scatter stays sequential: its
accumulation order, and therefore the float result, must be deterministic.
"""

import numpy as np
from numba import njit, prange

U32_MASK = np.uint64(0xFFFFFFFF)
PRIME_Y = np.uint64(2654435761)
PRIME_Z = np.uint64(805459861)


@njit(inline="always")
def _corner_index(cx, cy, cz, res, is_dense, table_mask):
    if is_dense:
        stride = res + 1
        return cx + cy * stride + cz * stride * stride
    h = (np.uint64(cx) ^ (np.uint64(cy) * PRIME_Y) ^ (np.uint64(cz) * PRIME_Z)) & U32_MASK
    return np.int64(h & table_mask)


@njit(parallel=True, fastmath=True, cache=True)
def hashgrid_encode(points, tables, offsets, resolutions, dense, table_size, out):
    n_pts = points.shape[0]
    n_levels = resolutions.shape[0]
    n_feat = tables.shape[1]
    table_mask = np.uint64(table_size - 1)
    for p in prange(n_pts):
        x = min(max(points[p, 0], 0.0), 1.0)
        y = min(max(points[p, 1], 0.0), 1.0)
        z = min(max(points[p, 2], 0.0), 1.0)
        for level in range(n_levels):
            res = resolutions[level]
            sx = x * res
            sy = y * res
            sz = z * res
            vx = min(np.int64(sx), res - 1)
            vy = min(np.int64(sy), res - 1)
            vz = min(np.int64(sz), res - 1)
            fx = sx - vx
            fy = sy - vy
            fz = sz - vz
            base = offsets[level]
            is_dense = dense[level]
            col = level * n_feat
            for f in range(n_feat):
                out[p, col + f] = 0.0
            for corner in range(8):
                dx = corner & 1
                dy = (corner >> 1) & 1
                dz = (corner >> 2) & 1
                w = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) * (fz if dz else 1.0 - fz)
                row = base + _corner_index(vx + dx, vy + dy, vz + dz, res, is_dense, table_mask)
                for f in range(n_feat):
                    out[p, col + f] += w * tables[row, f]
    return out


@njit(parallel=True, fastmath=True, cache=True)
def hashgrid_encode_backward(points, upstream, offsets, resolutions, dense,
                             table_size, grad_sums, counts):
    # parallel over levels only: each level scatters into its own table slice,
    # and within a level the point order is sequential, so the accumulated
    # floats are identical run to run regardless of thread count
    n_pts = points.shape[0]
    n_levels = resolutions.shape[0]
    n_feat = grad_sums.shape[1]
    table_mask = np.uint64(table_size - 1)
    for level in prange(n_levels):
        res = resolutions[level]
        base = offsets[level]
        is_dense = dense[level]
        col = level * n_feat
        for p in range(n_pts):
            x = min(max(points[p, 0], 0.0), 1.0)
            y = min(max(points[p, 1], 0.0), 1.0)
            z = min(max(points[p, 2], 0.0), 1.0)
            sx = x * res
            sy = y * res
            sz = z * res
            vx = min(np.int64(sx), res - 1)
            vy = min(np.int64(sy), res - 1)
            vz = min(np.int64(sz), res - 1)
            fx = sx - vx
            fy = sy - vy
            fz = sz - vz
            for corner in range(8):
                dx = corner & 1
                dy = (corner >> 1) & 1
                dz = (corner >> 2) & 1
                w = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) * (fz if dz else 1.0 - fz)
                row = base + _corner_index(vx + dx, vy + dy, vz + dz, res, is_dense, table_mask)
                for f in range(n_feat):
                    grad_sums[row, f] += w * upstream[p, col + f]
                counts[row] += 1
