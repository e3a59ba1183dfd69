"""Pure-numpy hash grid kernels (reference path).

Semantics are identical to the numba kernels in `_numba`; this path is the
fallback selected by ``MARF_ACCEL=numpy`` and the ground truth the accelerated
path is benchmarked and tested against.
"""

import numpy as np

HASH_PRIME_Y = 2654435761
HASH_PRIME_Z = 805459861
U32_MASK = 0xFFFFFFFF


def _corner_indices(cx, cy, cz, resolution, is_dense, table_size):
    # coords are small enough that int64 products never overflow; masking the
    # xor to 32 bits reproduces wrapping-uint32 arithmetic exactly
    if is_dense:
        stride = resolution + 1
        return cx + cy * stride + cz * stride * stride
    h = (cx ^ (cy * HASH_PRIME_Y) ^ (cz * HASH_PRIME_Z)) & U32_MASK
    return h & (table_size - 1)


def hashgrid_encode(points, tables, offsets, resolutions, dense, table_size, out):
    """Trilinear multi-level feature lookup.

    points      (P, 3) in [0, 1], clamped otherwise
    tables      (total_entries, F) learned features, all levels stacked
    offsets     (L+1,) int64 row offset of each level within `tables`
    resolutions (L,) int64 cells per axis
    dense       (L,) bool, direct indexing instead of spatial hashing
    out         (P, L*F) written in place, levels coarse to fine
    """
    # scale in float64 to match the jitted kernel's int64*float promotion,
    # so voxel assignment is bit-identical across backends
    pts = np.clip(points, 0.0, 1.0).astype(np.float64, copy=False)
    n_levels = resolutions.shape[0]
    n_feat = tables.shape[1]
    for level in range(n_levels):
        res = int(resolutions[level])
        scaled = pts * res
        voxel = np.floor(scaled).astype(np.int64)
        np.clip(voxel, 0, res - 1, out=voxel)
        frac = scaled - voxel
        base = int(offsets[level])
        feat = np.zeros((pts.shape[0], n_feat), dtype=np.float64)
        for corner in range(8):
            dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
            idx = _corner_indices(
                voxel[:, 0] + dx, voxel[:, 1] + dy, voxel[:, 2] + dz,
                res, bool(dense[level]), int(table_size),
            )
            feat += (wx * wy * wz)[:, None] * tables[base + idx]
        out[:, level * n_feat:(level + 1) * n_feat] = feat.astype(out.dtype)
    return out


def hashgrid_encode_backward(points, upstream, offsets, resolutions, dense,
                             table_size, grad_sums, counts):
    """Scatter upstream feature gradients back onto table entries.

    grad_sums (total_entries, F) accumulates weighted gradients in place;
    counts    (total_entries,) int64 accumulates one touch per (point, corner).
    Accumulation order is deterministic (sequential per level/corner).
    """
    pts = np.clip(points, 0.0, 1.0).astype(np.float64, copy=False)
    n_levels = resolutions.shape[0]
    n_feat = grad_sums.shape[1]
    for level in range(n_levels):
        res = int(resolutions[level])
        scaled = pts * res
        voxel = np.floor(scaled).astype(np.int64)
        np.clip(voxel, 0, res - 1, out=voxel)
        frac = scaled - voxel
        base = int(offsets[level])
        up = upstream[:, level * n_feat:(level + 1) * n_feat]
        for corner in range(8):
            dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
            idx = base + _corner_indices(
                voxel[:, 0] + dx, voxel[:, 1] + dy, voxel[:, 2] + dz,
                res, bool(dense[level]), int(table_size),
            )
            np.add.at(grad_sums, idx, ((wx * wy * wz)[:, None] * up).astype(grad_sums.dtype))
            np.add.at(counts, idx, 1)
