"""Multi-resolution hash encoding of positions in the unit cube.

Each level is a table of learned feature rows indexed either densely (when
every voxel vertex fits) or through a wrapping-uint32 spatial hash; a query
point trilinearly blends the 8 corner rows of its containing voxel at every
level and concatenates the per-level features coarse to fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from .errors import ConfigError

HASH_PRIME_Y = 2654435761
HASH_PRIME_Z = 805459861
U32_MASK = 0xFFFFFFFF

INIT_SCALE = 1e-4  # near-zero start keeps early renders close to background


@dataclass(frozen=True)
class HashGridConfig:
    """Level count, resolution span, table entries (power of two), features.

    Defaults are sized for desktop-CPU training: the checkpoint stays small
    and the finest level still resolves a few thousandths of the unit cube.
    Larger published configurations (16 levels to 2048 cells with 2^19-entry
    tables) remain valid values.
    """

    levels: int = 8
    min_resolution: int = 16
    max_resolution: int = 512
    table_size: int = 2 ** 16
    features_per_level: int = 2

    def __post_init__(self):
        if self.levels < 1 or self.min_resolution < 1 or self.features_per_level < 1:
            raise ConfigError("levels, min_resolution, features_per_level must be >= 1")
        if self.max_resolution < self.min_resolution:
            raise ConfigError("max_resolution must be >= min_resolution")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ConfigError("table_size must be a power of two")

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level


def level_resolution(config: HashGridConfig, level: int) -> int:
    """Cells per axis at `level`, on the geometric schedule between the ends."""
    if not 0 <= level < config.levels:
        raise ConfigError(f"level {level} outside [0, {config.levels})")
    if config.levels == 1:
        return config.min_resolution
    growth = math.exp((math.log(config.max_resolution)
                       - math.log(config.min_resolution)) / (config.levels - 1))
    return int(math.floor(config.min_resolution * growth ** level))


def spatial_hash(ix, iy, iz, table_size: int):
    """Prime-multiplied xor hash with wrapping 32-bit arithmetic, mod table size.

    Accepts scalars or arrays of nonnegative vertex coordinates.
    """
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    iz = np.asarray(iz, dtype=np.int64)
    h = (ix ^ (iy * HASH_PRIME_Y) ^ (iz * HASH_PRIME_Z)) & U32_MASK
    out = h % table_size
    return int(out) if out.ndim == 0 else out


def is_dense_level(resolution: int, table_size: int) -> bool:
    """Dense (injective) indexing applies while every vertex fits the table."""
    return (resolution + 1) ** 3 <= table_size


def vertex_index(config: HashGridConfig, level: int, ix, iy, iz):
    """Table row for a vertex: dense lattice index at coarse levels, hash after."""
    res = level_resolution(config, level)
    if is_dense_level(res, config.table_size):
        stride = res + 1
        return ix + iy * stride + iz * stride * stride
    return spatial_hash(ix, iy, iz, config.table_size)


class GridGradient:
    """Scatter-accumulated table gradients plus per-entry touch counts.

    `sums` is the exact gradient of the upstream loss with respect to each
    table row; `averaged()` divides by the touch count, which is the collision
    resolution the optimizer applies.
    """

    def __init__(self, sums: np.ndarray, counts: np.ndarray):
        self.sums = sums
        self.counts = counts

    def averaged(self) -> np.ndarray:
        denom = np.maximum(self.counts, 1).astype(self.sums.dtype)
        return self.sums / denom[:, None]


class HashGrid:
    """Learnable multi-level feature tables over [0, 1]^3 queries."""

    def __init__(self, config: HashGridConfig, dtype=np.float32, rng=None,
                 tables: np.ndarray | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.resolutions = np.array(
            [level_resolution(config, l) for l in range(config.levels)], dtype=np.int64)
        self.dense = np.array(
            [is_dense_level(int(r), config.table_size) for r in self.resolutions],
            dtype=np.bool_)
        sizes = [((int(r) + 1) ** 3 if d else config.table_size)
                 for r, d in zip(self.resolutions, self.dense)]
        self.offsets = np.zeros(config.levels + 1, dtype=np.int64)
        np.cumsum(sizes, out=self.offsets[1:])
        total = int(self.offsets[-1])
        if tables is not None:
            if tables.shape != (total, config.features_per_level):
                raise ConfigError(f"table shape {tables.shape} does not match config")
            self.tables = np.ascontiguousarray(tables, dtype=self.dtype)
        else:
            rng = rng or np.random.default_rng(0)
            self.tables = rng.uniform(
                -INIT_SCALE, INIT_SCALE,
                (total, config.features_per_level)).astype(self.dtype)

    @property
    def parameter_count(self) -> int:
        return self.tables.size

    def level_slice(self, level: int) -> np.ndarray:
        return self.tables[self.offsets[level]:self.offsets[level + 1]]

    def encode(self, points: np.ndarray) -> np.ndarray:
        """Feature vectors for query points; out-of-range inputs are clamped."""
        pts = np.ascontiguousarray(points, dtype=self.dtype).reshape(-1, 3)
        out = np.empty((pts.shape[0], self.config.feature_dim), dtype=self.dtype)
        accel.hashgrid_encode(pts, self.tables, self.offsets, self.resolutions,
                              self.dense, self.config.table_size, out)
        return out

    def encode_backward(self, points: np.ndarray, upstream: np.ndarray) -> GridGradient:
        """Accumulate upstream feature gradients onto the touched table rows."""
        pts = np.ascontiguousarray(points, dtype=self.dtype).reshape(-1, 3)
        up = np.ascontiguousarray(upstream, dtype=self.dtype)
        if up.shape != (pts.shape[0], self.config.feature_dim):
            raise ConfigError(f"upstream shape {up.shape} does not match encoding")
        sums = np.zeros_like(self.tables)
        counts = np.zeros(self.tables.shape[0], dtype=np.int64)
        accel.hashgrid_encode_backward(pts, up, self.offsets, self.resolutions,
                                       self.dense, self.config.table_size,
                                       sums, counts)
        return GridGradient(sums, counts)
