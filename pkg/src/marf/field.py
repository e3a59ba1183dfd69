"""Radiance field: density + view-dependent color from a tiny split MLP.

The density branch sees only the hash-grid encoding of position, so density
is direction-free by construction; its intermediate geometry features join the
frequency-encoded view direction to form the color branch input. Density goes
through softplus, color through a logistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .hashgrid import HashGrid

DIR_FREQUENCIES = 4
GEO_FEATURES = 15
HIDDEN_WIDTH = 64

# incremented whenever direction_encode has to normalize its input
normalization_warnings = 0


def direction_dim(frequencies: int = DIR_FREQUENCIES) -> int:
    return 3 + 3 * 2 * frequencies


def direction_encode(directions: np.ndarray,
                     frequencies: int = DIR_FREQUENCIES) -> np.ndarray:
    """Frequency encoding of unit directions: [d, sin(2^k d), cos(2^k d)].

    Non-unit rows are normalized and counted in `normalization_warnings`.
    """
    global normalization_warnings
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    norms = np.linalg.norm(d, axis=1)
    bad = np.abs(norms - 1.0) > 1e-6
    if bad.any():
        normalization_warnings += int(bad.sum())
        d = d / norms[:, None]
    parts = [d]
    for k in range(frequencies):
        scaled = (2.0 ** k) * d
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=1)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _he_uniform(rng, fan_in: int, shape, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(dtype)


@dataclass
class MLPParams:
    """Weights for the density net (2 hidden layers) and color net (1 hidden)."""

    w0: np.ndarray
    b0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    cw0: np.ndarray
    cb0: np.ndarray
    cw1: np.ndarray
    cb1: np.ndarray

    NAMES = ("w0", "b0", "w1", "b1", "w2", "b2", "cw0", "cb0", "cw1", "cb1")

    @classmethod
    def create(cls, rng, encoding_dim: int, hidden: int = HIDDEN_WIDTH,
               geo_features: int = GEO_FEATURES,
               frequencies: int = DIR_FREQUENCIES, dtype=np.float32) -> "MLPParams":
        d_dir = direction_dim(frequencies)
        color_in = geo_features + d_dir
        return cls(
            w0=_he_uniform(rng, encoding_dim, (encoding_dim, hidden), dtype),
            b0=np.zeros(hidden, dtype=dtype),
            w1=_he_uniform(rng, hidden, (hidden, hidden), dtype),
            b1=np.zeros(hidden, dtype=dtype),
            w2=_he_uniform(rng, hidden, (hidden, 1 + geo_features), dtype),
            b2=np.zeros(1 + geo_features, dtype=dtype),
            cw0=_he_uniform(rng, color_in, (color_in, hidden), dtype),
            cb0=np.zeros(hidden, dtype=dtype),
            cw1=_he_uniform(rng, hidden, (hidden, 3), dtype),
            cb1=np.zeros(3, dtype=dtype),
        )

    def named_arrays(self):
        return [(name, getattr(self, name)) for name in self.NAMES]

    @property
    def geo_features(self) -> int:
        return self.w2.shape[1] - 1

    @property
    def frequencies(self) -> int:
        d_dir = self.cw0.shape[0] - self.geo_features
        return (d_dir - 3) // 6

    def check_finite(self):
        for name, arr in self.named_arrays():
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite values in parameter {name}")


def field_forward(grid: HashGrid, params: MLPParams, positions: np.ndarray,
                  directions: np.ndarray, want_cache: bool = False,
                  direction_encoding: np.ndarray | None = None):
    """Evaluate density and color for a batch of (position, direction) pairs.

    Returns (sigma (P,), rgb (P, 3)) and, when want_cache is set, the
    activation cache needed by field_backward. Callers with repeated
    directions may pass a precomputed `direction_encoding` row per point.
    """
    pts = np.asarray(positions, dtype=grid.dtype).reshape(-1, 3)
    enc = grid.encode(pts)
    pre0 = enc @ params.w0 + params.b0
    h0 = np.maximum(pre0, 0.0)
    pre1 = h0 @ params.w1 + params.b1
    h1 = np.maximum(pre1, 0.0)
    out = h1 @ params.w2 + params.b2
    raw_sigma = out[:, 0]
    geo = out[:, 1:]
    if direction_encoding is None:
        denc = direction_encode(directions, params.frequencies).astype(grid.dtype)
    else:
        denc = np.asarray(direction_encoding, dtype=grid.dtype)
    cin = np.concatenate([geo, denc], axis=1)
    cpre = cin @ params.cw0 + params.cb0
    ch = np.maximum(cpre, 0.0)
    craw = ch @ params.cw1 + params.cb1
    sigma = softplus(raw_sigma)
    rgb = sigmoid(craw)
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(rgb))):
        layer = _first_bad_layer((("encoding", enc), ("density-hidden-0", pre0),
                                  ("density-hidden-1", pre1), ("density-out", out),
                                  ("color-hidden", cpre), ("color-out", craw)))
        raise NumericalError(f"non-finite activations at layer {layer}")
    if not want_cache:
        return sigma, rgb
    cache = {"pts": pts, "enc": enc, "pre0": pre0, "h0": h0, "pre1": pre1,
             "h1": h1, "raw_sigma": raw_sigma, "cin": cin, "cpre": cpre,
             "ch": ch, "craw": craw, "rgb": rgb}
    return sigma, rgb, cache


def _first_bad_layer(named):
    for name, arr in named:
        if not np.all(np.isfinite(arr)):
            return name
    return "output"


def field_backward(grid: HashGrid, params: MLPParams, cache: dict,
                   dsigma: np.ndarray, drgb: np.ndarray):
    """Exact reverse-mode gradients for one cached forward batch.

    Returns (param_grads dict matching MLPParams.NAMES, grid_gradient) where
    grid_gradient carries exact per-row sums plus touch counts (see
    GridGradient.averaged for the collision-resolution view).
    """
    rgb = cache["rgb"]
    dcraw = np.asarray(drgb, dtype=rgb.dtype) * rgb * (1.0 - rgb)
    grads = {}
    grads["cw1"] = cache["ch"].T @ dcraw
    grads["cb1"] = dcraw.sum(axis=0)
    dch = dcraw @ params.cw1.T
    dcpre = dch * (cache["cpre"] > 0)
    grads["cw0"] = cache["cin"].T @ dcpre
    grads["cb0"] = dcpre.sum(axis=0)
    dcin = dcpre @ params.cw0.T

    geo_features = params.geo_features
    draw_sigma = np.asarray(dsigma, dtype=rgb.dtype) * sigmoid(cache["raw_sigma"])
    dout = np.concatenate([draw_sigma[:, None], dcin[:, :geo_features]], axis=1)
    grads["w2"] = cache["h1"].T @ dout
    grads["b2"] = dout.sum(axis=0)
    dh1 = dout @ params.w2.T
    dpre1 = dh1 * (cache["pre1"] > 0)
    grads["w1"] = cache["h0"].T @ dpre1
    grads["b1"] = dpre1.sum(axis=0)
    dh0 = dpre1 @ params.w1.T
    dpre0 = dh0 * (cache["pre0"] > 0)
    grads["w0"] = cache["enc"].T @ dpre0
    grads["b0"] = dpre0.sum(axis=0)
    denc_upstream = dpre0 @ params.w0.T
    grid_grad = grid.encode_backward(cache["pts"], denc_upstream)
    return grads, grid_grad


@dataclass
class RadianceField:
    """A trainable scene: hash grid plus MLP heads."""

    grid: HashGrid
    params: MLPParams

    @classmethod
    def create(cls, grid_config, seed: int = 0, hidden: int = HIDDEN_WIDTH,
               geo_features: int = GEO_FEATURES,
               frequencies: int = DIR_FREQUENCIES, dtype=np.float32) -> "RadianceField":
        rng = np.random.default_rng(seed)
        grid = HashGrid(grid_config, dtype=dtype, rng=rng)
        params = MLPParams.create(rng, grid_config.feature_dim, hidden=hidden,
                                  geo_features=geo_features,
                                  frequencies=frequencies, dtype=dtype)
        return cls(grid=grid, params=params)

    def field_fn(self, positions: np.ndarray, directions: np.ndarray):
        return field_forward(self.grid, self.params, positions, directions)

    def named_parameters(self):
        yield "grid.tables", self.grid.tables
        yield from self.params.named_arrays()
