"""Volumetric rendering: stratified sampling, transmittance, compositing.

The quadrature weights are w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
T_i the exclusive product of survival factors; the residual transmittance
composites the background, so opacity = sum(w) = 1 - T_final exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Intrinsics, Pose, Ray, view_rays
from .errors import ConfigError
from .images import ImageBuffer

EARLY_STOP_TRANSMITTANCE = 1e-4
DEFAULT_SAMPLES = 128
RAY_CHUNK = 16384


@dataclass(frozen=True)
class RaySampleBatch:
    """Per-ray sample depths (ascending) and forward spacings."""

    t: np.ndarray      # (R, N)
    delta: np.ndarray  # (R, N), last spacing closes to t_far

    @property
    def count(self) -> int:
        return self.t.shape[1]


@dataclass(frozen=True)
class RenderedView:
    image: ImageBuffer
    opacity: np.ndarray  # (H, W) in [0, 1]
    intrinsics: Intrinsics
    pose: Pose


def sample_uniform(t_near, t_far, count: int, rng=None) -> RaySampleBatch:
    """Stratified depths over [t_near, t_far): one sample per equal-width bin.

    Deterministic mode (rng=None) places samples at bin centers; otherwise
    each sample is uniform within its bin. Accepts scalars or (R,) arrays.
    """
    if count < 1:
        raise ConfigError("sample count must be >= 1")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    width = (t_far - t_near) / count
    if rng is None:
        jitter = np.full((t_near.shape[0], count), 0.5)
    else:
        jitter = rng.random((t_near.shape[0], count))
    t = t_near[:, None] + (np.arange(count) + jitter) * width[:, None]
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = t_far - t[:, -1]
    return RaySampleBatch(t=t, delta=delta)


def transmittance(sigmas: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """T_i = exp(-sum_{j<i} sigma_j * delta_j); T_1 is exactly 1."""
    tau = np.asarray(sigmas) * np.asarray(deltas)
    cum = np.cumsum(tau, axis=-1)
    return np.exp(-(cum - tau))


def composite(sigmas: np.ndarray, rgbs: np.ndarray, deltas: np.ndarray,
              background) -> tuple[np.ndarray, np.ndarray]:
    """Blend samples front to back over the background color.

    sigmas/deltas are (R, N), rgbs (R, N, 3); returns color (R, 3) and
    opacity (R,). An empty sample axis yields the background exactly.
    """
    background = np.asarray(background, dtype=np.float64)
    if sigmas.size == 0:
        rays = sigmas.shape[0]
        return np.tile(background, (rays, 1)), np.zeros(rays)
    trans = transmittance(sigmas, deltas)
    weights = trans * -np.expm1(-np.asarray(sigmas) * np.asarray(deltas))
    opacity = weights.sum(axis=-1)
    color = (weights[:, :, None] * rgbs).sum(axis=1) + (1.0 - opacity)[:, None] * background
    return color, opacity


def composite_backward(sigmas, rgbs, deltas, background, d_color):
    """Gradients of composite color w.r.t. per-sample sigma and rgb.

    d_color is (R, 3); returns (d_sigma (R, N), d_rgb (R, N, 3)).
    """
    background = np.asarray(background, dtype=np.float64)
    trans = transmittance(sigmas, deltas)
    alpha = -np.expm1(-np.asarray(sigmas) * np.asarray(deltas))
    weights = trans * alpha
    d_rgb = weights[:, :, None] * d_color[:, None, :]
    # downstream of sample i: its own alpha grows, every later weight and the
    # residual background term shrink through T
    g_dot_c = (d_color[:, None, :] * rgbs).sum(axis=-1)        # (R, N)
    w_gc = weights * g_dot_c
    suffix_wgc = np.flip(np.cumsum(np.flip(w_gc, axis=1), axis=1), axis=1) - w_gc
    suffix_w = np.flip(np.cumsum(np.flip(weights, axis=1), axis=1), axis=1) - weights
    t_next = trans * (1.0 - alpha)
    g_dot_bg = d_color @ background
    d_sigma = deltas * (t_next * g_dot_c - suffix_wgc
                        - (t_next - suffix_w) * g_dot_bg[:, None])
    return d_sigma, d_rgb


def render_rays(field_fn, origins, directions, t_near, t_far, count: int,
                background, rng=None, early_stop: bool = True,
                stop_threshold: float = EARLY_STOP_TRANSMITTANCE,
                sample_chunk: int = 32):
    """March rays through a field function and composite.

    field_fn(positions (P,3), dirs (P,3)) -> (sigma (P,), rgb (P,3)).
    Rays with t_near == t_far are treated as misses and return the background.
    Early stopping drops rays whose transmittance falls below `stop_threshold`;
    disable it when comparing against exhaustive oracles.
    """
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    rays = origins.shape[0]
    background = np.asarray(background, dtype=np.float64)

    live = t_far > t_near
    color = np.zeros((rays, 3))
    trans = np.ones(rays)
    if live.any():
        samples = sample_uniform(t_near[live], t_far[live], count, rng=rng)
        live_idx = np.flatnonzero(live)
        active = np.arange(live_idx.size)
        for start in range(0, count, sample_chunk):
            stop = min(start + sample_chunk, count)
            t_blk = samples.t[active, start:stop]
            d_blk = samples.delta[active, start:stop]
            rows = live_idx[active]
            pts = origins[rows, None, :] + t_blk[:, :, None] * directions[rows, None, :]
            dirs = np.broadcast_to(directions[rows, None, :], pts.shape)
            sigma, rgb = field_fn(pts.reshape(-1, 3), dirs.reshape(-1, 3))
            sigma = sigma.reshape(t_blk.shape)
            rgb = rgb.reshape(t_blk.shape + (3,))
            tau = sigma * d_blk
            cum = np.cumsum(tau, axis=1)
            t_local = np.exp(-(cum - tau)) * trans[rows][:, None]
            w = t_local * -np.expm1(-tau)
            np.add.at(color, rows, (w[:, :, None] * rgb).sum(axis=1))
            trans[rows] *= np.exp(-cum[:, -1])
            if early_stop:
                keep = trans[rows] >= stop_threshold
                if not keep.all():
                    active = active[keep]
                    if active.size == 0:
                        break
    color += trans[:, None] * background
    opacity = 1.0 - trans
    return color, opacity


def render_ray(field_fn, ray: Ray, count: int, background, rng=None,
               early_stop: bool = True):
    """Single-ray convenience wrapper; returns (rgb (3,), opacity scalar)."""
    color, opacity = render_rays(field_fn, ray.origin[None], ray.direction[None],
                                 [ray.t_near], [ray.t_far], count, background,
                                 rng=rng, early_stop=early_stop)
    return color[0], float(opacity[0])


def render_view(field_fn, intrinsics: Intrinsics, pose: Pose, aabb,
                count: int = DEFAULT_SAMPLES, background=(0.0, 0.0, 0.0),
                rng=None, early_stop: bool = True,
                ray_chunk: int = RAY_CHUNK) -> RenderedView:
    """Render every pixel of a view; deterministic when rng is None."""
    origins, dirs, t_near, t_far, _hit = view_rays(intrinsics, pose, aabb)
    n_px = origins.shape[0]
    color = np.zeros((n_px, 3))
    opacity = np.zeros(n_px)
    for start in range(0, n_px, ray_chunk):
        stop = min(start + ray_chunk, n_px)
        color[start:stop], opacity[start:stop] = render_rays(
            field_fn, origins[start:stop], dirs[start:stop],
            t_near[start:stop], t_far[start:stop], count, background,
            rng=rng, early_stop=early_stop)
    h, w = intrinsics.height, intrinsics.width
    image = ImageBuffer.from_array(np.clip(color, 0.0, 1.0).reshape(h, w, 3))
    return RenderedView(image=image, opacity=opacity.reshape(h, w),
                        intrinsics=intrinsics, pose=pose)
