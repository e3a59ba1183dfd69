"""Bootstrap uncertainty: retrain replicas, stack grayscale renders, map the
pixel-wise spread, and export fly-through frame sequences.

Replicas share one configuration and differ only by RNG seed (initialization
and ray sampling); optional with-replacement resampling of the training views
is available for classical bootstrap behavior. Sigma is the population
standard deviation over the replica axis, so a single replica gives zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cameras import Intrinsics, Pose, SceneManifest, rotation_to_qvec, \
    qvec_to_rotation, slerp
from .errors import ConfigError, MarfError
from .images import ImageBuffer, save_image, to_grayscale
from .render import render_view
from .training import Checkpoint, TrainConfig, train

log = logging.getLogger(__name__)

MEAN_FRAME_PATTERN = "mean_{:05d}.png"
SIGMA_FRAME_PATTERN = "sigma_{:05d}.png"
SIGMA_SCALE_FILE = "sigma_scale.txt"


@dataclass
class BootstrapSet:
    """Replica checkpoints plus the failures that did not finish."""

    checkpoints: list[Checkpoint]
    failures: list[tuple[int, str]]

    @property
    def replica_count(self) -> int:
        return len(self.checkpoints)


@dataclass
class UncertaintyMap:
    """Per-viewpoint grayscale mean and pixel-wise standard deviation."""

    mean: np.ndarray   # (H, W)
    sigma: np.ndarray  # (H, W), >= 0

    def __post_init__(self):
        if self.mean.shape != self.sigma.shape:
            raise ConfigError("mean and sigma must share a shape")


def bootstrap_train(manifest: SceneManifest, config: TrainConfig, replicas: int,
                    base_seed: int, budget_steps: int | None = None,
                    budget_seconds: float | None = None, images=None,
                    resample_views: bool = False) -> BootstrapSet:
    """Train `replicas` fields with seeds base_seed+0 .. base_seed+B-1.

    Failed replicas are collected instead of aborting the set. When
    `resample_views` is set each replica trains on a with-replacement resample
    of the views instead of the full set.
    """
    if replicas < 1:
        raise ConfigError("bootstrap needs at least one replica")
    checkpoints, failures = [], []
    for b in range(replicas):
        seed = base_seed + b
        replica_manifest, replica_images = manifest, images
        if resample_views:
            rng = np.random.default_rng(seed)
            pick = rng.integers(0, len(manifest.entries), len(manifest.entries))
            replica_manifest = SceneManifest(
                entries=tuple(manifest.entries[i] for i in pick),
                aabb=manifest.aabb)
            if images is not None:
                replica_images = [images[i] for i in pick]
        try:
            ckpt = train(replica_manifest, replace(config, seed=seed),
                         budget_steps=budget_steps,
                         budget_seconds=budget_seconds, images=replica_images,
                         checkpoint_times=())
            checkpoints.append(ckpt)
        except MarfError as exc:
            log.warning("replica %d failed: %s", b, exc)
            failures.append((b, str(exc)))
    return BootstrapSet(checkpoints=checkpoints, failures=failures)


def render_replicas(bootstrap: BootstrapSet, viewpoints, aabb, count: int = 64,
                    background=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """Deterministic grayscale renders of every replica at every viewpoint.

    Returns one (B, H, W) stack per viewpoint, replica-major.
    """
    stacks = []
    fields = [ckpt.to_field() for ckpt in bootstrap.checkpoints]
    for intr, pose in viewpoints:
        slices = []
        for field in fields:
            view = render_view(field.field_fn, intr, pose, aabb, count=count,
                               background=background)
            slices.append(to_grayscale(view.image).data[:, :, 0])
        stacks.append(np.stack(slices, axis=0))
    return stacks


def uncertainty_map(stack: np.ndarray) -> UncertaintyMap:
    """Pixel-wise mean and population std over the replica axis of (B, H, W)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ConfigError("stack must be (B, H, W) with B >= 1")
    return UncertaintyMap(mean=stack.mean(axis=0), sigma=stack.std(axis=0))


def interpolate_poses(start: Pose, end: Pose, frames: int) -> list[Pose]:
    """Linear position + slerp orientation path; endpoints are exact."""
    if frames < 1:
        raise ConfigError("need at least one frame")
    if frames == 1:
        return [start]
    qa = rotation_to_qvec(start.rotation)
    qb = rotation_to_qvec(end.rotation)
    poses = []
    for k in range(frames):
        t = k / (frames - 1)
        rot = qvec_to_rotation(slerp(qa, qb, t))
        center = (1.0 - t) * start.center + t * end.center
        poses.append(Pose(rot, center))
    return poses


def write_flythrough_frames(maps, out_dir) -> float:
    """Write mean/sigma PNG pairs with zero-padded frame indices.

    Sigma frames share one global normalization constant (the maximum sigma
    across the whole sequence), recorded in `sigma_scale.txt`; returns it.
    """
    maps = list(maps)
    if not maps:
        raise ConfigError("fly-through needs at least one frame")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sigma_max = max(float(m.sigma.max()) for m in maps)
    scale = sigma_max if sigma_max > 0 else 1.0
    for k, m in enumerate(maps):
        save_image(ImageBuffer.from_array(np.clip(m.mean, 0.0, 1.0)),
                   out_dir / MEAN_FRAME_PATTERN.format(k))
        save_image(ImageBuffer.from_array(np.clip(m.sigma / scale, 0.0, 1.0)),
                   out_dir / SIGMA_FRAME_PATTERN.format(k))
    (out_dir / SIGMA_SCALE_FILE).write_text(f"{sigma_max!r}\n", encoding="utf-8")
    return sigma_max


def flythrough(bootstrap: BootstrapSet, intrinsics: Intrinsics, path_poses,
               out_dir, aabb, count: int = 64,
               background=(0.0, 0.0, 0.0)) -> list[UncertaintyMap]:
    """Render replica stacks along a camera path and write the frame pairs."""
    path_poses = list(path_poses)
    if not path_poses:
        raise ConfigError("fly-through needs at least one pose")
    viewpoints = [(intrinsics, pose) for pose in path_poses]
    stacks = render_replicas(bootstrap, viewpoints, aabb, count=count,
                             background=background)
    maps = [uncertainty_map(stack) for stack in stacks]
    write_flythrough_frames(maps, out_dir)
    return maps
