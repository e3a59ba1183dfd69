"""Procedural ground-truth scene shared by trainer, uncertainty, and
acceptance tests.

The scene is an opaque axis-aligned box inside the unit cube carrying three
smooth color bands along z (analytic density and color), observed by look-at
cameras on a circle. Training images come from an independent dense-quadrature
integrator, not from the library renderer.
"""

import numpy as np

from marf.cameras import (Intrinsics, Pose, SceneEntry, SceneManifest,
                          view_rays)
from marf.images import ImageBuffer, save_image

BOX_LO, BOX_HI = 0.32, 0.68
EDGE_WIDTH = 0.025
SIGMA_MAX = 80.0
BAND_COLORS = np.array([[0.90, 0.20, 0.15],
                        [0.20, 0.85, 0.30],
                        [0.20, 0.30, 0.90]])
UNIT_AABB = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def analytic_field(points, directions=None):
    """Analytic (sigma, rgb) of the banded box; direction independent."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    occupancy = np.ones(len(pts))
    for axis in range(3):
        occupancy = occupancy * smoothstep((pts[:, axis] - BOX_LO) / EDGE_WIDTH)
        occupancy = occupancy * smoothstep((BOX_HI - pts[:, axis]) / EDGE_WIDTH)
    sigma = SIGMA_MAX * occupancy
    t = np.clip((pts[:, 2] - BOX_LO) / (BOX_HI - BOX_LO), 0.0, 1.0)
    w1 = smoothstep((t - (1.0 / 3.0 - 0.04)) / 0.08)
    w2 = smoothstep((t - (2.0 / 3.0 - 0.04)) / 0.08)
    rgb = (BAND_COLORS[0][None] * (1.0 - w1)[:, None]
           + BAND_COLORS[1][None] * (w1 * (1.0 - w2))[:, None]
           + BAND_COLORS[2][None] * w2[:, None])
    return sigma, rgb


def look_at(position, target=(0.5, 0.5, 0.5), up=(0.0, 0.0, 1.0)):
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(np.column_stack([right, down, forward]), position)


def circle_poses(count, radius=1.1, height=0.5, start=0.0, span=2.0 * np.pi):
    """Look-at poses on a circle arc around the box center."""
    poses = []
    for k in range(count):
        theta = start + span * k / count
        position = np.array([0.5 + radius * np.cos(theta),
                             0.5 + radius * np.sin(theta), height])
        poses.append(look_at(position))
    return poses


def default_intrinsics(size=64, focal=70.0):
    return Intrinsics(fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0,
                      width=size, height=size)


def reference_render(field_fn, intrinsics, pose, aabb=UNIT_AABB, samples=1024,
                     background=(0.0, 0.0, 0.0)):
    """Dense-quadrature reference integrator (independent oracle renderer).

    Marches all rays front to back with a running transmittance, one sample
    plane at a time. Returns (ImageBuffer, opacity (H, W)).
    """
    origins, dirs, t_near, t_far, _hit = view_rays(intrinsics, pose, aabb)
    n_rays = origins.shape[0]
    color = np.zeros((n_rays, 3))
    trans = np.ones(n_rays)
    width = (t_far - t_near) / samples
    for i in range(samples):
        t = t_near + (i + 0.5) * width
        pts = origins + t[:, None] * dirs
        sigma, rgb = field_fn(pts, dirs)
        alpha = 1.0 - np.exp(-sigma * width)
        color += (trans * alpha)[:, None] * rgb
        trans *= 1.0 - alpha
    color += trans[:, None] * np.asarray(background, dtype=np.float64)
    image = ImageBuffer.from_array(
        np.clip(color, 0.0, 1.0).reshape(intrinsics.height, intrinsics.width, 3))
    return image, (1.0 - trans).reshape(intrinsics.height, intrinsics.width)


def build_scene(out_dir, n_train=24, n_holdout=4, size=64, samples=1024,
                radius=1.1, start=0.0, span=2.0 * np.pi, focal=70.0):
    """Render a pose circle to PNG files and split train/held-out views.

    Returns (train_manifest, holdout_entries, holdout_images). Held-out poses
    interleave the training circle so they are genuinely unseen.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = default_intrinsics(size=size, focal=focal)
    total = n_train + n_holdout
    poses = circle_poses(total, radius=radius, start=start, span=span)
    order = np.linspace(0, total, num=n_holdout, endpoint=False).astype(int)
    holdout_idx = set(order.tolist())
    train_entries, holdout_entries, holdout_images = [], [], []
    for k, pose in enumerate(poses):
        image, _ = reference_render(analytic_field, intr, pose, samples=samples)
        path = out_dir / f"view_{k:03d}.png"
        save_image(image, path)
        entry = SceneEntry(image_path=str(path), intrinsics=intr, pose=pose)
        if k in holdout_idx:
            holdout_entries.append(entry)
            holdout_images.append(image)
        else:
            train_entries.append(entry)
    manifest = SceneManifest(entries=tuple(train_entries), aabb=UNIT_AABB)
    return manifest, holdout_entries, holdout_images
