"""Pinhole cameras, rays, SfM-output ingestion, and scene normalization.

Conventions: poses are camera-to-world; the camera looks down +z in its own
frame; pixel (u, v) measures from the top-left corner with (cx, cy) the
principal point. Integer pixel indices are cast through their centers
(u + 0.5, v + 0.5).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateSceneError, FormatError

log = logging.getLogger(__name__)

ORTHONORMALITY_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ConfigError("principal point must lie on the sensor")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,) camera center in world coordinates

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ConfigError("pose needs a 3x3 rotation and 3-vector translation")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=ORTHONORMALITY_TOL):
            raise ConfigError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMALITY_TOL:
            raise ConfigError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    t_near: float
    t_far: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > ORTHONORMALITY_TOL:
            raise ConfigError("ray direction must be unit length")
        if not 0.0 <= self.t_near < self.t_far:
            raise ConfigError("ray bounds must satisfy 0 <= t_near < t_far")

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class SceneEntry:
    image_path: str
    intrinsics: Intrinsics
    pose: Pose


@dataclass(frozen=True)
class SceneManifest:
    entries: tuple[SceneEntry, ...]
    aabb: np.ndarray  # (2, 3) min/max corners

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("scene manifest must contain at least one entry")
        aabb = np.asarray(self.aabb, dtype=np.float64)
        if aabb.shape != (2, 3) or not np.all(aabb[0] < aabb[1]):
            raise ConfigError("aabb must be (2, 3) with min < max per axis")
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "aabb", aabb)

    def camera_positions(self) -> np.ndarray:
        return np.stack([e.pose.center for e in self.entries])


@dataclass(frozen=True)
class SceneTransform:
    """Uniform scale + translation applied by normalize_scene: p' = p*s + o."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) * self.scale + self.offset

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.offset) / self.scale


def projection_matrix(intr: Intrinsics, pose: Pose) -> np.ndarray:
    """3x4 pinhole projection K * R_wc * [I | -C] for the given c2w pose."""
    r_wc = pose.rotation.T
    center = pose.center
    return intr.matrix @ np.hstack([r_wc, (-r_wc @ center)[:, None]])


def project(intr: Intrinsics, pose: Pose, point) -> tuple[float, float] | None:
    """Project a world point to continuous pixel coordinates.

    Returns None when the point is at or behind the camera plane (depth <= 0).
    """
    cam = pose.world_to_camera(np.asarray(point, dtype=np.float64))
    depth = cam[2]
    if depth <= 0.0:
        return None
    return (float(intr.fx * cam[0] / depth + intr.cx),
            float(intr.fy * cam[1] / depth + intr.cy))


def intersect_aabb(origins: np.ndarray, directions: np.ndarray, aabb: np.ndarray):
    """Slab-method ray/AABB intersection, vectorized over rays.

    Returns (t_near, t_far, hit). t_near is clamped to 0 for origins inside
    the box; rays parallel to an axis are handled exactly.
    """
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    lo, hi = np.asarray(aabb[0]), np.asarray(aabb[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    t_lo = np.minimum(t0, t1)
    t_hi = np.maximum(t0, t1)
    parallel = directions == 0.0
    if parallel.any():
        # a parallel axis contributes the full line when the origin lies in
        # the slab and an empty interval otherwise
        inside = (origins >= lo) & (origins <= hi)
        t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
    t_lo = t_lo.max(axis=1)
    t_hi = t_hi.min(axis=1)
    t_near = np.maximum(t_lo, 0.0)
    hit = t_hi > t_near
    return t_near, t_hi, hit


def _fmt(value) -> str:
    return repr(float(value))


def generate_ray(intr: Intrinsics, pose: Pose, u: float, v: float,
                 aabb: np.ndarray) -> Ray | None:
    """Cast the ray through continuous pixel (u, v); None when it misses the box."""
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = pose.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    t_near, t_far, hit = intersect_aabb(pose.center[None], d_world[None], aabb)
    if not hit[0]:
        return None
    return Ray(origin=pose.center.copy(), direction=d_world,
               t_near=float(t_near[0]), t_far=float(t_far[0]))


def view_rays(intr: Intrinsics, pose: Pose, aabb: np.ndarray):
    """Rays through every pixel center of the sensor, row-major.

    Returns (origins (N,3), directions (N,3), t_near (N,), t_far (N,),
    hit (N,)) with N = width*height. Misses carry t_near = t_far = 0.
    """
    uu, vv = np.meshgrid(np.arange(intr.width) + 0.5,
                         np.arange(intr.height) + 0.5)
    d_cam = np.stack([(uu.ravel() - intr.cx) / intr.fx,
                      (vv.ravel() - intr.cy) / intr.fy,
                      np.ones(uu.size)], axis=1)
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.center, d_world.shape).copy()
    t_near, t_far, hit = intersect_aabb(origins, d_world, aabb)
    t_near = np.where(hit, t_near, 0.0)
    t_far = np.where(hit, t_far, 0.0)
    return origins, d_world, t_near, t_far, hit


def qvec_to_rotation(qvec) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion."""
    w, x, y, z = np.asarray(qvec, dtype=np.float64) / np.linalg.norm(qvec)
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def rotation_to_qvec(rot: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion from a rotation matrix, w >= 0."""
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = np.asarray(rot).flat
    k = np.array([
        [rxx - ryy - rzz, 0, 0, 0],
        [ryx + rxy, ryy - rxx - rzz, 0, 0],
        [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
        [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(k)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec = -qvec
    return qvec


def slerp(qa, qb, t: float) -> np.ndarray:
    """Shortest-path spherical interpolation between (w,x,y,z) quaternions."""
    qa = np.asarray(qa, dtype=np.float64) / np.linalg.norm(qa)
    qb = np.asarray(qb, dtype=np.float64) / np.linalg.norm(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb, dot = -qb, -dot
    if dot > 1.0 - 1e-10:
        out = qa + t * (qb - qa)
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    return (np.sin((1.0 - t) * theta) * qa + np.sin(t * theta) * qb) / np.sin(theta)


def _parse_colmap_cameras(path: Path) -> dict[int, Intrinsics]:
    cameras = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            elems = line.split()
            cam_id, model = int(elems[0]), elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = [float(p) for p in elems[4:]]
            if model == "PINHOLE":
                fx, fy, cx, cy = params[:4]
            elif model == "SIMPLE_PINHOLE":
                fx = fy = params[0]
                cx, cy = params[1], params[2]
            else:
                raise FormatError(
                    f"unsupported COLMAP camera model {model!r}; only PINHOLE "
                    "and SIMPLE_PINHOLE are handled (images must be pre-undistorted)")
            cameras[cam_id] = Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy,
                                         width=width, height=height)
    return cameras


def _parse_colmap_images(path: Path):
    records = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if not ln.strip().startswith("#")]
    # two lines per image: pose line, then 2D-point observations, which may be
    # an empty line (blank lines between records are tolerated)
    i = 0
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        elems = lines[i].split()
        qvec = np.array([float(e) for e in elems[1:5]])
        tvec = np.array([float(e) for e in elems[5:8]])
        cam_id = int(elems[8])
        name = elems[9]
        records.append((name, qvec, tvec, cam_id))
        i += 2
    return records


def import_colmap(model_dir, images_dir=None) -> SceneManifest:
    """Build a manifest from a COLMAP text model (cameras.txt + images.txt).

    COLMAP stores world-to-camera quaternion+translation; entries come out as
    camera-to-world poses sorted by image name. When `images_dir` is given,
    entries whose image file is missing are skipped with a warning.
    """
    model_dir = Path(model_dir)
    cameras = _parse_colmap_cameras(model_dir / "cameras.txt")
    records = _parse_colmap_images(model_dir / "images.txt")
    entries = []
    for name, qvec, tvec, cam_id in sorted(records, key=lambda r: r[0]):
        if cam_id not in cameras:
            raise FormatError(f"image {name!r} references unknown camera {cam_id}")
        image_path = str(Path(images_dir) / name) if images_dir else name
        if images_dir and not Path(image_path).exists():
            log.warning("skipping %s: image file not found", image_path)
            continue
        r_w2c = qvec_to_rotation(qvec)
        rotation = r_w2c.T
        center = -r_w2c.T @ tvec
        entries.append(SceneEntry(image_path=image_path,
                                  intrinsics=cameras[cam_id],
                                  pose=Pose(rotation, center)))
    if not entries:
        raise FormatError(f"no usable images in COLMAP model {model_dir}")
    positions = np.stack([e.pose.center for e in entries])
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    pad = np.maximum((hi - lo) * 0.5, 0.5)
    return SceneManifest(entries=tuple(entries), aabb=np.stack([lo - pad, hi + pad]))


def normalize_scene(manifest: SceneManifest) -> tuple[SceneManifest, SceneTransform]:
    """Map camera positions into the central half of the unit cube.

    Uniform scale + translation only; the camera-position centroid lands on
    (0.5, 0.5, 0.5) and every position fits in [0.25, 0.75]^3. The returned
    transform maps old world coordinates to new ones.
    """
    positions = manifest.camera_positions()
    if len(positions) < 2:
        raise ConfigError("scene normalization needs at least 2 camera positions")
    centroid = positions.mean(axis=0)
    spread = np.abs(positions - centroid).max()
    if spread < 1e-12:
        raise DegenerateSceneError("all camera positions coincide")
    scale = 0.25 / spread
    offset = 0.5 - centroid * scale
    transform = SceneTransform(scale=float(scale), offset=offset)
    entries = tuple(
        replace(e, pose=Pose(e.pose.rotation, transform.apply(e.pose.center)))
        for e in manifest.entries)
    aabb = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    return SceneManifest(entries=entries, aabb=aabb), transform


MANIFEST_HEADER = "marf-scene 1"


def save_manifest(manifest: SceneManifest, path) -> None:
    """Write the native scene manifest text format (see load_manifest)."""
    lines = [MANIFEST_HEADER,
             "aabb " + " ".join(_fmt(v) for v in manifest.aabb.ravel())]
    for e in manifest.entries:
        i = e.intrinsics
        c2w = np.eye(4)
        c2w[:3, :3] = e.pose.rotation
        c2w[:3, 3] = e.pose.center
        lines.append(f"entry {e.image_path}")
        lines.append(f"intrinsics {_fmt(i.fx)} {_fmt(i.fy)} {_fmt(i.cx)} "
                     f"{_fmt(i.cy)} {i.width} {i.height}")
        lines.append("c2w " + " ".join(_fmt(v) for v in c2w.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> SceneManifest:
    """Read the native scene manifest format.

    Schema: a `marf-scene 1` header, one `aabb x0 y0 z0 x1 y1 z1` line, then
    per image three lines: `entry <path>`, `intrinsics fx fy cx cy w h`,
    `c2w <16 row-major floats>` (camera-to-world).
    """
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(f"{path}: missing '{MANIFEST_HEADER}' header")
    if not lines[1].startswith("aabb "):
        raise FormatError(f"{path}: expected aabb line after header")
    aabb = np.array([float(v) for v in lines[1].split()[1:]]).reshape(2, 3)
    entries = []
    idx = 2
    while idx < len(lines):
        if not lines[idx].startswith("entry "):
            raise FormatError(f"{path}: expected 'entry' at line {idx + 1}")
        image_path = lines[idx].split(maxsplit=1)[1]
        intr_vals = lines[idx + 1].split()[1:]
        c2w = np.array([float(v) for v in lines[idx + 2].split()[1:]]).reshape(4, 4)
        intr = Intrinsics(fx=float(intr_vals[0]), fy=float(intr_vals[1]),
                          cx=float(intr_vals[2]), cy=float(intr_vals[3]),
                          width=int(intr_vals[4]), height=int(intr_vals[5]))
        entries.append(SceneEntry(image_path=image_path, intrinsics=intr,
                                  pose=Pose(c2w[:3, :3], c2w[:3, 3])))
        idx += 3
    return SceneManifest(entries=tuple(entries), aabb=aabb)
