"""Six-stage quality filter bank deciding which corpus images train the field.

Stage order: (a) file size, (b) pixel shape, (c) perceptual-hash dedupe,
(d) grayscale, (e) saturation histogram, (f) blur. Rejection is attributed to
the first failing stage; saturation statistics are computed over the survivors
of stages (a)-(d).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.signal
from PIL import Image

from .errors import ConfigError, DecodeError, FormatError
from .images import ImageBuffer, load_image, to_grayscale

LAPLACIAN_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)

# blur thresholds are conventionally quoted for 0..255 intensities; the
# variance of a linear filter response scales by 255^2
BLUR_VARIANCE_SCALE = 255.0 ** 2

STAGE_LOAD = "load"
STAGE_SIZE = "size"
STAGE_SHAPE = "shape"
STAGE_DEDUPE = "dedupe"
STAGE_GRAYSCALE = "grayscale"
STAGE_HISTOGRAM = "histogram"
STAGE_BLUR = "blur"
STAGES = (STAGE_LOAD, STAGE_SIZE, STAGE_SHAPE, STAGE_DEDUPE,
          STAGE_GRAYSCALE, STAGE_HISTOGRAM, STAGE_BLUR)


@dataclass(frozen=True)
class FilterConfig:
    min_file_bytes: int = 10240
    min_width: int = 128
    min_height: int = 128
    phash_hamming_threshold: int = 5
    blur_threshold: float = 100.0  # on intensities scaled x255 before variance
    histogram_std_multiplier: float = 1.0
    histogram_pixel_fraction: float = 0.5

    def __post_init__(self):
        if min(self.min_file_bytes, self.min_width, self.min_height,
               self.phash_hamming_threshold) < 0:
            raise ConfigError("filter thresholds must be nonnegative")
        if self.blur_threshold < 0 or self.histogram_std_multiplier < 0:
            raise ConfigError("filter thresholds must be nonnegative")
        if not 0.0 < self.histogram_pixel_fraction <= 1.0:
            raise ConfigError("histogram_pixel_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class PerceptualHash:
    """64-bit DCT hash; similar images land within a small Hamming distance."""

    bits: int

    def hamming(self, other: "PerceptualHash") -> int:
        return (self.bits ^ other.bits).bit_count()


@dataclass
class Verdict:
    path: str
    kept: bool
    stage: str | None = None  # first failing stage when rejected
    reason: str = ""
    metric: float | None = None


@dataclass
class FilterReport:
    verdicts: list[Verdict] = field(default_factory=list)
    saturation_mean: float | None = None
    saturation_std: float | None = None

    @property
    def kept_paths(self) -> list[str]:
        return [v.path for v in self.verdicts if v.kept]

    @property
    def stage_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in STAGES}
        for v in self.verdicts:
            if not v.kept:
                counts[v.stage] += 1
        return counts

    def to_table(self) -> str:
        lines = [f"{'path':<48} {'verdict':<9} {'stage':<10} metric"]
        for v in self.verdicts:
            metric = "" if v.metric is None else f"{v.metric:.6g}"
            lines.append(f"{v.path:<48} {'kept' if v.kept else 'rejected':<9} "
                         f"{v.stage or '':<10} {metric}")
        counts = self.stage_counts
        kept = len(self.kept_paths)
        lines.append(f"# kept {kept} / {len(self.verdicts)}; rejected by stage: "
                     + ", ".join(f"{s}={counts[s]}" for s in STAGES if counts[s]))
        if self.saturation_mean is not None:
            lines.append(f"# saturation mean={self.saturation_mean:.6g} "
                         f"std={self.saturation_std:.6g}")
        return "\n".join(lines)

    def write_records(self, path) -> None:
        """One tab-separated key=value record per image."""
        with open(path, "w", encoding="utf-8") as fh:
            for v in self.verdicts:
                fields = [f"path={v.path}",
                          f"verdict={'kept' if v.kept else 'rejected'}",
                          f"stage={v.stage or ''}",
                          f"metric={'' if v.metric is None else repr(v.metric)}"]
                if v.reason:
                    fields.append(f"reason={v.reason}")
                fh.write("\t".join(fields) + "\n")


def filter_file_size(path, min_bytes: int) -> bool:
    """Pass iff the on-disk size is at least `min_bytes` (strict < rejects)."""
    size = os.stat(path).st_size
    return size >= min_bytes


def filter_shape(img: ImageBuffer, min_width: int, min_height: int) -> bool:
    return img.width >= min_width and img.height >= min_height


def perceptual_hash(img: ImageBuffer) -> PerceptualHash:
    """DCT-based 64-bit hash.

    Grayscale, bilinear resize to 32x32, 2D DCT-II, keep the top-left 8x8
    block minus the DC term (63 coefficients); each bit is coefficient >
    median of the retained 63, packed row-major MSB-first, with the final
    64th bit fixed to 0.
    """
    gray = to_grayscale(img).data[:, :, 0].astype(np.float32)
    small = Image.fromarray(gray, mode="F").resize((32, 32), Image.BILINEAR)
    coefs = scipy.fft.dctn(np.asarray(small, dtype=np.float64), type=2)
    block = coefs[:8, :8].ravel()[1:]  # row-major, DC excluded
    median = np.median(block)
    bits = 0
    for c in block:
        bits = (bits << 1) | int(c > median)
    return PerceptualHash(bits=bits << 1)  # trailing padding bit = 0


def dedupe(items, threshold: int, sizes=None):
    """Greedy duplicate grouping over (id, PerceptualHash) pairs.

    Scanning in input order, an item joins the first group whose founding
    hash is within `threshold` Hamming bits, else founds a new group. From
    each group the image with the largest pixel count is kept (ties broken by
    lexicographically smallest id; without `sizes` all counts are equal).

    Returns (kept_ids, groups) with groups as lists of member ids.
    """
    sizes = sizes or {}
    groups: list[tuple[PerceptualHash, list]] = []
    for item_id, item_hash in items:
        for rep_hash, members in groups:
            if rep_hash.hamming(item_hash) <= threshold:
                members.append(item_id)
                break
        else:
            groups.append((item_hash, [item_id]))
    kept = [min(members, key=lambda i: (-sizes.get(i, 0), str(i)))
            for _, members in groups]
    return kept, [members for _, members in groups]


def is_grayscale(img: ImageBuffer) -> bool:
    """True for 1-channel images and RGB images with R=G=B within 1/255."""
    if img.channels == 1:
        return True
    spread = img.data.max(axis=2) - img.data.min(axis=2)
    return bool(spread.max() <= 1.0 / 255.0 + 1e-9)


def pixel_saturation(img: ImageBuffer) -> np.ndarray:
    """Per-pixel HSV saturation (max-min)/max, 0 where max == 0."""
    if img.channels != 3:
        raise ConfigError("saturation requires a 3-channel image")
    cmax = img.data.max(axis=2)
    cmin = img.data.min(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(cmax > 0, (cmax - cmin) / cmax, 0.0)
    return sat


def saturation_statistics(corpus) -> tuple[float, float]:
    """Mean and population std of per-image mean saturation across the corpus."""
    means = [float(pixel_saturation(img).mean()) for img in corpus]
    if not means:
        raise ConfigError("saturation statistics need a nonempty corpus")
    arr = np.asarray(means, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def filter_color_histogram(img: ImageBuffer, stats, multiplier: float = 1.0,
                           fraction: float = 0.5) -> bool:
    """Pass unless more than `fraction` of pixels sit outside mean +/- k*std."""
    mean, std = stats
    sat = pixel_saturation(img)
    outliers = np.abs(sat - mean) > multiplier * std
    return float(outliers.mean()) <= fraction


def laplacian_variance(img: ImageBuffer) -> float:
    """Population variance of the valid-region 4-neighbor Laplacian response."""
    if img.width < 3 or img.height < 3:
        raise ConfigError("laplacian variance needs at least a 3x3 image")
    gray = to_grayscale(img).data[:, :, 0].astype(np.float64)
    response = scipy.signal.convolve2d(gray, LAPLACIAN_KERNEL, mode="valid")
    return float(response.var())


def run_filter_bank(manifest, config: FilterConfig) -> FilterReport:
    """Apply the full filter stack to a list of image paths.

    Unreadable files are recorded as rejected at the `load` stage without
    aborting the batch. The report is deterministic given manifest + config.
    """
    report = FilterReport()
    verdict_by_path: dict[str, Verdict] = {}
    loaded: list[tuple[str, ImageBuffer]] = []

    for raw_path in manifest:
        path = str(raw_path)
        if path in verdict_by_path:
            continue  # repeated manifest lines name the same image once
        verdict = Verdict(path=path, kept=False)
        report.verdicts.append(verdict)
        verdict_by_path[path] = verdict
        try:
            if not filter_file_size(path, config.min_file_bytes):
                verdict.stage = STAGE_SIZE
                verdict.reason = f"file smaller than {config.min_file_bytes} bytes"
                verdict.metric = float(os.stat(path).st_size)
                continue
            img = load_image(path)
        except (OSError, DecodeError, FormatError) as exc:
            verdict.stage = STAGE_LOAD
            verdict.reason = str(exc)
            continue
        if not filter_shape(img, config.min_width, config.min_height):
            verdict.stage = STAGE_SHAPE
            verdict.reason = f"{img.width}x{img.height} below minimum"
            verdict.metric = float(min(img.width, img.height))
            continue
        loaded.append((path, img))

    hashes = [(path, perceptual_hash(img)) for path, img in loaded]
    pixel_counts = {path: img.pixel_count for path, img in loaded}
    kept_ids, groups = dedupe(hashes, config.phash_hamming_threshold, pixel_counts)
    kept_set = set(kept_ids)
    for members in groups:
        keeper = next(m for m in members if m in kept_set)
        for member in members:
            if member != keeper:
                v = verdict_by_path[member]
                v.stage = STAGE_DEDUPE
                v.reason = f"duplicate of {keeper}"

    survivors = []
    for path, img in loaded:
        if path not in kept_set:
            continue
        if is_grayscale(img):
            v = verdict_by_path[path]
            v.stage = STAGE_GRAYSCALE
            v.reason = "grayscale content"
            continue
        survivors.append((path, img))

    if survivors:
        stats = saturation_statistics(img for _, img in survivors)
        report.saturation_mean, report.saturation_std = stats
        for path, img in survivors:
            v = verdict_by_path[path]
            sat = pixel_saturation(img)
            outlier_frac = float((np.abs(sat - stats[0])
                                  > config.histogram_std_multiplier * stats[1]).mean())
            if outlier_frac > config.histogram_pixel_fraction:
                v.stage = STAGE_HISTOGRAM
                v.reason = "saturation histogram outlier"
                v.metric = outlier_frac
                continue
            blur = laplacian_variance(img) * BLUR_VARIANCE_SCALE
            if blur < config.blur_threshold:
                v.stage = STAGE_BLUR
                v.reason = "sharpness below threshold"
                v.metric = blur
                continue
            v.kept = True
            v.metric = blur
    return report
