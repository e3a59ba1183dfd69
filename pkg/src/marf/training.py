"""Optimization of grid + MLP against training views, PSNR, random search.

The loss is the mean squared error between rendered and reference ray colors;
updates use the adaptive-moment method (beta1=0.9, beta2=0.99, eps=1e-15)
with a cosine learning-rate decay. Hash-table gradients are divided by their
per-step touch counts before the update (collision averaging).
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .cameras import SceneManifest, view_rays
from .errors import ConfigError, FormatError, NumericalError
from .field import (MLPParams, RadianceField, direction_encode, field_backward,
                    field_forward)
from .hashgrid import HashGrid, HashGridConfig
from .images import ImageBuffer, load_image
from .render import composite, composite_backward, render_view, sample_uniform

CHECKPOINT_MAGIC = b"MARF"
CHECKPOINT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.99
ADAM_EPS = 1e-15
DEFAULT_CHECKPOINT_TIMES = (10.0, 60.0, 300.0, 600.0, 900.0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    lr_final: float = 1e-4
    batch_size: int = 512           # rays per step
    samples_per_ray: int = 32
    budget_steps: int | None = 20000
    budget_seconds: float | None = None
    schedule_steps: int = 20000     # cosine decay horizon
    grid: HashGridConfig = HashGridConfig()
    seed: int = 0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hidden: int = 64
    geo_features: int = 15
    dir_frequencies: int = 4
    deterministic: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.samples_per_ray <= 0:
            raise ConfigError("rates and sizes must be positive")


def config_to_text(config: TrainConfig) -> str:
    """Flat key=value serialization used inside checkpoints."""
    lines = [
        f"learning_rate={config.learning_rate!r}",
        f"lr_final={config.lr_final!r}",
        f"batch_size={config.batch_size}",
        f"samples_per_ray={config.samples_per_ray}",
        f"budget_steps={'' if config.budget_steps is None else config.budget_steps}",
        f"budget_seconds={'' if config.budget_seconds is None else repr(config.budget_seconds)}",
        f"schedule_steps={config.schedule_steps}",
        f"grid_levels={config.grid.levels}",
        f"grid_min_resolution={config.grid.min_resolution}",
        f"grid_max_resolution={config.grid.max_resolution}",
        f"grid_table_size={config.grid.table_size}",
        f"grid_features_per_level={config.grid.features_per_level}",
        f"seed={config.seed}",
        "background=" + ",".join(repr(c) for c in config.background),
        f"hidden={config.hidden}",
        f"geo_features={config.geo_features}",
        f"dir_frequencies={config.dir_frequencies}",
        f"deterministic={int(config.deterministic)}",
    ]
    return "\n".join(lines)


def config_from_text(text: str) -> TrainConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    try:
        grid = HashGridConfig(
            levels=int(kv["grid_levels"]),
            min_resolution=int(kv["grid_min_resolution"]),
            max_resolution=int(kv["grid_max_resolution"]),
            table_size=int(kv["grid_table_size"]),
            features_per_level=int(kv["grid_features_per_level"]),
        )
        return TrainConfig(
            learning_rate=float(kv["learning_rate"]),
            lr_final=float(kv["lr_final"]),
            batch_size=int(kv["batch_size"]),
            samples_per_ray=int(kv["samples_per_ray"]),
            budget_steps=int(kv["budget_steps"]) if kv.get("budget_steps") else None,
            budget_seconds=float(kv["budget_seconds"]) if kv.get("budget_seconds") else None,
            schedule_steps=int(kv["schedule_steps"]),
            grid=grid,
            seed=int(kv["seed"]),
            background=tuple(float(c) for c in kv["background"].split(",")),
            hidden=int(kv["hidden"]),
            geo_features=int(kv["geo_features"]),
            dir_frequencies=int(kv["dir_frequencies"]),
            deterministic=bool(int(kv.get("deterministic", "0"))),
        )
    except KeyError as exc:
        raise FormatError(f"config text missing key {exc}") from exc


@dataclass
class Checkpoint:
    config: TrainConfig
    tables: np.ndarray
    params: MLPParams
    step: int
    running_psnr: float
    version: int = CHECKPOINT_VERSION

    def to_field(self) -> RadianceField:
        grid = HashGrid(self.config.grid, dtype=np.float32, tables=self.tables)
        return RadianceField(grid=grid, params=self.params)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Bit-exact container: magic, version, config text, named f32 sections."""
    header = (config_to_text(ckpt.config)
              + f"\nstep={ckpt.step}\nrunning_psnr={ckpt.running_psnr!r}\n")
    header_bytes = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        sections = [("grid.tables", ckpt.tables)] + ckpt.params.named_arrays()
        for name, arr in sections:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        version, = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header_len, = struct.unpack("<I", fh.read(4))
        header = fh.read(header_len).decode("utf-8")
        arrays = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            name_len, = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            ndim, = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            arrays[name] = np.ascontiguousarray(data, dtype=np.float32)
    kv = dict(line.split("=", 1) for line in header.splitlines() if "=" in line)
    config = config_from_text(header)
    missing = [n for n in ("grid.tables", *MLPParams.NAMES) if n not in arrays]
    if missing:
        raise FormatError(f"{path}: missing sections {missing}")
    params = MLPParams(**{n: arrays[n] for n in MLPParams.NAMES})
    return Checkpoint(config=config, tables=arrays["grid.tables"], params=params,
                      step=int(kv["step"]), running_psnr=float(kv["running_psnr"]),
                      version=version)


def mse_loss(rendered: np.ndarray, truth: np.ndarray):
    """Mean squared error over all components and its gradient on `rendered`."""
    rendered = np.asarray(rendered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if rendered.shape != truth.shape:
        raise ConfigError(f"shape mismatch {rendered.shape} vs {truth.shape}")
    diff = rendered - truth
    loss = float(np.mean(diff ** 2))
    grad = 2.0 * diff / diff.size
    return loss, grad


def psnr(image: ImageBuffer, reference: ImageBuffer) -> float:
    """10*log10(peak^2 / MSE) with peak fixed at 1.0; identical images -> inf."""
    if (image.width, image.height, image.channels) != (
            reference.width, reference.height, reference.channels):
        raise ConfigError("psnr requires identically shaped images")
    mse = float(np.mean((image.data.astype(np.float64)
                         - reference.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def scene_psnr(references, rendered) -> float:
    """Mean per-view PSNR; infinite entries are excluded with a warning."""
    references = list(references)
    rendered = list(rendered)
    if not references:
        raise ConfigError("scene PSNR needs at least one view")
    if len(references) != len(rendered):
        raise ConfigError("view lists differ in length")
    values = [psnr(img, ref) for img, ref in zip(rendered, references)]
    finite = [v for v in values if np.isfinite(v)]
    if len(finite) != len(values):
        warnings.warn("excluding infinite PSNR entries from scene mean")
    if not finite:
        return float("inf")
    return float(np.mean(finite))


class RayBank:
    """All training rays of a scene, flattened for uniform pixel sampling.

    Rays that miss the scene bounds carry no trainable signal and are dropped.
    """

    def __init__(self, manifest: SceneManifest, images=None):
        origins, dirs, nears, fars, colors = [], [], [], [], []
        for idx, entry in enumerate(manifest.entries):
            img = images[idx] if images is not None else load_image(entry.image_path)
            intr = entry.intrinsics
            if (img.width, img.height) != (intr.width, intr.height):
                raise ConfigError(
                    f"{entry.image_path}: image {img.width}x{img.height} does not "
                    f"match intrinsics {intr.width}x{intr.height}")
            o, d, tn, tf, hit = view_rays(intr, entry.pose, manifest.aabb)
            rgb = img.data if img.channels == 3 else np.repeat(img.data, 3, axis=2)
            rgb = rgb.reshape(-1, 3)
            origins.append(o[hit])
            dirs.append(d[hit])
            nears.append(tn[hit])
            fars.append(tf[hit])
            colors.append(rgb[hit])
        if not origins or sum(len(o) for o in origins) == 0:
            raise ConfigError("no training rays intersect the scene bounds")
        self.origins = np.concatenate(origins).astype(np.float64)
        self.directions = np.concatenate(dirs).astype(np.float64)
        self.t_near = np.concatenate(nears).astype(np.float64)
        self.t_far = np.concatenate(fars).astype(np.float64)
        self.colors = np.concatenate(colors).astype(np.float64)

    def __len__(self) -> int:
        return self.origins.shape[0]


class TrainerState:
    """Field parameters plus optimizer moments and the sampling RNG."""

    def __init__(self, config: TrainConfig, dtype=np.float32):
        self.config = config
        self.field = RadianceField.create(
            config.grid, seed=config.seed, hidden=config.hidden,
            geo_features=config.geo_features, frequencies=config.dir_frequencies,
            dtype=dtype)
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.running_psnr = float("nan")
        self._moments = {
            name: (np.zeros_like(arr), np.zeros_like(arr))
            for name, arr in self.field.named_parameters()}

    def learning_rate(self) -> float:
        cfg = self.config
        horizon = max(1, cfg.schedule_steps)
        frac = min(self.step / horizon, 1.0)
        return cfg.lr_final + 0.5 * (cfg.learning_rate - cfg.lr_final) * (
            1.0 + np.cos(np.pi * frac))

    def adam_update(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float):
        m, v = self._moments[name]
        grad = grad.astype(param.dtype, copy=False)
        m += (1.0 - ADAM_BETA1) * (grad - m)
        v += (1.0 - ADAM_BETA2) * (grad * grad - v)
        t = self.step + 1
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(param.dtype)

    def checkpoint(self) -> Checkpoint:
        params = MLPParams(**{name: arr.astype(np.float32, copy=True)
                              for name, arr in self.field.params.named_arrays()})
        return Checkpoint(config=self.config,
                          tables=self.field.grid.tables.astype(np.float32, copy=True),
                          params=params, step=self.step,
                          running_psnr=float(self.running_psnr))


def train_step(state: TrainerState, origins, directions, t_near, t_far,
               target_rgb) -> float:
    """One optimization step over a ray batch; returns the batch loss."""
    cfg = state.config
    rng = None if cfg.deterministic else state.rng
    samples = sample_uniform(t_near, t_far, cfg.samples_per_ray, rng=rng)
    pts = origins[:, None, :] + samples.t[:, :, None] * directions[:, None, :]
    flat_pts = pts.reshape(-1, 3)
    grid = state.field.grid
    params = state.field.params
    # directions are constant along each ray: encode once per ray, repeat
    ray_denc = direction_encode(directions, params.frequencies)
    denc = np.repeat(ray_denc, cfg.samples_per_ray, axis=0)
    sigma, rgb, cache = field_forward(grid, params, flat_pts, directions,
                                      want_cache=True, direction_encoding=denc)
    shape = samples.t.shape
    sigma64 = sigma.reshape(shape).astype(np.float64)
    rgb64 = rgb.reshape(shape + (3,)).astype(np.float64)
    color, _opacity = composite(sigma64, rgb64, samples.delta, cfg.background)
    loss, d_color = mse_loss(color, target_rgb)
    if not np.isfinite(loss):
        raise NumericalError(
            f"non-finite loss at step {state.step} (lr={state.learning_rate():.3e})")
    d_sigma, d_rgb = composite_backward(sigma64, rgb64, samples.delta,
                                        cfg.background, d_color)
    grads, grid_grad = field_backward(grid, params, cache,
                                      d_sigma.reshape(-1), d_rgb.reshape(-1, 3))
    lr = state.learning_rate()
    state.adam_update("grid.tables", grid.tables, grid_grad.averaged(), lr)
    for name, param in params.named_arrays():
        state.adam_update(name, param, grads[name], lr)
    state.step += 1
    step_psnr = 10.0 * np.log10(1.0 / max(loss, 1e-12))
    if np.isnan(state.running_psnr):
        state.running_psnr = step_psnr
    else:
        state.running_psnr += 0.1 * (step_psnr - state.running_psnr)
    return loss


def train(manifest: SceneManifest, config: TrainConfig,
          budget_steps: int | None = None, budget_seconds: float | None = None,
          images=None, checkpoint_times=DEFAULT_CHECKPOINT_TIMES,
          on_checkpoint=None) -> Checkpoint:
    """Train a field on all manifest views; returns the final checkpoint.

    Ray batches are drawn uniformly over all training pixels with replacement.
    `on_checkpoint(elapsed_seconds, checkpoint)` fires at each configured
    wall-clock mark. Budgets default to the config; when both steps and
    seconds are set, whichever is exhausted first ends training.
    """
    if budget_steps is None:
        budget_steps = config.budget_steps
    if budget_seconds is None:
        budget_seconds = config.budget_seconds
    bank = RayBank(manifest, images=images)
    state = TrainerState(config)
    start = time.monotonic()
    pending = sorted(t for t in (checkpoint_times or ()) if budget_seconds is None
                     or t <= budget_seconds)
    while True:
        if budget_steps is not None and state.step >= budget_steps:
            break
        elapsed = time.monotonic() - start
        if budget_seconds is not None and elapsed >= budget_seconds:
            break
        while pending and elapsed >= pending[0]:
            mark = pending.pop(0)
            if on_checkpoint is not None:
                on_checkpoint(mark, state.checkpoint())
        idx = state.rng.integers(0, len(bank), size=config.batch_size)
        train_step(state, bank.origins[idx], bank.directions[idx],
                   bank.t_near[idx], bank.t_far[idx], bank.colors[idx])
    elapsed = time.monotonic() - start
    while pending and elapsed >= pending[0]:
        mark = pending.pop(0)
        if on_checkpoint is not None:
            on_checkpoint(mark, state.checkpoint())
    return state.checkpoint()


@dataclass(frozen=True)
class SearchSpace:
    """Per-hyper-parameter sampling ranges for random search."""

    learning_rate: tuple[float, float] = (1e-3, 3e-2)       # log-uniform
    table_size: tuple[int, int] = (2 ** 14, 2 ** 18)         # log-uniform pow2
    levels: tuple[int, int] = (4, 16)                        # uniform integer
    samples_per_ray: tuple[int, int] = (16, 64)              # uniform integer

    def sample(self, rng) -> dict:
        lr = float(np.exp(rng.uniform(np.log(self.learning_rate[0]),
                                      np.log(self.learning_rate[1]))))
        lo_exp = int(np.log2(self.table_size[0]))
        hi_exp = int(np.log2(self.table_size[1]))
        table = 2 ** int(rng.integers(lo_exp, hi_exp + 1))
        levels = int(rng.integers(self.levels[0], self.levels[1] + 1))
        spr = int(rng.integers(self.samples_per_ray[0], self.samples_per_ray[1] + 1))
        return {"learning_rate": lr, "table_size": table, "levels": levels,
                "samples_per_ray": spr}

    def contains(self, params: dict) -> bool:
        return (self.learning_rate[0] <= params["learning_rate"] <= self.learning_rate[1]
                and self.table_size[0] <= params["table_size"] <= self.table_size[1]
                and self.levels[0] <= params["levels"] <= self.levels[1]
                and self.samples_per_ray[0] <= params["samples_per_ray"]
                <= self.samples_per_ray[1])


@dataclass
class TrialResult:
    trial: int
    params: dict
    psnr: float
    wall_time: float
    note: str = ""


def apply_sampled_params(base: TrainConfig, params: dict) -> TrainConfig:
    grid = replace(base.grid, levels=params["levels"],
                   table_size=params["table_size"])
    return replace(base, learning_rate=params["learning_rate"],
                   samples_per_ray=params["samples_per_ray"], grid=grid)


def split_holdout(manifest: SceneManifest, seed: int, fraction: float = 0.1):
    """Deterministic train/held-out view split (held-out gets at least 1 view)."""
    n = len(manifest.entries)
    if n < 2:
        raise ConfigError("random search needs at least 2 views to hold one out")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_hold = max(1, int(round(fraction * n)))
    hold = set(order[:n_hold].tolist())
    train_entries = tuple(e for i, e in enumerate(manifest.entries) if i not in hold)
    hold_entries = tuple(e for i, e in enumerate(manifest.entries) if i in hold)
    return (SceneManifest(entries=train_entries, aabb=manifest.aabb),
            SceneManifest(entries=hold_entries, aabb=manifest.aabb))


def evaluate_config(config: TrainConfig, train_manifest: SceneManifest,
                    holdout_manifest: SceneManifest,
                    budget_steps: int | None, budget_seconds: float | None,
                    render_samples: int = 64) -> tuple[float, str]:
    """Train on the train split and score held-out views by mean PSNR."""
    mid_psnr = {}

    def capture(mark, ckpt):
        mid_psnr[mark] = ckpt.running_psnr

    ckpt = train(train_manifest, config, budget_steps=budget_steps,
                 budget_seconds=budget_seconds,
                 checkpoint_times=(budget_seconds / 2,) if budget_seconds else (),
                 on_checkpoint=capture)
    trained = ckpt.to_field()
    rendered, truths = [], []
    for entry in holdout_manifest.entries:
        view = render_view(trained.field_fn, entry.intrinsics, entry.pose,
                           holdout_manifest.aabb, count=render_samples,
                           background=config.background)
        rendered.append(view.image)
        truths.append(load_image(entry.image_path))
    score = scene_psnr(truths, rendered)
    note = ""
    if mid_psnr and ckpt.running_psnr < min(mid_psnr.values()) - 0.1:
        note = "psnr-decreasing"
    return score, note


def random_search(manifest: SceneManifest, space: SearchSpace, trials: int,
                  budget_steps: int | None = None,
                  budget_seconds: float | None = None, seed: int = 0,
                  base_config: TrainConfig | None = None,
                  holdout_fraction: float = 0.1, evaluator=None):
    """Random hyper-parameter search scored on a held-out view split.

    Returns (best TrainConfig, [TrialResult...]). `evaluator` may replace the
    default train-and-score routine (signature: config, train_manifest,
    holdout_manifest, budget_steps, budget_seconds -> (psnr, note)).
    """
    if trials < 1:
        raise ConfigError("random search needs at least one trial")
    base = base_config or TrainConfig()
    train_manifest, holdout_manifest = split_holdout(manifest, seed,
                                                     holdout_fraction)
    rng = np.random.default_rng(seed)
    evaluator = evaluator or evaluate_config
    results = []
    best = None
    best_config = None
    for trial in range(trials):
        params = space.sample(rng)
        config = apply_sampled_params(base, params)
        started = time.monotonic()
        score, note = evaluator(config, train_manifest, holdout_manifest,
                                budget_steps, budget_seconds)
        result = TrialResult(trial=trial, params=params, psnr=float(score),
                             wall_time=time.monotonic() - started, note=note)
        results.append(result)
        if best is None or result.psnr > best:
            best = result.psnr
            best_config = config
    return best_config, results


def write_trial_table(results, path) -> None:
    """Tab-separated trial table: id, sampled parameters, PSNR, wall time."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial\tlearning_rate\ttable_size\tlevels\tsamples_per_ray"
                 "\theldout_psnr\twall_seconds\tnote\n")
        for r in results:
            p = r.params
            fh.write(f"{r.trial}\t{p['learning_rate']:.6g}\t{p['table_size']}"
                     f"\t{p['levels']}\t{p['samples_per_ray']}\t{r.psnr:.4f}"
                     f"\t{r.wall_time:.2f}\t{r.note}\n")
