"""Command-line pipeline: fetch, filter, import-poses, train, render, psnr,
search, bootstrap, flythrough.

Every run appends a record to the workspace run manifest (stage, config hash,
input hashes, seed, wall time) so a run can be reproduced; re-running a
pipeline stage with unchanged inputs is a no-op. Exit codes: 0 success,
1 user/configuration error, 2 internal or numerical error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import os
import sys
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cameras import import_colmap, load_manifest, normalize_scene, save_manifest
from .errors import ConfigError, DecodeError, FormatError, MarfError, NumericalError
from .filters import FilterConfig, run_filter_bank
from .images import load_image, save_image, ImageBuffer
from .render import DEFAULT_SAMPLES, render_view
from .training import (SearchSpace, TrainConfig, config_from_text,
                       config_to_text, load_checkpoint, psnr, random_search,
                       save_checkpoint, split_holdout, train, write_trial_table)
from .uncertainty import (bootstrap_train, BootstrapSet, flythrough,
                          interpolate_poses)

RUN_MANIFEST = "run_manifest.log"
PIPELINE_STAGES = ("filter", "train", "render", "bootstrap")


@dataclass
class PipelineConfig:
    workspace: Path
    filters: FilterConfig
    train: TrainConfig
    search: SearchSpace
    search_trials: int = 8
    bootstrap_replicas: int = 5
    fetch_manifest: Path | None = None
    corpus_manifest: Path | None = None

    @property
    def scene_path(self) -> Path:
        return self.workspace / "scene.txt"

    @property
    def checkpoint_path(self) -> Path:
        return self.workspace / "checkpoint.marf"


def _parse_background(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError("background must be r,g,b")
    return tuple(parts)


def _parse_budget(text: str) -> tuple[int | None, float | None]:
    """'1500' means steps; a trailing s/m/h makes it a wall-clock duration."""
    text = text.strip().lower()
    try:
        if text.endswith("s"):
            return None, float(text[:-1])
        if text.endswith("m"):
            return None, float(text[:-1]) * 60.0
        if text.endswith("h"):
            return None, float(text[:-1]) * 3600.0
        return int(text), None
    except ValueError as exc:
        raise ConfigError(f"cannot parse budget {text!r}") from exc


def load_pipeline_config(path=None, workspace=None) -> PipelineConfig:
    """Read the key=value config file (sections in brackets, flat keys)."""
    import configparser

    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
    pipeline = parser["pipeline"] if parser.has_section("pipeline") else {}
    ws = Path(workspace or pipeline.get("workspace")
              or os.environ.get("MARF_WORKSPACE") or ".")

    fc_kwargs = {}
    if parser.has_section("filter"):
        sec = parser["filter"]
        for key, cast in (("min_file_bytes", int), ("min_width", int),
                          ("min_height", int), ("phash_hamming_threshold", int),
                          ("blur_threshold", float),
                          ("histogram_std_multiplier", float),
                          ("histogram_pixel_fraction", float)):
            if key in sec:
                fc_kwargs[key] = cast(sec[key])
    filters = FilterConfig(**fc_kwargs)

    if parser.has_section("train"):
        text = "\n".join(f"{k}={v}" for k, v in parser["train"].items())
        defaults = config_to_text(TrainConfig())
        merged = {}
        for line in (defaults + "\n" + text).splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                merged[key.strip()] = value.strip()
        train_cfg = config_from_text("\n".join(f"{k}={v}" for k, v in merged.items()))
    else:
        train_cfg = TrainConfig()

    search = SearchSpace()
    trials = 8
    if parser.has_section("search"):
        sec = parser["search"]
        trials = int(sec.get("trials", trials))

        def pair(key, cast, default):
            if key not in sec:
                return default
            lo, hi = sec[key].split(",")
            return (cast(lo), cast(hi))

        search = SearchSpace(
            learning_rate=pair("learning_rate", float, search.learning_rate),
            table_size=pair("table_size", int, search.table_size),
            levels=pair("levels", int, search.levels),
            samples_per_ray=pair("samples_per_ray", int, search.samples_per_ray))

    replicas = 5
    fetch_manifest = corpus_manifest = None
    if pipeline:
        replicas = int(pipeline.get("bootstrap_replicas", replicas))
        if pipeline.get("fetch_manifest"):
            fetch_manifest = Path(pipeline["fetch_manifest"])
        if pipeline.get("corpus_manifest"):
            corpus_manifest = Path(pipeline["corpus_manifest"])
    return PipelineConfig(workspace=ws, filters=filters, train=train_cfg,
                          search=search, search_trials=trials,
                          bootstrap_replicas=replicas,
                          fetch_manifest=fetch_manifest,
                          corpus_manifest=corpus_manifest)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def append_run_record(workspace: Path, stage: str, config_hash: str,
                      input_hash: str, seed, wall: float, status: str) -> None:
    workspace.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).isoformat()
    line = (f"{stamp}\tstage={stage}\tversion={__version__}"
            f"\tconfig={config_hash[:16]}\tinputs={input_hash[:16]}"
            f"\tseed={seed}\twall={wall:.3f}\tstatus={status}\n")
    with open(workspace / RUN_MANIFEST, "a", encoding="utf-8") as fh:
        fh.write(line)


def stage_already_done(workspace: Path, stage: str, config_hash: str,
                       input_hash: str, outputs) -> bool:
    manifest = workspace / RUN_MANIFEST
    if not manifest.exists():
        return False
    if not all(Path(p).exists() for p in outputs):
        return False
    needle = (f"stage={stage}\tversion={__version__}"
              f"\tconfig={config_hash[:16]}\tinputs={input_hash[:16]}")
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if needle in line and line.endswith("status=done"):
            return True
    return False


@dataclass
class FetchResult:
    url: str
    status: str  # fetched | skipped | failed
    detail: str = ""


def _remote_size(url: str, timeout: float) -> int | None:
    request = urllib.request.Request(url, method="HEAD")
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            length = resp.headers.get("Content-Length")
            return int(length) if length is not None else None
    except (urllib.error.URLError, ValueError, OSError):
        return None


def _fetch_one(url: str, dest_dir: Path, retries: int, backoff: float,
               timeout: float) -> FetchResult:
    name = Path(urllib.parse.urlsplit(url).path).name
    if not name:
        return FetchResult(url, "failed", "URL has no basename")
    target = dest_dir / name
    if target.exists():
        remote = _remote_size(url, timeout)
        if remote is not None and remote == target.stat().st_size:
            return FetchResult(url, "skipped", "already present with matching size")
    last_error = ""
    for attempt in range(retries):
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                payload = resp.read()
            tmp = target.with_suffix(target.suffix + ".part")
            tmp.write_bytes(payload)
            tmp.replace(target)
            return FetchResult(url, "fetched", f"{len(payload)} bytes")
        except urllib.error.HTTPError as exc:
            last_error = str(exc)
            if 400 <= exc.code < 500:
                break  # client errors are permanent, not transient
            if attempt + 1 < retries:
                time.sleep(backoff * (2 ** attempt))
        except (urllib.error.URLError, OSError) as exc:
            last_error = str(exc)
            if attempt + 1 < retries:
                time.sleep(backoff * (2 ** attempt))
    return FetchResult(url, "failed", last_error)


def fetch(manifest_path, dest_dir, concurrency: int = 4, retries: int = 3,
          backoff: float = 0.5, timeout: float = 30.0) -> list[FetchResult]:
    """Download every URL in the manifest file into dest_dir (basename kept).

    Present files with matching size are skipped; transient failures retry
    with exponential backoff. Results preserve manifest order.
    """
    urls = [ln.strip() for ln in Path(manifest_path).read_text(
        encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    if not urls:
        return []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(
            lambda u: _fetch_one(u, dest_dir, retries, backoff, timeout), urls))
    return results


# ---------------------------------------------------------------------------
# stage implementations shared by subcommands and run_pipeline


def stage_filter(config: PipelineConfig, manifest_path) -> Path:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"corpus manifest not found: {manifest_path}")
    paths = [ln.strip() for ln in manifest_path.read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    started = time.monotonic()
    report = run_filter_bank(paths, config.filters)
    ws = config.workspace
    ws.mkdir(parents=True, exist_ok=True)
    (ws / "filter_report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    report.write_records(ws / "filter_report.tsv")
    kept_file = ws / "filter_kept.txt"
    kept_file.write_text("\n".join(report.kept_paths) + "\n", encoding="utf-8")
    append_run_record(ws, "filter", sha256_text(repr(config.filters)),
                      sha256_file(manifest_path), "-",
                      time.monotonic() - started, "done")
    return kept_file


def stage_import_poses(config: PipelineConfig, colmap_dir, images_dir=None,
                       normalize: bool = True) -> Path:
    started = time.monotonic()
    manifest = import_colmap(colmap_dir, images_dir=images_dir)
    if normalize:
        manifest, _transform = normalize_scene(manifest)
    out = config.scene_path
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out)
    append_run_record(config.workspace, "import-poses", sha256_text(str(colmap_dir)),
                      sha256_file(Path(colmap_dir) / "images.txt"), "-",
                      time.monotonic() - started, "done")
    return out


def stage_train(config: PipelineConfig, scene_path=None,
                budget_steps=None, budget_seconds=None, holdout: bool = True) -> Path:
    scene_path = Path(scene_path or config.scene_path)
    if not scene_path.exists():
        raise ConfigError(
            f"missing prerequisite for train: scene manifest {scene_path} "
            "(run import-poses first)")
    manifest = load_manifest(scene_path)
    train_manifest = manifest
    if holdout and len(manifest.entries) >= 2:
        train_manifest, _ = split_holdout(manifest, config.train.seed)
    started = time.monotonic()
    interval_dir = config.workspace / "checkpoints"

    def save_interval(mark, snapshot):
        interval_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(snapshot, interval_dir / f"checkpoint_{int(mark):05d}s.marf")

    ckpt = train(train_manifest, config.train, budget_steps=budget_steps,
                 budget_seconds=budget_seconds, on_checkpoint=save_interval)
    out = config.checkpoint_path
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    append_run_record(config.workspace, "train",
                      sha256_text(config_to_text(config.train)),
                      sha256_file(scene_path), config.train.seed,
                      time.monotonic() - started, "done")
    return out


def stage_render(config: PipelineConfig, checkpoint_path=None, scene_path=None,
                 view_indices=None, samples: int | None = None,
                 write_opacity: bool = False, holdout: bool = True) -> Path:
    checkpoint_path = Path(checkpoint_path or config.checkpoint_path)
    if not checkpoint_path.exists():
        raise ConfigError(
            f"missing prerequisite for render: checkpoint {checkpoint_path} "
            "(run train first)")
    scene_path = Path(scene_path or config.scene_path)
    manifest = load_manifest(scene_path)
    ckpt = load_checkpoint(checkpoint_path)
    field = ckpt.to_field()
    if view_indices is None and holdout and len(manifest.entries) >= 2:
        _, hold = split_holdout(manifest, ckpt.config.seed)
        entries = list(hold.entries)
    elif view_indices is None:
        entries = list(manifest.entries)
    else:
        entries = [manifest.entries[i] for i in view_indices]
    out_dir = config.workspace / "renders"
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    rows = []
    for k, entry in enumerate(entries):
        view = render_view(field.field_fn, entry.intrinsics, entry.pose,
                           manifest.aabb, count=samples or DEFAULT_SAMPLES,
                           background=ckpt.config.background)
        out_png = out_dir / f"view_{k:03d}.png"
        save_image(view.image, out_png)
        if write_opacity:
            save_image(ImageBuffer.from_array(np.clip(view.opacity, 0.0, 1.0)),
                       out_dir / f"opacity_{k:03d}.png")
        row = f"{out_png.name}\t{entry.image_path}"
        if Path(entry.image_path).exists():
            truth = load_image(entry.image_path)
            row += f"\t{psnr(view.image, truth):.4f}"
        rows.append(row)
    (out_dir / "psnr.tsv").write_text(
        "render\treference\tpsnr_db\n" + "\n".join(rows) + "\n", encoding="utf-8")
    append_run_record(config.workspace, "render", sha256_file(checkpoint_path),
                      sha256_file(scene_path), ckpt.config.seed,
                      time.monotonic() - started, "done")
    return out_dir


def stage_bootstrap(config: PipelineConfig, scene_path=None, replicas=None,
                    budget_steps=None, budget_seconds=None,
                    base_seed=None) -> tuple[Path, BootstrapSet]:
    scene_path = Path(scene_path or config.scene_path)
    if not scene_path.exists():
        raise ConfigError(
            f"missing prerequisite for bootstrap: scene manifest {scene_path}")
    manifest = load_manifest(scene_path)
    replicas = replicas or config.bootstrap_replicas
    base_seed = config.train.seed if base_seed is None else base_seed
    started = time.monotonic()
    result = bootstrap_train(manifest, config.train, replicas, base_seed,
                             budget_steps=budget_steps,
                             budget_seconds=budget_seconds)
    out_dir = config.workspace / "bootstrap"
    out_dir.mkdir(parents=True, exist_ok=True)
    for b, ckpt in enumerate(result.checkpoints):
        save_checkpoint(ckpt, out_dir / f"replica_{b:02d}.marf")
    if result.failures:
        (out_dir / "failures.txt").write_text(
            "\n".join(f"replica {b}: {msg}" for b, msg in result.failures) + "\n",
            encoding="utf-8")
    append_run_record(config.workspace, "bootstrap",
                      sha256_text(config_to_text(config.train)),
                      sha256_file(scene_path), base_seed,
                      time.monotonic() - started, "done")
    return out_dir, result


def run_pipeline(config: PipelineConfig, stages) -> dict:
    """Execute the requested stages in canonical order with no-op reruns.

    Prerequisites are checked per stage (train needs the imported scene,
    render needs a checkpoint). Returns a dict of stage -> output path.
    """
    stages = set(stages)
    unknown = stages - set(PIPELINE_STAGES)
    if unknown:
        raise ConfigError(f"unknown pipeline stages: {sorted(unknown)}")
    outputs = {}
    ws = config.workspace
    if "filter" in stages:
        manifest = config.corpus_manifest or (ws / "corpus_manifest.txt")
        cfg_hash = sha256_text(repr(config.filters))
        in_hash = sha256_file(manifest) if Path(manifest).exists() else ""
        expected = [ws / "filter_report.tsv", ws / "filter_kept.txt"]
        if in_hash and stage_already_done(ws, "filter", cfg_hash, in_hash, expected):
            outputs["filter"] = ws / "filter_kept.txt"
        else:
            outputs["filter"] = stage_filter(config, manifest)
    if "train" in stages:
        cfg_hash = sha256_text(config_to_text(config.train))
        scene = config.scene_path
        if not scene.exists():
            raise ConfigError("missing prerequisite for train: run import-poses "
                              f"to produce {scene}")
        in_hash = sha256_file(scene)
        if stage_already_done(ws, "train", cfg_hash, in_hash,
                              [config.checkpoint_path]):
            outputs["train"] = config.checkpoint_path
        else:
            outputs["train"] = stage_train(config)
    if "render" in stages:
        if not config.checkpoint_path.exists():
            raise ConfigError("missing prerequisite for render: run train to "
                              f"produce {config.checkpoint_path}")
        outputs["render"] = stage_render(config)
    if "bootstrap" in stages:
        outputs["bootstrap"], _ = stage_bootstrap(config)
    return outputs


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="marf", description=__doc__)
    parser.add_argument("--config", type=Path, help="pipeline config file")
    parser.add_argument("--workspace", type=Path,
                        help="output directory (default $MARF_WORKSPACE or cwd)")
    parser.add_argument("--seed", type=int, help="override RNG seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="bit-reproducible mode (bin-center ray samples)")
    parser.add_argument("--budget", type=str,
                        help="training budget: steps (e.g. 2000) or duration "
                             "(e.g. 90s, 5m)")
    parser.add_argument("--background", type=str, help="background color r,g,b")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download a URL manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--dest", type=Path, default=None)
    p.add_argument("--concurrency", type=int, default=4)

    p = sub.add_parser("filter", help="run the quality filter bank")
    p.add_argument("manifest", type=Path, help="text file, one image path per line")
    p.add_argument("--min-file-bytes", type=int)
    p.add_argument("--min-width", type=int)
    p.add_argument("--min-height", type=int)
    p.add_argument("--phash-threshold", type=int)
    p.add_argument("--blur-threshold", type=float,
                   help="variance of the Laplacian on x255-scaled intensities")
    p.add_argument("--histogram-std-multiplier", type=float)
    p.add_argument("--histogram-pixel-fraction", type=float)

    p = sub.add_parser("import-poses", help="ingest a COLMAP text model")
    p.add_argument("model_dir", type=Path)
    p.add_argument("--images", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--no-normalize", action="store_true")

    p = sub.add_parser("train", help="train a radiance field")
    p.add_argument("scene", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--all-views", action="store_true",
                   help="train on every view (default holds out 10%%)")

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--views", type=str, default=None,
                   help="comma-separated view indices (default: held-out split)")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--opacity", action="store_true",
                   help="also write grayscale opacity PNGs")

    p = sub.add_parser("psnr", help="peak signal-to-noise ratio between images")
    p.add_argument("reference", type=Path)
    p.add_argument("test", type=Path)

    p = sub.add_parser("search", help="random hyper-parameter search")
    p.add_argument("scene", type=Path)
    p.add_argument("--trials", type=int, default=None)

    p = sub.add_parser("bootstrap", help="train bootstrap replicas")
    p.add_argument("scene", type=Path)
    p.add_argument("--replicas", type=int, default=None)

    p = sub.add_parser("flythrough", help="uncertainty fly-through frames")
    p.add_argument("--bootstrap-dir", type=Path, required=True)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--from-view", type=int, default=0)
    p.add_argument("--to-view", type=int, default=-1)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", type=Path, default=None)
    return parser


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    train_cfg = config.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.deterministic:
        train_cfg = replace(train_cfg, deterministic=True)
    if args.background:
        train_cfg = replace(train_cfg, background=_parse_background(args.background))
    return replace(config, train=train_cfg)


def _cmd_fetch(config, args) -> int:
    dest = args.dest or (config.workspace / "corpus")
    results = fetch(args.manifest, dest, concurrency=args.concurrency)
    for r in results:
        print(f"{r.status:<8} {r.url} {r.detail}")
    failed = sum(1 for r in results if r.status == "failed")
    print(f"# {len(results) - failed}/{len(results)} ok")
    return 1 if results and failed == len(results) else 0


def _cmd_filter(config, args) -> int:
    overrides = {
        "min_file_bytes": args.min_file_bytes,
        "min_width": args.min_width,
        "min_height": args.min_height,
        "phash_hamming_threshold": args.phash_threshold,
        "blur_threshold": args.blur_threshold,
        "histogram_std_multiplier": args.histogram_std_multiplier,
        "histogram_pixel_fraction": args.histogram_pixel_fraction,
    }
    fc = dataclasses.replace(config.filters, **{
        k: v for k, v in overrides.items() if v is not None})
    config = replace(config, filters=fc)
    kept = stage_filter(config, args.manifest)
    print((config.workspace / "filter_report.txt").read_text(encoding="utf-8"))
    print(f"survivor manifest: {kept}")
    return 0


def _cmd_import_poses(config, args) -> int:
    if args.out is not None:
        config = replace(config, workspace=args.out.parent)
        out = stage_import_poses(config, args.model_dir, images_dir=args.images,
                                 normalize=not args.no_normalize)
        out.replace(args.out)
        print(f"scene manifest: {args.out}")
    else:
        out = stage_import_poses(config, args.model_dir, images_dir=args.images,
                                 normalize=not args.no_normalize)
        print(f"scene manifest: {out}")
    return 0


def _cmd_train(config, args, budget) -> int:
    out = stage_train(config, scene_path=args.scene, budget_steps=budget[0],
                      budget_seconds=budget[1], holdout=not args.all_views)
    if args.out is not None:
        Path(out).replace(args.out)
        out = args.out
    print(f"checkpoint: {out}")
    return 0


def _cmd_render(config, args) -> int:
    views = None
    if args.views:
        views = [int(v) for v in args.views.split(",")]
    out = stage_render(config, checkpoint_path=args.checkpoint,
                       scene_path=args.scene, view_indices=views,
                       samples=args.samples, write_opacity=args.opacity)
    print(f"renders: {out}")
    psnr_table = out / "psnr.tsv"
    if psnr_table.exists():
        print(psnr_table.read_text(encoding="utf-8"))
    return 0


def _cmd_psnr(config, args) -> int:
    value = psnr(load_image(args.test), load_image(args.reference))
    print(f"{value}")
    return 0


def _cmd_search(config, args, budget) -> int:
    manifest = load_manifest(args.scene)
    trials = args.trials or config.search_trials
    best, results = random_search(manifest, config.search, trials,
                                  budget_steps=budget[0], budget_seconds=budget[1],
                                  seed=config.train.seed, base_config=config.train)
    table = config.workspace / "trials.tsv"
    config.workspace.mkdir(parents=True, exist_ok=True)
    write_trial_table(results, table)
    (config.workspace / "best_config.txt").write_text(
        config_to_text(best) + "\n", encoding="utf-8")
    print(table.read_text(encoding="utf-8"))
    print(f"best held-out psnr: {max(r.psnr for r in results):.3f}")
    return 0


def _cmd_bootstrap(config, args, budget) -> int:
    if args.replicas is not None:
        config = replace(config, bootstrap_replicas=args.replicas)
    out_dir, result = stage_bootstrap(config, scene_path=args.scene,
                                      budget_steps=budget[0],
                                      budget_seconds=budget[1])
    print(f"replicas: {result.replica_count} ok, {len(result.failures)} failed "
          f"-> {out_dir}")
    return 0 if result.checkpoints else 2


def _cmd_flythrough(config, args) -> int:
    manifest = load_manifest(args.scene)
    ckpt_paths = sorted(Path(args.bootstrap_dir).glob("replica_*.marf"))
    if not ckpt_paths:
        raise ConfigError(f"no replica checkpoints in {args.bootstrap_dir}")
    bootstrap = BootstrapSet(
        checkpoints=[load_checkpoint(p) for p in ckpt_paths], failures=[])
    entries = manifest.entries
    start = entries[args.from_view].pose
    end = entries[args.to_view].pose
    poses = interpolate_poses(start, end, args.frames)
    out_dir = args.out or (config.workspace / "flythrough")
    flythrough(bootstrap, entries[0].intrinsics, poses, out_dir, manifest.aabb,
               count=args.samples, background=config.train.background)
    print(f"frames: {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_pipeline_config(args.config, workspace=args.workspace)
        config = _apply_overrides(config, args)
        budget = _parse_budget(args.budget) if args.budget else (None, None)
        handlers = {
            "fetch": lambda: _cmd_fetch(config, args),
            "filter": lambda: _cmd_filter(config, args),
            "import-poses": lambda: _cmd_import_poses(config, args),
            "train": lambda: _cmd_train(config, args, budget),
            "render": lambda: _cmd_render(config, args),
            "psnr": lambda: _cmd_psnr(config, args),
            "search": lambda: _cmd_search(config, args, budget),
            "bootstrap": lambda: _cmd_bootstrap(config, args, budget),
            "flythrough": lambda: _cmd_flythrough(config, args),
        }
        return handlers[args.command]()
    except (ConfigError, FormatError, DecodeError, FileNotFoundError,
            NotADirectoryError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except MarfError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
