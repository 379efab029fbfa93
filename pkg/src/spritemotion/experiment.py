"""Checkpoint orchestration: train once per (config, seed), reuse afterwards.

Each checkpoint gets a ``.recipe.json`` sidecar holding the config sections
and seed that produced it; a cached checkpoint is reused only when its
recipe matches the requested one exactly. A ``.timing.json`` sidecar records
the training wall time.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

from .config import Config
from .pipeline import TalkingHeadPipeline
from .training import (
    build_stage2_data,
    load_stage1,
    load_stage2,
    save_stage1,
    save_stage2,
    stage1_config,
    stage2_meta,
    train_stage1,
    train_stage2,
)

log = logging.getLogger(__name__)


def stage1_recipe(cfg: Config, seed: int) -> dict:
    d = cfg.to_dict()
    return {"seed": seed, "data": d["data"], "stage1": d["stage1"]}


def stage2_recipe(cfg: Config, seed: int) -> dict:
    d = cfg.to_dict()
    return {"seed": seed, "data": d["data"], "stage1": d["stage1"], "stage2": d["stage2"], "schedule": d["schedule"]}


def _recipe_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".recipe.json")


def recipe_matches(ckpt: Path, recipe: dict) -> bool:
    side = _recipe_path(ckpt)
    if not (ckpt.exists() and side.exists()):
        return False
    try:
        return json.loads(side.read_text()) == json.loads(json.dumps(recipe))
    except json.JSONDecodeError:
        return False


def write_recipe(ckpt: Path, recipe: dict) -> None:
    _recipe_path(ckpt).write_text(json.dumps(recipe, indent=2, sort_keys=True) + "\n")


def _timing_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".timing.json")


def write_timing(ckpt: Path, seconds: float) -> None:
    _timing_path(ckpt).write_text(json.dumps({"train_seconds": round(seconds, 1)}) + "\n")


def training_seconds(ckpt) -> float | None:
    """Recorded training wall time of a checkpoint, or None if unknown."""
    side = _timing_path(Path(ckpt))
    if not side.exists():
        return None
    return float(json.loads(side.read_text())["train_seconds"])


def ensure_stage1(cfg: Config, out_dir, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    path = Path(out_dir) / "stage1.ckpt"
    recipe = stage1_recipe(cfg, seed)
    if recipe_matches(path, recipe):
        log.info("reusing %s", path)
        return load_stage1(path, stage1_config(cfg))
    log.info("training stage 1 -> %s", path)
    start = time.perf_counter()
    model = train_stage1(cfg, seed)
    save_stage1(model, path)
    write_timing(path, time.perf_counter() - start)
    write_recipe(path, recipe)
    return model


def ensure_stage2(cfg: Config, out_dir, stage1, seed: int | None = None):
    """-> (generator, normalizer, schedule)."""
    seed = cfg.seed if seed is None else seed
    path = Path(out_dir) / "stage2.ckpt"
    recipe = stage2_recipe(cfg, seed)
    if recipe_matches(path, recipe):
        log.info("reusing %s", path)
        return load_stage2(path, stage2_meta(cfg))
    log.info("training stage 2 -> %s", path)
    start = time.perf_counter()
    data = build_stage2_data(cfg, stage1)
    model = train_stage2(cfg, data, seed)
    save_stage2(model, data.normalizer, cfg, path)
    write_timing(path, time.perf_counter() - start)
    write_recipe(path, recipe)
    # reload so callers always see checkpoint precision
    return load_stage2(path, stage2_meta(cfg))


def ensure_pipeline(cfg: Config, out_dir, seed: int | None = None) -> TalkingHeadPipeline:
    stage1 = ensure_stage1(cfg, out_dir, seed)
    generator, normalizer, sched = ensure_stage2(cfg, out_dir, stage1, seed)
    return TalkingHeadPipeline(stage1, generator, normalizer, sched)


def load_pipeline(stage1_path, stage2_path, cfg: Config | None = None) -> TalkingHeadPipeline:
    stage1 = load_stage1(stage1_path, None if cfg is None else stage1_config(cfg))
    generator, normalizer, sched = load_stage2(stage2_path, None if cfg is None else stage2_meta(cfg))
    return TalkingHeadPipeline(stage1, generator, normalizer, sched)
