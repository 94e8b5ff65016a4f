"""Wiring between modules: build models from config, run pipeline stages.

Everything here is plain-function glue so the CLI stays a thin argument
layer and the stages remain scriptable from Python.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .backends import HttpMLLMBackend, StubMLLMBackend
from .config import RunConfig, _apply
from .data import classify_group, load_dataset, load_mask, load_photo, load_sample
from .encoding import make_text_backend
from .errors import ConfigError, MetricError, ValidationError
from .injector import KnowledgeInjector
from .knowledge import KnowledgeCache, populate_cache
from .lora import attach_lora
from .metrics import evaluate_dataset
from .model import Segmenter, load_checkpoint_into, save_checkpoint
from .training import TrainConfig, TrainResult, seed_everything, train, write_trace


def make_mllm_backend(cfg: RunConfig):
    if cfg.mllm.backend == "stub":
        return StubMLLMBackend()
    if cfg.mllm.backend == "http":
        if not cfg.mllm.url:
            raise ConfigError("mllm.backend=http requires mllm.url")
        return HttpMLLMBackend(
            cfg.mllm.url,
            timeout=cfg.mllm.timeout,
            retries=cfg.mllm.retries,
            min_interval=cfg.mllm.min_interval,
        )
    raise ConfigError(f"unknown mllm.backend {cfg.mllm.backend!r} (expected stub|http)")


def build_models(cfg: RunConfig, seed: int):
    """Construct segmenter + injector with adapters attached, deterministically."""
    seed_everything(seed)
    m = cfg.model
    segmenter = Segmenter(
        resolution=m.resolution, patch=m.patch, width=m.width, depth=m.depth,
        heads=m.heads, d_dec=cfg.injector.d_dec, decoder_depth=m.decoder_depth,
    )
    adapters = attach_lora(
        segmenter.encoder, rank=m.lora_rank, alpha=m.lora_alpha, pattern=m.lora_pattern
    )
    injector = KnowledgeInjector(
        d_text=cfg.text_encoder.dim,
        d_proj=cfg.injector.d_proj,
        d_dec=cfg.injector.d_dec,
        selection=cfg.injector.selection,
    )
    return segmenter, injector, adapters


def generate_knowledge(cfg: RunConfig, data_root, split: str, cache_path,
                       workers: int = 1) -> int:
    index = load_dataset(data_root, split)
    cache = KnowledgeCache(cache_path)
    backend = make_mllm_backend(cfg)
    return populate_cache(cache, index.samples, backend, load_photo, workers=workers)


def run_training(cfg: RunConfig, data_root, cache_path, out_path) -> TrainResult:
    out_path = Path(out_path)
    index = load_dataset(data_root, cfg.train.split)
    samples = [load_sample(d) for d in index.samples]
    cache = KnowledgeCache(cache_path)
    text_backend = make_text_backend(
        cfg.text_encoder.backend, dim=cfg.text_encoder.dim,
        token_limit=cfg.text_encoder.token_limit, model_path=cfg.text_encoder.model_path,
    )
    segmenter, injector, _ = build_models(cfg, cfg.train.seed)
    train_cfg = TrainConfig(
        initial_lr=cfg.train.initial_lr,
        momentum=cfg.train.momentum,
        total_steps=cfg.train.total_steps,
        batch_size=cfg.train.batch_size,
        seed=cfg.train.seed,
        knowledge_selection=cfg.injector.selection,
    )
    result = train(
        samples, segmenter, injector, cache, text_backend, train_cfg,
        normalize_embeddings=cfg.text_encoder.normalize,
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_path, segmenter, injector, cfg.to_dict())
    write_trace(out_path.with_name(out_path.name + ".trace.csv"), result.trace)
    cfg.echo(out_path.parent)
    return result


def load_pipeline(checkpoint_path):
    """Rebuild segmenter + injector from a checkpoint's config header."""
    import torch

    blob = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
    cfg = RunConfig()
    _apply(blob["config"], cfg)
    segmenter, injector, _ = build_models(cfg, cfg.train.seed)
    load_checkpoint_into(checkpoint_path, segmenter, injector)
    segmenter.eval()
    injector.eval()
    return segmenter, injector, cfg


def run_predict(checkpoint_path, data_root, split: str, cache_path, out_dir) -> int:
    from .encoding import encode_bundle

    segmenter, injector, cfg = load_pipeline(checkpoint_path)
    index = load_dataset(data_root, split)
    cache = KnowledgeCache(cache_path)
    text_backend = make_text_backend(
        cfg.text_encoder.backend, dim=cfg.text_encoder.dim,
        token_limit=cfg.text_encoder.token_limit, model_path=cfg.text_encoder.model_path,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for descriptor in index.samples:
        sample = load_sample(descriptor)
        enc = encode_bundle(
            cache.load(sample.t_ref, sample.image_id), text_backend,
            normalize=cfg.text_encoder.normalize,
        )
        guidance = injector(enc)
        pred = segmenter.predict(sample.photo, guidance)
        gray = np.clip(np.rint(pred.probabilities * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(out_dir / f"{sample.image_id}.png")
    cfg.echo(out_dir)
    return len(index.samples)


def _scan_mask_dir(directory) -> dict:
    """Map id -> path for every png under a flat or class-nested directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"not a directory: {directory}")
    out = {}
    for path in sorted(directory.rglob("*.png")):
        rel = path.relative_to(directory).with_suffix("")
        out["__".join(rel.parts)] = path
    return out


def run_eval(pred_dir, gt_dir, groups_path: Optional[str], out_path) -> list:
    gt_paths = _scan_mask_dir(gt_dir)
    if not gt_paths:
        raise MetricError(f"no ground-truth masks found under {gt_dir}")
    pred_paths = _scan_mask_dir(pred_dir)

    gts = {i: load_mask(p) for i, p in gt_paths.items()}
    predictions = {
        i: np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0
        for i, p in pred_paths.items()
        if i in gts
    }
    if groups_path:
        groups = json.loads(Path(groups_path).read_text(encoding="utf-8"))
    else:
        groups = {i: classify_group(m) for i, m in gts.items()}
    reports = evaluate_dataset(predictions, gts, groups)
    payload = {"groups": [r.to_dict() for r in reports]}
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return reports


def run_visualize(data_root, split: str, pred_dir, out_dir) -> int:
    """Side-by-side photo / ground truth / prediction panels, one png each."""
    index = load_dataset(data_root, split)
    pred_paths = _scan_mask_dir(pred_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for descriptor in index.samples:
        if descriptor.image_id not in pred_paths:
            continue
        sample = load_sample(descriptor)
        pred = np.asarray(Image.open(pred_paths[descriptor.image_id]).convert("L"))
        if pred.shape != sample.gt_mask.shape:
            pred = np.asarray(
                Image.fromarray(pred).resize(
                    (sample.gt_mask.shape[1], sample.gt_mask.shape[0]), Image.BILINEAR
                )
            )
        gt_rgb = np.stack([sample.gt_mask * 255] * 3, axis=-1).astype(np.uint8)
        pred_rgb = np.stack([pred] * 3, axis=-1).astype(np.uint8)
        panel = np.concatenate([sample.photo, gt_rgb, pred_rgb], axis=1)
        Image.fromarray(panel).save(out_dir / f"{descriptor.image_id}.png")
        count += 1
    return count
