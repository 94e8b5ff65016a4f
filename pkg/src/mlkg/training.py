"""End-to-end training of decoder, injector and low-rank adapters.

The optimizer is SGD with momentum; the learning rate follows a half-cosine
from the initial value down to zero over the configured step budget. The
loss is plain per-pixel binary cross entropy at model resolution against
nearest-neighbour-resized ground truth. Image and text encoders stay frozen
throughout (adapters excepted).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import chain
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .data import CamouflagedSample
from .encoding import TextEmbeddingBackend, encode_bundle
from .errors import ValidationError
from .injector import KnowledgeInjector
from .knowledge import KnowledgeCache
from .lora import lora_parameters
from .model import Segmenter, preprocess

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    initial_lr: float = 5e-3
    momentum: float = 0.9
    total_steps: int = 300
    batch_size: int = 2
    seed: int = 0
    knowledge_selection: str = "all"

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValidationError("initial_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must be in [0, 1)")
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


def bce_loss(probabilities: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross entropy with probabilities clamped to [eps, 1 - eps]."""
    if probabilities.shape != target.shape:
        raise ValidationError(
            f"shape mismatch: probabilities {tuple(probabilities.shape)} vs "
            f"target {tuple(target.shape)}"
        )
    p = probabilities.clamp(BCE_EPS, 1.0 - BCE_EPS)
    g = target.to(p.dtype)
    return -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()


def cosine_lr(step: int, config: TrainConfig) -> float:
    """Half-cosine decay: lr(0) = initial_lr, lr(total_steps) = 0."""
    if step < 0 or step > config.total_steps:
        raise ValidationError(f"step {step} outside [0, {config.total_steps}]")
    return 0.5 * config.initial_lr * (1.0 + math.cos(math.pi * (step / config.total_steps)))


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


@dataclass
class TrainResult:
    trace: List[Tuple[int, float, float]] = field(default_factory=list)
    final_loss: float = float("nan")
    final_train_mae: float = float("nan")


def write_trace(path, trace: Sequence[Tuple[int, float, float]]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in trace:
            fh.write(f"{step},{lr!r},{loss!r}\n")


def _batches(n: int, batch_size: int, total_steps: int, rng: np.random.Generator):
    """Deterministic cyclic batches: reshuffle sample order once per epoch."""
    order: list = []
    while True:
        if len(order) < batch_size:
            order.extend(rng.permutation(n).tolist())
        yield order[:batch_size]
        del order[:batch_size]


def train(
    samples: Sequence[CamouflagedSample],
    segmenter: Segmenter,
    injector: KnowledgeInjector,
    cache: KnowledgeCache,
    text_backend: TextEmbeddingBackend,
    config: TrainConfig,
    normalize_embeddings: bool = False,
) -> TrainResult:
    """Optimize decoder + injector + adapters on the given samples.

    Knowledge for every sample must already be cached; a miss aborts before
    any parameter is touched.
    """
    if not samples:
        raise ValidationError("no training samples")
    seed_everything(config.seed)

    encoded = [
        encode_bundle(cache.load(s.t_ref, s.image_id), text_backend,
                      normalize=normalize_embeddings)
        for s in samples
    ]
    res = segmenter.resolution
    photos = torch.stack([preprocess(s.photo, res) for s in samples])
    masks = torch.stack([
        torch.from_numpy(_resize_mask_nearest(s.gt_mask, res)).float() for s in samples
    ])

    trainable = [
        p
        for p in chain(
            segmenter.decoder.parameters(),
            injector.parameters(),
            lora_parameters(segmenter.encoder),
        )
        if p.requires_grad
    ]
    optimizer = torch.optim.SGD(trainable, lr=config.initial_lr, momentum=config.momentum)

    rng = np.random.default_rng(config.seed)
    batches = _batches(len(samples), min(config.batch_size, len(samples)), config.total_steps, rng)
    result = TrainResult()
    segmenter.train()
    injector.train()
    for step in range(config.total_steps):
        lr = cosine_lr(step, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        idx = next(batches)
        guidance = injector.batch_guidance([encoded[i] for i in idx])
        logits = segmenter(photos[idx], guidance)
        loss = bce_loss(torch.sigmoid(logits), masks[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.trace.append((step, lr, float(loss.detach())))

    segmenter.eval()
    injector.eval()
    with torch.no_grad():
        guidance = injector.batch_guidance(encoded)
        probs = torch.sigmoid(segmenter(photos, guidance))
        result.final_loss = float(bce_loss(probs, masks))
        result.final_train_mae = float((probs - masks).abs().mean())
    return result


def _resize_mask_nearest(mask: np.ndarray, resolution: int) -> np.ndarray:
    if mask.shape == (resolution, resolution):
        return mask.astype(np.float32)
    t = torch.from_numpy(mask.astype(np.float32))[None, None]
    out = torch.nn.functional.interpolate(t, size=(resolution, resolution), mode="nearest")
    return out[0, 0].numpy()
