"""Low-rank adapters for fine-tuning frozen affine layers.

An adapter adds ``(alpha / r) * B @ A`` on top of a frozen ``nn.Linear``.
``B`` starts at zero, so a freshly adapted model computes exactly what the
base model computes; only ``A`` and ``B`` receive gradients.
"""

from __future__ import annotations

import math
import re
from typing import List, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError


class LoRALinear(nn.Module):
    """A frozen linear layer plus a trainable rank-r update."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        out_features, in_features = base.weight.shape
        if rank < 1 or rank > min(out_features, in_features):
            raise ValidationError(
                f"rank {rank} invalid for a {out_features}x{in_features} layer"
            )
        self.base = base
        self.rank = rank
        self.alpha = float(alpha)
        self.scaling = self.alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, in_features, dtype=base.weight.dtype))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.base.weight.requires_grad_(False)
        if self.base.bias is not None:
            self.base.bias.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * F.linear(F.linear(x, self.lora_a), self.lora_b)

    def trainable_parameter_count(self) -> int:
        return self.lora_a.numel() + self.lora_b.numel()


def _parent_and_leaf(root: nn.Module, dotted: str) -> Tuple[nn.Module, str]:
    parts = dotted.split(".")
    parent = root
    for name in parts[:-1]:
        parent = getattr(parent, name)
    return parent, parts[-1]


def attach_lora(
    module: nn.Module,
    rank: int = 4,
    alpha: float = 4.0,
    pattern: str = r"attn\.(qkv|proj)$",
) -> List[Tuple[str, LoRALinear]]:
    """Freeze ``module`` and wrap every matching ``nn.Linear`` with an adapter.

    ``pattern`` is a regex searched against dotted module names. Matching
    nothing is a configuration error (misspelled pattern, wrong model).
    Returns (name, adapter) pairs; adapter parameters are the only trainable
    ones left in the module.
    """
    rx = re.compile(pattern)
    for p in module.parameters():
        p.requires_grad_(False)
    targets = [
        name
        for name, sub in module.named_modules()
        if isinstance(sub, nn.Linear) and rx.search(name)
    ]
    if not targets:
        raise ValidationError(f"lora pattern {pattern!r} matched no linear layers")
    adapters = []
    for name in targets:
        parent, leaf = _parent_and_leaf(module, name)
        adapter = LoRALinear(getattr(parent, leaf), rank=rank, alpha=alpha)
        setattr(parent, leaf, adapter)
        adapters.append((name, adapter))
    return adapters


def lora_parameters(module: nn.Module):
    """Iterate over adapter parameters (the trainable ones) inside a module."""
    for name, param in module.named_parameters():
        if "lora_" in name:
            yield param


def trainable_parameter_count(adapters: List[Tuple[str, LoRALinear]]) -> int:
    return sum(a.trainable_parameter_count() for _, a in adapters)
