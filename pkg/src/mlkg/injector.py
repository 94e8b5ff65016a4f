"""Fusion of the seven knowledge embeddings into one decoder guidance vector.

The two knowledge levels are fused separately and then combined:

* target branch: concat(k_a, k_b) -> fc (2D x 2D) -> GELU -> k_target;
* scene branch: affinities <k_c, k_i> for i in {d,e,f,g} -> softmax ->
  weights lambda_d..lambda_g -> k_s = sum(lambda_i * k_i); then
  concat(k_s, k_c) -> fc (2D x 2D) -> GELU -> k_scene;
* guidance = (k_target + k_scene) / 2, followed by a two-layer MLP
  (GELU hidden, linear output) projecting into the decoder token space.

Ablation selections keep the layer shapes fixed: a single-id selection
duplicates that vector into both concatenation slots and returns its branch
output directly, without averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np
import torch
from torch import nn

from .errors import ValidationError
from .prompts import KNOWLEDGE_IDS

SCENE_ASPECT_IDS = ("Kd", "Ke", "Kf", "Kg")

# The supported knowledge selections, by CLI name.
SELECTIONS = {
    "ka": frozenset({"Ka"}),
    "kb": frozenset({"Kb"}),
    "scene": frozenset({"Kc", "Kd", "Ke", "Kf", "Kg"}),
    "all": frozenset(KNOWLEDGE_IDS),
}


def resolve_selection(selection) -> frozenset:
    """Accept a selection name or an id set; reject unsupported combinations."""
    if isinstance(selection, str):
        if selection not in SELECTIONS:
            raise ValidationError(
                f"unknown selection {selection!r} (expected one of {sorted(SELECTIONS)})"
            )
        return SELECTIONS[selection]
    ids = frozenset(selection)
    if ids not in SELECTIONS.values():
        raise ValidationError(
            f"unsupported knowledge selection {sorted(ids)}; supported: "
            + ", ".join(sorted(str(sorted(v)) for v in SELECTIONS.values()))
        )
    return ids


@dataclass(frozen=True)
class SceneWeights:
    """Softmax weights of the four scene aspects (colour, texture, shape, light)."""

    lambda_d: float
    lambda_e: float
    lambda_f: float
    lambda_g: float

    def as_tuple(self):
        return (self.lambda_d, self.lambda_e, self.lambda_f, self.lambda_g)


def _as_tensor(vec) -> torch.Tensor:
    if isinstance(vec, torch.Tensor):
        return vec
    return torch.as_tensor(np.asarray(vec))


def scene_weight_tensor(k_c, k_d, k_e, k_f, k_g) -> torch.Tensor:
    """Differentiable scene weights: softmax over the four <k_c, k_i> affinities."""
    vecs = [_as_tensor(v) for v in (k_c, k_d, k_e, k_f, k_g)]
    widths = {tuple(v.shape) for v in vecs}
    if len(widths) != 1 or vecs[0].dim() != 1:
        raise ValidationError(f"scene vectors must share one 1-d shape, got {widths}")
    for v in vecs:
        if not torch.all(torch.isfinite(v)):
            raise ValidationError("non-finite scene knowledge vector")
    k_c = vecs[0]
    affinities = torch.stack([torch.dot(k_c, v) for v in vecs[1:]])
    return torch.softmax(affinities, dim=0)


def compute_scene_weights(k_c, k_d, k_e, k_f, k_g) -> SceneWeights:
    """Non-differentiable convenience wrapper returning plain floats."""
    with torch.no_grad():
        w = scene_weight_tensor(k_c, k_d, k_e, k_f, k_g).double()
        w = w / w.sum()
    return SceneWeights(*(float(x) for x in w))


@dataclass
class FusionResult:
    """Fused guidance plus the intermediates it was computed from.

    ``guidance`` is the pre-projection vector (width 2 * d_text); branch
    outputs and scene weights are ``None`` when the selection drops them.
    """

    guidance: torch.Tensor
    k_target: Optional[torch.Tensor] = None
    k_scene: Optional[torch.Tensor] = None
    k_s: Optional[torch.Tensor] = None
    weights: Optional[SceneWeights] = None


class KnowledgeInjector(nn.Module):
    """Selects, fuses and projects encoded knowledge for the visual decoder.

    Exposes both the fused pre-projection guidance (:meth:`fuse`) and its
    projection into the decoder token space (:meth:`project`); the decoder
    consumes the projected form.
    """

    def __init__(
        self,
        d_text: int = 512,
        d_proj: int = 512,
        d_dec: int = 256,
        selection="all",
    ):
        super().__init__()
        self.d_text = d_text
        self.d_fused = 2 * d_text
        self.d_dec = d_dec
        self.selection = resolve_selection(selection)
        self.target_fc = nn.Linear(self.d_fused, self.d_fused)
        self.scene_fc = nn.Linear(self.d_fused, self.d_fused)
        self.proj_hidden = nn.Linear(self.d_fused, d_proj)
        self.proj_out = nn.Linear(d_proj, d_dec)
        self.act = nn.GELU()
        self._init_params()

    def _init_params(self):
        for layer in (self.target_fc, self.scene_fc, self.proj_hidden, self.proj_out):
            nn.init.trunc_normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)

    def _vectors(self, enc) -> Mapping[str, torch.Tensor]:
        vectors = enc.vectors if hasattr(enc, "vectors") else enc
        missing = [k for k in self.selection if k not in vectors]
        if missing:
            raise ValidationError(f"encoded knowledge missing ids {missing}")
        p = self.target_fc.weight
        out = {}
        for k in KNOWLEDGE_IDS:
            if k in vectors:
                v = _as_tensor(vectors[k]).to(dtype=p.dtype, device=p.device)
                if v.shape != (self.d_text,):
                    raise ValidationError(
                        f"vector {k} has shape {tuple(v.shape)}, expected ({self.d_text},)"
                    )
                out[k] = v
        return out

    def fuse(self, enc) -> FusionResult:
        """Fuse the selected knowledge vectors into the pre-projection guidance."""
        v = self._vectors(enc)
        sel = self.selection

        k_target = None
        if "Ka" in sel or "Kb" in sel:
            first = v["Ka"] if "Ka" in sel else v["Kb"]
            second = v["Kb"] if "Kb" in sel else v["Ka"]
            k_target = self.act(self.target_fc(torch.cat([first, second])))

        k_scene = k_s = None
        weights = None
        weight_t = None
        if "Kc" in sel:
            weight_t = scene_weight_tensor(v["Kc"], v["Kd"], v["Ke"], v["Kf"], v["Kg"])
            aspects = torch.stack([v[k] for k in SCENE_ASPECT_IDS])
            k_s = weight_t @ aspects
            k_scene = self.act(self.scene_fc(torch.cat([k_s, v["Kc"]])))
            weights = SceneWeights(*(float(x) for x in weight_t.detach()))

        if k_target is not None and k_scene is not None:
            guidance = (k_target + k_scene) / 2
        elif k_target is not None:
            guidance = k_target
        else:
            guidance = k_scene
        return FusionResult(
            guidance=guidance, k_target=k_target, k_scene=k_scene, k_s=k_s, weights=weights
        )

    def project(self, guidance: torch.Tensor) -> torch.Tensor:
        """Project pre-projection guidance into the decoder token space (linear out)."""
        if guidance.shape[-1] != self.d_fused:
            raise ValidationError(
                f"guidance width {guidance.shape[-1]}, expected {self.d_fused}"
            )
        return self.proj_out(self.act(self.proj_hidden(guidance)))

    def forward(self, enc) -> torch.Tensor:
        return self.project(self.fuse(enc).guidance)

    def batch_guidance(self, encoded: Iterable) -> torch.Tensor:
        """Stack projected guidance vectors for a batch of encoded bundles."""
        return torch.stack([self(e) for e in encoded])
