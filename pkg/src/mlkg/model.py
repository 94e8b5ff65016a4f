"""Promptable encoder/decoder segmentation model at desk scale.

A small ViT-style patch encoder produces a C x h x w embedding grid; a
lightweight two-way attention decoder consumes the grid together with one
projected guidance token and emits mask logits at 4x the grid resolution,
which are then resized to any requested output size.

Guidance enters the decoder twice, as decided for this artifact: it is
appended as a prompt token attended by every two-way block, and it is also
broadcast-added to the token stream embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError

IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)


def preprocess(photo: np.ndarray, resolution: int) -> torch.Tensor:
    """uint8 RGB (H, W, 3) -> normalized float tensor (3, R, R)."""
    if photo.ndim != 3 or photo.shape[2] != 3:
        raise ValidationError(f"expected an RGB raster (H, W, 3), got shape {photo.shape}")
    x = torch.from_numpy(photo.astype(np.float32)).permute(2, 0, 1) / 255.0
    x = F.interpolate(x.unsqueeze(0), size=(resolution, resolution), mode="bilinear",
                      align_corners=False).squeeze(0)
    mean = torch.tensor(IMAGE_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGE_STD).view(3, 1, 1)
    return (x - mean) / std


class SelfAttention(nn.Module):
    """Multi-head self-attention with explicit qkv/proj linears.

    The projections are plain ``nn.Linear`` so low-rank adapters can wrap
    them by name (``attn.qkv``, ``attn.proj``).
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValidationError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.act = nn.GELU()

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEncoder(nn.Module):
    """Toy ViT image encoder: patch embedding, transformer blocks, grid output."""

    def __init__(self, resolution: int = 256, patch: int = 16, width: int = 256,
                 depth: int = 4, heads: int = 8):
        super().__init__()
        if resolution % patch != 0:
            raise ValidationError(f"resolution {resolution} not divisible by patch {patch}")
        self.resolution = resolution
        self.patch = patch
        self.width = width
        self.grid = resolution // patch
        self.patch_embed = nn.Conv2d(3, width, kernel_size=patch, stride=patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid * self.grid, width))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(EncoderBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != 3:
            raise ValidationError(f"expected 3 input channels, got {x.shape[1]}")
        if x.shape[-2:] != (self.resolution, self.resolution):
            raise ValidationError(
                f"expected {self.resolution}x{self.resolution} input, got {tuple(x.shape[-2:])}"
            )
        x = self.patch_embed(x)                      # B, C, h, w
        b, c, h, w = x.shape
        x = x.flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x.transpose(1, 2).reshape(b, c, h, w)


class CrossAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, queries, keys):
        b, nq, c = queries.shape
        nk = keys.shape[1]
        hd = c // self.heads
        q = self.q(queries).reshape(b, nq, self.heads, hd).transpose(1, 2)
        k = self.k(keys).reshape(b, nk, self.heads, hd).transpose(1, 2)
        v = self.v(keys).reshape(b, nk, self.heads, hd).transpose(1, 2)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, nq, c)
        return self.out(out)


class TwoWayBlock(nn.Module):
    """Tokens attend to themselves and the image; the image attends back."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.self_attn = SelfAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_t2i = CrossAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 2)
        self.norm3 = nn.LayerNorm(dim)
        self.cross_i2t = CrossAttention(dim, heads)
        self.norm4 = nn.LayerNorm(dim)

    def forward(self, tokens, image):
        tokens = self.norm1(tokens + self.self_attn(tokens))
        tokens = self.norm2(tokens + self.cross_t2i(tokens, image))
        tokens = self.norm3(tokens + self.mlp(tokens))
        image = self.norm4(image + self.cross_i2t(image, tokens))
        return tokens, image


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + 1e-6)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class MaskDecoder(nn.Module):
    """Two-way attention decoder producing logits at 4x the embedding grid."""

    def __init__(self, encoder_width: int, d_dec: int, grid: int, heads: int = 8,
                 depth: int = 2):
        super().__init__()
        self.d_dec = d_dec
        self.grid = grid
        self.neck = nn.Conv2d(encoder_width, d_dec, kernel_size=1)
        self.pos_embed = nn.Parameter(torch.zeros(1, grid * grid, d_dec))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.mask_token = nn.Parameter(torch.zeros(1, d_dec))
        nn.init.trunc_normal_(self.mask_token, std=0.02)
        self.blocks = nn.ModuleList(TwoWayBlock(d_dec, heads) for _ in range(depth))
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(d_dec, d_dec // 2, kernel_size=2, stride=2),
            LayerNorm2d(d_dec // 2),
            nn.GELU(),
            nn.ConvTranspose2d(d_dec // 2, d_dec // 4, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.mask_head = Mlp(d_dec, d_dec * 2)
        self.head_out = nn.Linear(d_dec, d_dec // 4)
        # Dot-product logits start tiny; a warm scale keeps early gradients
        # healthy at the small learning rates this model trains with.
        self.logit_scale = nn.Parameter(torch.tensor(10.0))

    def forward(self, grid_emb: torch.Tensor, guidance: torch.Tensor) -> torch.Tensor:
        if guidance.shape[-1] != self.d_dec:
            raise ValidationError(
                f"guidance width {guidance.shape[-1]}, expected {self.d_dec}"
            )
        b = grid_emb.shape[0]
        image = self.neck(grid_emb)
        h, w = image.shape[-2:]
        image_seq = image.flatten(2).transpose(1, 2) + self.pos_embed

        guidance_tok = guidance.unsqueeze(1)                       # B, 1, C
        tokens = torch.cat([self.mask_token.expand(b, -1, -1), guidance_tok], dim=1)
        tokens = tokens + guidance_tok                             # broadcast-injected
        for block in self.blocks:
            tokens, image_seq = block(tokens, image_seq)

        mask_tok = self.head_out(self.mask_head(tokens[:, 0]))     # B, C/8
        feats = image_seq.transpose(1, 2).reshape(b, self.d_dec, h, w)
        feats = self.upscale(feats)                                # B, C/8, 4h, 4w
        return self.logit_scale * torch.einsum("bc,bchw->bhw", mask_tok, feats)


@dataclass
class MaskPrediction:
    """Mask logits with derived probabilities and the 0.5-thresholded mask."""

    logits: np.ndarray
    probabilities: np.ndarray
    binary: np.ndarray

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "MaskPrediction":
        arr = logits.detach().cpu().numpy().astype(np.float32)
        probs = 1.0 / (1.0 + np.exp(-arr))
        return cls(logits=arr, probabilities=probs, binary=(probs >= 0.5).astype(np.uint8))


class Segmenter(nn.Module):
    """Full promptable model: patch encoder plus guidance-conditioned decoder."""

    def __init__(self, resolution: int = 256, patch: int = 16, width: int = 256,
                 depth: int = 4, heads: int = 8, d_dec: int = 256, decoder_depth: int = 2):
        super().__init__()
        self.resolution = resolution
        self.d_dec = d_dec
        self.encoder = PatchEncoder(resolution, patch, width, depth, heads)
        self.decoder = MaskDecoder(width, d_dec, self.encoder.grid, heads, decoder_depth)

    def encode_image(self, photo: torch.Tensor) -> torch.Tensor:
        """Preprocessed (B,3,R,R) or (3,R,R) input -> embedding grid."""
        single = photo.dim() == 3
        if single:
            photo = photo.unsqueeze(0)
        emb = self.encoder(photo)
        return emb.squeeze(0) if single else emb

    def forward(self, photos: torch.Tensor, guidance: torch.Tensor) -> torch.Tensor:
        """Batched logits at model resolution (for training)."""
        emb = self.encoder(photos)
        logits = self.decoder(emb, guidance)
        return F.interpolate(
            logits.unsqueeze(1), size=(self.resolution, self.resolution),
            mode="bilinear", align_corners=False,
        ).squeeze(1)

    def decode_mask(self, emb: torch.Tensor, guidance: torch.Tensor,
                    out_size=None) -> MaskPrediction:
        """Embedding + guidance -> mask resized back to ``out_size`` (H, W)."""
        single = emb.dim() == 3
        if single:
            emb = emb.unsqueeze(0)
            guidance = guidance.unsqueeze(0)
        logits = self.decoder(emb, guidance)
        target = out_size if out_size is not None else (self.resolution, self.resolution)
        logits = F.interpolate(logits.unsqueeze(1), size=tuple(target), mode="bilinear",
                               align_corners=False).squeeze(1)
        if single:
            logits = logits.squeeze(0)
        return MaskPrediction.from_logits(logits)

    @torch.no_grad()
    def predict(self, photo: np.ndarray, guidance: torch.Tensor) -> MaskPrediction:
        """Segment one uint8 RGB photo; output matches the photo's H x W."""
        x = preprocess(photo, self.resolution)
        emb = self.encode_image(x)
        return self.decode_mask(emb, guidance, out_size=photo.shape[:2])


CHECKPOINT_FORMAT = 1


def _namespace_params(segmenter: Segmenter, injector) -> dict:
    params = {}
    for name, tensor in segmenter.encoder.state_dict().items():
        prefix = "lora." if "lora_" in name else "encoder."
        params[prefix + name] = tensor
    for name, tensor in segmenter.decoder.state_dict().items():
        params["decoder." + name] = tensor
    for name, tensor in injector.state_dict().items():
        params["injector." + name] = tensor
    return params


def save_checkpoint(path, segmenter: Segmenter, injector, config: dict):
    """Write a single archive of namespaced arrays plus a config header."""
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT,
            "config": config,
            "params": _namespace_params(segmenter, injector),
        },
        path,
    )


def load_checkpoint_into(path, segmenter: Segmenter, injector) -> dict:
    """Restore parameters into already-built modules; returns the config header."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unsupported checkpoint format in {path}")
    params = blob["params"]
    enc_state = {
        name[len("encoder."):]: t for name, t in params.items() if name.startswith("encoder.")
    }
    enc_state.update(
        {name[len("lora."):]: t for name, t in params.items() if name.startswith("lora.")}
    )
    segmenter.encoder.load_state_dict(enc_state)
    segmenter.decoder.load_state_dict(
        {name[len("decoder."):]: t for name, t in params.items() if name.startswith("decoder.")}
    )
    injector.load_state_dict(
        {name[len("injector."):]: t for name, t in params.items() if name.startswith("injector.")}
    )
    return blob["config"]
