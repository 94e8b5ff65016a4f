"""Frozen text-embedding backends mapping knowledge texts to fixed-width vectors.

The pipeline only relies on the width contract (``dim`` entries, finite,
deterministic); the default hash-seeded backend satisfies it without any
model. A real contrastive text tower can be plugged in through
:class:`PretrainedTextBackend` when local weights are available. Backends are
frozen by construction: nothing in training ever writes to them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .errors import ValidationError
from .knowledge import KnowledgeBundle
from .prompts import KNOWLEDGE_IDS


class TextEmbeddingBackend(Protocol):
    dim: int
    token_limit: int

    def embed(self, text: str) -> np.ndarray: ...


class HashTextBackend:
    """Deterministic stand-in encoder: a unit vector seeded from the text hash.

    Same text always embeds to the same vector, across processes and
    platforms; distinct texts land on (almost surely) distinct directions.
    """

    def __init__(self, dim: int = 512, token_limit: int = 77):
        self.dim = dim
        self.token_limit = token_limit

    def embed(self, text: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        return vec.astype(np.float32)


class PretrainedTextBackend:
    """Sentence-transformers wrapper for running with a real text tower.

    Loads lazily so the heavy import is only paid when actually selected.
    ``model_path`` must point at locally available weights.
    """

    def __init__(self, model_path: str, token_limit: int = 77):
        if not model_path:
            raise ValidationError("pretrained text backend needs text_encoder.model_path")
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_path)
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self.token_limit = token_limit

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self._model.encode([text])[0], dtype=np.float32)


class EncodedText(NamedTuple):
    vector: np.ndarray
    truncated: bool


def encode_text(text: str, backend: TextEmbeddingBackend, normalize: bool = False) -> EncodedText:
    """Embed one text; over-long inputs keep their leading tokens.

    Returns the vector together with a flag saying whether truncation was
    applied (a warning condition, not an error).
    """
    if not text:
        raise ValidationError("cannot encode empty text")
    tokens = text.split()
    truncated = False
    if backend.token_limit and len(tokens) > backend.token_limit:
        text = " ".join(tokens[: backend.token_limit])
        truncated = True
    vec = backend.embed(text)
    if vec.shape != (backend.dim,):
        raise ValidationError(f"backend emitted shape {vec.shape}, expected ({backend.dim},)")
    if not np.all(np.isfinite(vec)):
        raise ValidationError("backend emitted non-finite embedding")
    if normalize:
        vec = vec / np.linalg.norm(vec)
    return EncodedText(vec, truncated)


@dataclass
class EncodedKnowledge:
    """The seven knowledge embeddings for one (class, image) pair."""

    class_name: str
    image_id: str
    vectors: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[0]

    def validate(self):
        missing = [k for k in KNOWLEDGE_IDS if k not in self.vectors]
        if missing:
            raise ValidationError(f"encoded knowledge missing vectors {missing}")
        widths = {k: v.shape for k, v in self.vectors.items()}
        if len({w for w in widths.values()}) != 1:
            raise ValidationError(f"inconsistent embedding widths: {widths}")
        for k, v in self.vectors.items():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"non-finite entries in vector {k}")


def encode_bundle(
    bundle: KnowledgeBundle,
    backend: TextEmbeddingBackend,
    normalize: bool = False,
) -> EncodedKnowledge:
    """Encode every text of a complete bundle, preserving knowledge ids."""
    bundle.validate()
    vectors = {
        kid: encode_text(bundle.texts[kid], backend, normalize=normalize).vector
        for kid in KNOWLEDGE_IDS
    }
    enc = EncodedKnowledge(class_name=bundle.class_name, image_id=bundle.image_id, vectors=vectors)
    enc.validate()
    return enc


def make_text_backend(name: str, dim: int = 512, token_limit: int = 77, model_path: str = ""):
    if name == "hash_stub":
        return HashTextBackend(dim=dim, token_limit=token_limit)
    if name == "pretrained":
        return PretrainedTextBackend(model_path, token_limit=token_limit)
    raise ValidationError(f"unknown text encoder backend {name!r} (expected hash_stub|pretrained)")
