import numpy as np
import pytest

from mlkg.encoding import (
    HashTextBackend,
    encode_bundle,
    encode_text,
    make_text_backend,
)
from mlkg.errors import ValidationError
from mlkg.prompts import KNOWLEDGE_IDS


def test_width_and_determinism(text_backend):
    first = encode_text("A photo of a Mockingbird.", text_backend)
    second = encode_text("A photo of a Mockingbird.", text_backend)
    assert first.vector.shape == (512,)
    assert not first.truncated
    assert np.array_equal(first.vector, second.vector)
    assert np.isclose(np.linalg.norm(first.vector), 1.0, atol=1e-5)


def test_distinct_texts_distinct_vectors(text_backend):
    a = encode_text("a quiet forest", text_backend).vector
    b = encode_text("a noisy reef", text_backend).vector
    assert not np.array_equal(a, b)


def test_empty_text_rejected(text_backend):
    with pytest.raises(ValidationError):
        encode_text("", text_backend)


def test_long_text_truncates_with_flag():
    backend = HashTextBackend(dim=512, token_limit=77)
    words = " ".join(f"w{i}" for i in range(500))
    result = encode_text(words, backend)
    assert result.truncated
    assert result.vector.shape == (512,)
    # leading tokens are kept: same embedding as the explicit 77-token prefix
    prefix = " ".join(f"w{i}" for i in range(77))
    assert np.array_equal(result.vector, encode_text(prefix, backend).vector)


def test_width_invariance_across_lengths(text_backend):
    for text in ("x", "x " * 40, "x " * 200):
        assert encode_text(text.strip(), text_backend).vector.shape == (512,)


def test_custom_dim():
    backend = HashTextBackend(dim=64)
    assert encode_text("abc", backend).vector.shape == (64,)


def test_normalize_flag(text_backend):
    raw = encode_text("some text", text_backend, normalize=False).vector
    normed = encode_text("some text", text_backend, normalize=True).vector
    assert np.allclose(normed, raw / np.linalg.norm(raw))


def test_encode_bundle_shapes(bundle, text_backend):
    enc = encode_bundle(bundle, text_backend)
    assert set(enc.vectors) == set(KNOWLEDGE_IDS)
    assert all(v.shape == (512,) for v in enc.vectors.values())
    assert enc.class_name == "Mockingbird"
    assert enc.image_id == "img-001"


def test_encode_bundle_deterministic(bundle, text_backend):
    a = encode_bundle(bundle, text_backend)
    b = encode_bundle(bundle, text_backend)
    for k in KNOWLEDGE_IDS:
        assert np.array_equal(a.vectors[k], b.vectors[k])


def test_encode_bundle_missing_text_rejected(bundle, text_backend):
    del bundle.texts["Kd"]
    with pytest.raises(ValidationError):
        encode_bundle(bundle, text_backend)


def test_backend_registry():
    assert isinstance(make_text_backend("hash_stub", dim=128), HashTextBackend)
    with pytest.raises(ValidationError):
        make_text_backend("nope")
