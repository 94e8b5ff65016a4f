import numpy as np
import pytest
import torch

from mlkg.backends import StubMLLMBackend
from mlkg.config import RunConfig
from mlkg.data import load_dataset, load_sample, make_synthetic_fixture
from mlkg.encoding import HashTextBackend
from mlkg.knowledge import KnowledgeCache, generate_bundle
from mlkg.pipeline import generate_knowledge


def small_config() -> RunConfig:
    """Desk-test model configuration: 64px inputs, tiny transformer."""
    cfg = RunConfig()
    cfg.model.resolution = 64
    cfg.model.patch = 4
    cfg.model.width = 128
    cfg.model.depth = 2
    cfg.model.heads = 4
    cfg.model.decoder_depth = 2
    cfg.injector.d_dec = 128
    return cfg


@pytest.fixture(scope="session")
def test_image() -> np.ndarray:
    rng = np.random.default_rng(42)
    return rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)


@pytest.fixture()
def stub_backend() -> StubMLLMBackend:
    return StubMLLMBackend()


@pytest.fixture()
def text_backend() -> HashTextBackend:
    return HashTextBackend()


@pytest.fixture()
def bundle(test_image, stub_backend):
    return generate_bundle("Mockingbird", test_image, "img-001", stub_backend)


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """The 4-sample synthetic dataset (2 classes x 2 samples, 64px)."""
    root = tmp_path_factory.mktemp("fixture-ds")
    return make_synthetic_fixture(root, n_classes=2, n_per_class=2, size=64, seed=7)


@pytest.fixture(scope="session")
def fixture_cache(fixture_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "knowledge.json"
    cfg = RunConfig()
    generate_knowledge(cfg, fixture_dataset, "train", path)
    generate_knowledge(cfg, fixture_dataset, "test", path)
    return KnowledgeCache(path)


@pytest.fixture(scope="session")
def fixture_train_samples(fixture_dataset):
    index = load_dataset(fixture_dataset, "train")
    return [load_sample(d) for d in index.samples]


@pytest.fixture(autouse=True)
def _fixed_torch_state():
    torch.manual_seed(1234)
