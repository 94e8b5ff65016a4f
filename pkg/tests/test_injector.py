import json
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mlkg.encoding import encode_bundle
from mlkg.errors import ValidationError
from mlkg.injector import (
    SELECTIONS,
    KnowledgeInjector,
    compute_scene_weights,
    resolve_selection,
)
from mlkg.prompts import KNOWLEDGE_IDS

from helpers import fuse_project_gradient_check, numpy_gelu, random_vectors

GOLDEN_PATH = Path(__file__).parent / "data" / "golden_projection.json"


class TestSceneWeights:
    def test_equal_vectors_give_uniform_weights(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(512)
        w = compute_scene_weights(rng.standard_normal(512), v, v, v, v)
        assert w.as_tuple() == (0.25, 0.25, 0.25, 0.25)

    def test_orthogonal_anchor_gives_uniform_weights(self):
        k_c = np.zeros(8)
        k_c[0] = 1.0
        others = [np.eye(8)[i] for i in (1, 2, 3, 4)]
        w = compute_scene_weights(k_c, *others)
        assert w.as_tuple() == (0.25, 0.25, 0.25, 0.25)

    def test_analytic_softmax_case(self):
        # affinities (ln 2, 0, 0, 0) -> softmax (0.4, 0.2, 0.2, 0.2)
        k_c = np.zeros(8)
        k_c[0] = 1.0
        k_d = np.zeros(8)
        k_d[0] = np.log(2.0)
        k_e, k_f, k_g = (np.eye(8)[i] for i in (1, 2, 3))
        w = compute_scene_weights(k_c, k_d, k_e, k_f, k_g)
        assert np.allclose(w.as_tuple(), (0.4, 0.2, 0.2, 0.2), atol=1e-12)

    def test_non_finite_rejected(self):
        bad = np.full(8, np.nan)
        with pytest.raises(ValidationError):
            compute_scene_weights(bad, bad, bad, bad, bad)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            compute_scene_weights(np.ones(8), np.ones(7), np.ones(8), np.ones(8), np.ones(8))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 2.0))
    def test_simplex_property(self, seed, scale):
        # embedding-scale vectors, like the ones text backends emit
        rng = np.random.default_rng(seed)
        vecs = [rng.standard_normal(64) * scale / 8.0 for _ in range(5)]
        w = compute_scene_weights(*vecs)
        values = w.as_tuple()
        assert all(v > 0 for v in values)
        assert abs(sum(values) - 1.0) <= 1e-6

    def test_permutation_covariance(self):
        rng = np.random.default_rng(3)
        k_c, k_d, k_e, k_f, k_g = (rng.standard_normal(32) for _ in range(5))
        base = compute_scene_weights(k_c, k_d, k_e, k_f, k_g)
        permuted = compute_scene_weights(k_c, k_g, k_d, k_f, k_e)
        assert np.allclose(
            permuted.as_tuple(),
            (base.lambda_g, base.lambda_d, base.lambda_f, base.lambda_e),
            atol=1e-12,
        )
        # the weighted sum is permutation invariant as a set
        k_s_base = sum(w * v for w, v in zip(base.as_tuple(), (k_d, k_e, k_f, k_g)))
        k_s_perm = sum(w * v for w, v in zip(permuted.as_tuple(), (k_g, k_d, k_f, k_e)))
        assert np.allclose(k_s_base, k_s_perm, atol=1e-12)

    def test_scale_sensitivity_is_monotone(self):
        k_c = np.eye(16)[0]
        fixed = [np.eye(16)[i] * 0.5 for i in (1, 2, 3)]
        lambdas = []
        for t in (0.5, 1.0, 2.0, 4.0):
            w = compute_scene_weights(k_c, k_c * t, *fixed)
            lambdas.append(w.lambda_d)
        assert all(a < b for a, b in zip(lambdas, lambdas[1:]))

    def test_large_affinities_stay_finite(self):
        rng = np.random.default_rng(9)
        vecs = [rng.standard_normal(512) * 40 for _ in range(5)]
        w = compute_scene_weights(*vecs)
        assert np.isfinite(w.as_tuple()).all()
        assert abs(sum(w.as_tuple()) - 1.0) <= 1e-6


class TestFuse:
    def test_zero_inputs_zero_biases_give_zero_guidance(self):
        inj = KnowledgeInjector(d_text=32, d_proj=16, d_dec=8)
        zeros = {k: np.zeros(32) for k in KNOWLEDGE_IDS}
        result = inj.fuse(zeros)
        assert torch.allclose(result.guidance, torch.zeros(64))
        assert torch.allclose(inj.project(result.guidance), torch.zeros(8))

    def test_single_selection_matches_straight_line_recomputation(self):
        torch.manual_seed(77)
        inj = KnowledgeInjector(d_text=32, d_proj=16, d_dec=8, selection="ka").double()
        rng = np.random.default_rng(5)
        k_a = rng.standard_normal(32)
        result = inj.fuse({"Ka": k_a})
        w = inj.target_fc.weight.detach().numpy()
        b = inj.target_fc.bias.detach().numpy()
        expected = numpy_gelu(w @ np.concatenate([k_a, k_a]) + b)
        assert np.allclose(result.guidance.detach().numpy(), expected, atol=1e-12)
        assert result.k_scene is None and result.weights is None

    def test_kb_selection_duplicates_kb(self):
        torch.manual_seed(78)
        inj = KnowledgeInjector(d_text=16, d_proj=8, d_dec=4, selection="kb").double()
        rng = np.random.default_rng(6)
        k_b = rng.standard_normal(16)
        result = inj.fuse({"Kb": k_b})
        w = inj.target_fc.weight.detach().numpy()
        b = inj.target_fc.bias.detach().numpy()
        expected = numpy_gelu(w @ np.concatenate([k_b, k_b]) + b)
        assert np.allclose(result.guidance.detach().numpy(), expected, atol=1e-12)

    def test_scene_selection_single_branch(self):
        inj = KnowledgeInjector(d_text=16, d_proj=8, d_dec=4, selection="scene")
        rng = np.random.default_rng(7)
        vecs = {k: rng.standard_normal(16) for k in ("Kc", "Kd", "Ke", "Kf", "Kg")}
        result = inj.fuse(vecs)
        assert result.k_target is None
        assert torch.equal(result.guidance, result.k_scene)
        assert abs(sum(result.weights.as_tuple()) - 1.0) <= 1e-6

    def test_full_set_average_of_intermediates(self):
        inj = KnowledgeInjector(d_text=64, d_proj=32, d_dec=16)
        rng = np.random.default_rng(8)
        result = inj.fuse(random_vectors(rng, dim=64))
        assert result.guidance.shape == (128,)
        recomputed = (result.k_target + result.k_scene) / 2
        assert torch.allclose(result.guidance, recomputed, atol=1e-12)

    def test_unsupported_selection_rejected(self):
        with pytest.raises(ValidationError):
            resolve_selection({"Ka", "Kc"})
        with pytest.raises(ValidationError):
            resolve_selection("everything")
        with pytest.raises(ValidationError):
            KnowledgeInjector(selection="kc")

    def test_selection_names_cover_ablation_rows(self):
        assert set(SELECTIONS) == {"ka", "kb", "scene", "all"}
        assert SELECTIONS["all"] == frozenset(KNOWLEDGE_IDS)

    def test_missing_vector_for_selection_rejected(self):
        inj = KnowledgeInjector(d_text=8, d_proj=8, d_dec=4)
        with pytest.raises(ValidationError):
            inj.fuse({"Ka": np.zeros(8)})

    def test_wrong_width_rejected(self):
        inj = KnowledgeInjector(d_text=8, d_proj=8, d_dec=4)
        vecs = {k: np.zeros(9) for k in KNOWLEDGE_IDS}
        with pytest.raises(ValidationError):
            inj.fuse(vecs)

    def test_fuse_accepts_encoded_knowledge(self, bundle, text_backend):
        enc = encode_bundle(bundle, text_backend)
        inj = KnowledgeInjector()
        out = inj(enc)
        assert out.shape == (256,)


class TestProjection:
    def test_output_width_follows_config(self):
        for d_dec in (256, 128, 64):
            inj = KnowledgeInjector(d_text=32, d_proj=16, d_dec=d_dec)
            g = torch.zeros(64)
            assert inj.project(g).shape == (d_dec,)

    def test_width_mismatch_rejected(self):
        inj = KnowledgeInjector(d_text=32, d_proj=16, d_dec=8)
        with pytest.raises(ValidationError):
            inj.project(torch.zeros(65))

    def test_golden_projection_regenerates_identically(self):
        golden = json.loads(GOLDEN_PATH.read_text())
        torch.manual_seed(golden["torch_seed"])
        inj = KnowledgeInjector(d_text=64, d_proj=32, d_dec=16)
        rng = np.random.default_rng(golden["input_seed"])
        out = inj(random_vectors(rng, dim=64))
        assert np.array_equal(out.detach().numpy().astype(np.float64), np.array(golden["output"]))

    def test_determinism_on_same_inputs(self):
        inj = KnowledgeInjector(d_text=32, d_proj=16, d_dec=8)
        rng = np.random.default_rng(11)
        vecs = random_vectors(rng, dim=32)
        a = inj(vecs).detach().numpy()
        b = inj(vecs).detach().numpy()
        assert np.array_equal(a, b)


def test_gradients_match_finite_differences_quick():
    torch.manual_seed(5)
    inj = KnowledgeInjector(d_text=24, d_proj=16, d_dec=8)
    rng = np.random.default_rng(13)
    worst = fuse_project_gradient_check(inj, random_vectors(rng, dim=24))
    assert worst < 1e-4
