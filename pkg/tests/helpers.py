"""Shared numeric helpers for the test suite."""

import math

import numpy as np
import torch

from mlkg.prompts import KNOWLEDGE_IDS


def random_vectors(rng: np.random.Generator, dim: int = 512, scale: float = 1.0) -> dict:
    return {k: rng.standard_normal(dim) * scale for k in KNOWLEDGE_IDS}


def numpy_gelu(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def fuse_project_gradient_check(injector, vectors, probe_seed=0, step=1e-5, rel_tol=1e-4):
    """Central finite differences vs autograd for fuse + project.

    Checks one random direction per parameter tensor and per input vector in
    double precision. Returns the worst relative error seen.
    """
    injector = injector.double()
    gen = torch.Generator().manual_seed(probe_seed)
    inputs = {
        k: torch.as_tensor(np.asarray(v), dtype=torch.float64).clone().requires_grad_(True)
        for k, v in vectors.items()
    }
    probe = torch.randn(injector.d_dec, generator=gen, dtype=torch.float64)

    def loss():
        out = injector.project(injector.fuse(inputs).guidance)
        return (out * probe).sum()

    value = loss()
    grads = torch.autograd.grad(
        value, list(inputs.values()) + list(injector.parameters()), allow_unused=True
    )
    named = list(zip(list(inputs.keys()) + [n for n, _ in injector.named_parameters()], grads))
    tensors = list(inputs.values()) + [p for _, p in injector.named_parameters()]

    worst = 0.0
    for (name, grad), tensor in zip(named, tensors):
        if grad is None:
            # unused under the current selection (e.g. scene branch dropped)
            continue
        direction = torch.randn(tensor.shape, generator=gen, dtype=torch.float64)
        direction /= direction.norm()
        analytic = float((grad * direction).sum())
        with torch.no_grad():
            tensor += step * direction
            plus = float(loss())
            tensor -= 2 * step * direction
            minus = float(loss())
            tensor += step * direction
        numeric = (plus - minus) / (2 * step)
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        assert rel < rel_tol, f"gradient mismatch for {name}: {analytic} vs {numeric} (rel {rel})"
        worst = max(worst, rel)
    return worst
