"""Command-line entry point wiring the whole pipeline.

Commands: ``fixture``, ``knowledge``, ``train``, ``predict``, ``eval``,
``visualize``. Failures print one machine-parsable line on stderr; exit code
3 marks configuration problems, 2 usage errors, 1 anything else.
"""

from __future__ import annotations

import sys
from functools import wraps

import click

from . import pipeline
from .config import default_cache_path, load_config
from .data import make_synthetic_fixture
from .errors import ConfigError, MLKGError

SELECTION_CHOICES = ("ka", "kb", "scene", "all")


def _fail(exc: MLKGError) -> int:
    message = " ".join(str(exc).split())
    click.echo(f"error: {type(exc).__name__}: {message}", err=True)
    return 3 if isinstance(exc, ConfigError) else 1


def handle_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MLKGError as exc:
            sys.exit(_fail(exc))

    return wrapper


@click.group()
def main():
    """Multi-level knowledge-guided camouflaged object segmentation."""


@main.command()
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--per-class", type=int, default=2, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def fixture(classes, per_class, size, seed, out):
    """Generate a deterministic synthetic camouflage dataset."""
    root = make_synthetic_fixture(
        out, n_classes=classes, n_per_class=per_class, size=size, seed=seed
    )
    click.echo(f"fixture written to {root}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_root", required=True, type=click.Path())
@click.option("--split", default="train", show_default=True)
@click.option("--backend", type=click.Choice(["stub", "http"]), default=None,
              help="Override mllm.backend.")
@click.option("--url", default=None, help="Override mllm.url for the http backend.")
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Knowledge cache file (default: $MLKG_CACHE or ./knowledge_cache.json).")
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def knowledge(config_path, data_root, split, backend, url, cache_path, workers):
    """Generate and cache multi-level knowledge for a dataset split."""
    cfg = load_config(config_path)
    if backend:
        cfg.mllm.backend = backend
    if url:
        cfg.mllm.url = url
    cache = default_cache_path(cache_path)
    n = pipeline.generate_knowledge(cfg, data_root, split, cache, workers=workers)
    click.echo(f"generated {n} bundles into {cache}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_root", default=None, type=click.Path(),
              help="Dataset root (overrides train.data_root).")
@click.option("--knowledge-cache", "cache_path", type=click.Path(), default=None)
@click.option("--selection", type=click.Choice(SELECTION_CHOICES), default=None,
              help="Knowledge configuration to train with (overrides injector.selection).")
@click.option("--steps", type=int, default=None, help="Override train.total_steps.")
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--out", required=True, type=click.Path(), help="Checkpoint output path.")
@handle_errors
def train(config_path, data_root, cache_path, selection, steps, seed, out):
    """Train decoder, injector and adapters on cached knowledge."""
    cfg = load_config(config_path)
    if selection:
        cfg.injector.selection = selection
    if steps is not None:
        cfg.train.total_steps = steps
    if seed is not None:
        cfg.train.seed = seed
    if data_root:
        cfg.train.data_root = data_root
    if not cfg.train.data_root:
        raise ConfigError("no dataset root: pass --data or set train.data_root")
    cache = default_cache_path(cache_path)
    result = pipeline.run_training(cfg, cfg.train.data_root, cache, out)
    click.echo(
        f"trained {cfg.train.total_steps} steps: final bce {result.final_loss:.4f}, "
        f"train mae {result.final_train_mae:.4f}, checkpoint {out}"
    )


@main.command()
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--data", "data_root", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@click.option("--knowledge-cache", "cache_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path(), help="Prediction directory.")
@handle_errors
def predict(checkpoint, data_root, split, cache_path, out):
    """Write one 8-bit grayscale mask per image (probabilities scaled to 0-255)."""
    if not checkpoint:
        raise ConfigError("predict requires --checkpoint")
    cache = default_cache_path(cache_path)
    n = pipeline.run_predict(checkpoint, data_root, split, cache, out)
    click.echo(f"wrote {n} prediction masks to {out}")


@main.command("eval")
@click.option("--pred-dir", required=True, type=click.Path())
@click.option("--gt-dir", required=True, type=click.Path())
@click.option("--groups", "groups_path", type=click.Path(), default=None,
              help="JSON mapping image_id to single_obj/multi_obj (derived from gt if absent).")
@click.option("--out", "out_path", default="report.json", show_default=True,
              type=click.Path())
@handle_errors
def eval_command(pred_dir, gt_dir, groups_path, out_path):
    """Score predictions against ground truth and write report.json."""
    reports = pipeline.run_eval(pred_dir, gt_dir, groups_path, out_path)
    for r in reports:
        click.echo(
            f"{r.group}: S {r.s_measure:.4f}  aE {r.e_measure_adaptive:.4f}  "
            f"Fw {r.weighted_f_beta:.4f}  MAE {r.mae:.4f}  (n={r.n_samples})"
        )


@main.command()
@click.option("--data", "data_root", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@click.option("--pred-dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@handle_errors
def visualize(data_root, split, pred_dir, out):
    """Write photo / ground-truth / prediction side-by-side panels."""
    n = pipeline.run_visualize(data_root, split, pred_dir, out)
    click.echo(f"wrote {n} panels to {out}")


if __name__ == "__main__":
    main()
