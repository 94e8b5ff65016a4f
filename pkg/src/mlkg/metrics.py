"""The four mask-quality metrics and their aggregation over dataset splits.

All metrics take a prediction in [0, 1] and a binary ground truth of the
same shape; predictions at a different resolution are resized (bilinear) to
the ground truth's native resolution before scoring. Degenerate-case
conventions are pinned explicitly in each function since public
implementations disagree on them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, List, Mapping, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import MetricError, ValidationError

log = logging.getLogger(__name__)

_EPS = 1e-20


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.min() < 0 or pred.max() > 1:
        raise ValidationError("prediction values must lie in [0, 1]")


def resize_prediction(pred: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize of a float prediction map to the gt's (H, W)."""
    if pred.shape == tuple(shape):
        return pred
    img = Image.fromarray(pred.astype(np.float32), mode="F")
    out = img.resize((shape[1], shape[0]), Image.BILINEAR)
    return np.clip(np.asarray(out, dtype=np.float64), 0.0, 1.0)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute difference between prediction and ground truth."""
    _check_pair(pred, gt)
    return float(np.mean(np.abs(pred.astype(np.float64) - gt.astype(np.float64))))


# --- structure measure -----------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _ssim_term(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 1.0
    x = pred.mean()
    y = gt.mean()
    sigma_x = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sigma_y = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    num = 4 * x * y * sigma_xy
    den = (x * x + y * y) * (sigma_x + sigma_y)
    if num != 0:
        return float(num / (den + _EPS))
    return 1.0 if den == 0 else 0.0


def _object_term(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + _EPS))


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    o_fg = _object_term(pred[gt == 1])
    o_bg = _object_term((1.0 - pred)[gt == 0])
    u = gt.mean()
    return float(u * o_fg + (1.0 - u) * o_bg)


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        cx = _round_half_up(cols / 2)
        cy = _round_half_up(rows / 2)
    else:
        # 1-based centroid coordinates, so the cut keeps the centroid row/col
        # in the top-left quadrant.
        cx = _round_half_up(((gt.sum(axis=0) * np.arange(1, cols + 1)).sum()) / total)
        cy = _round_half_up(((gt.sum(axis=1) * np.arange(1, rows + 1)).sum()) / total)
    area = rows * cols
    score = 0.0
    for rs, cs, weight in (
        (slice(0, cy), slice(0, cx), cx * cy / area),
        (slice(0, cy), slice(cx, cols), (cols - cx) * cy / area),
        (slice(cy, rows), slice(0, cx), cx * (rows - cy) / area),
        (slice(cy, rows), slice(cx, cols), None),
    ):
        if weight is None:
            weight = 1.0 - cx * cy / area - (cols - cx) * cy / area - cx * (rows - cy) / area
        score += weight * _ssim_term(pred[rs, cs], gt[rs, cs].astype(np.float64))
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure similarity: object-aware and region-aware terms, mixed by alpha.

    Degenerate conventions: empty gt scores 1 - mean(pred); full gt scores
    mean(pred). Negative mixed scores clamp to 0.
    """
    _check_pair(pred, gt)
    pred = pred.astype(np.float64)
    gt = (gt > 0.5).astype(np.float64)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return max(0.0, float(score))


# --- adaptive enhanced alignment -------------------------------------------

def adaptive_threshold(pred: np.ndarray) -> float:
    return float(min(2.0 * pred.mean(), 1.0))


def e_measure_adaptive(pred: np.ndarray, gt: np.ndarray) -> float:
    """Enhanced alignment of the adaptively binarized prediction with the gt.

    The prediction is binarized at min(2 * mean(pred), 1); the alignment of
    the two bias matrices is enhanced quadratically and averaged. Scores are
    clipped to [0, 1] (the raw normalization can exceed 1 by 1/(HW-1) in the
    perfect-match limit).
    """
    _check_pair(pred, gt)
    gt = (gt > 0.5).astype(np.float64)
    binary = (pred >= adaptive_threshold(pred)).astype(np.float64)
    if gt.sum() == 0:
        enhanced = 1.0 - binary
    elif gt.sum() == gt.size:
        enhanced = binary
    else:
        fm = binary - binary.mean()
        gm = gt - gt.mean()
        align = 2.0 * gm * fm / (gm * gm + fm * fm + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    score = enhanced.sum() / (gt.size - 1 + _EPS)
    return float(np.clip(score, 0.0, 1.0))


# --- weighted F-measure -----------------------------------------------------

def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def _nearest_foreground(gt_b: np.ndarray, dist: np.ndarray):
    """Index maps of the nearest foreground pixel for every background pixel.

    Equidistant candidates are resolved to the row-major-first one; distance
    transforms leave that tie-break implementation-defined, so it is pinned
    here (and mirrored by any re-implementation of this metric).
    """
    rows, cols = gt_b.shape
    fi, fj = np.indices(gt_b.shape)
    d2_map = np.rint(dist * dist).astype(np.int64)
    for i, j in zip(*np.nonzero(~gt_b)):
        d2 = int(d2_map[i, j])
        found = False
        r = math.isqrt(d2)
        for di in range(-r, r + 1):
            rem = d2 - di * di
            s = math.isqrt(rem)
            if s * s != rem:
                continue
            ci = i + di
            if not 0 <= ci < rows:
                continue
            for dj in ((-s, s) if s else (0,)):
                cj = j + dj
                if 0 <= cj < cols and gt_b[ci, cj]:
                    fi[i, j], fj[i, j] = ci, cj
                    found = True
                    break
            if found:
                break
    return fi, fj


def weighted_f_beta(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    """Precision/recall measure with dependency-aware, distance-weighted errors.

    Errors inside the object copy the error of the nearest foreground pixel
    and are locally averaged by a 7x7 sigma-5 Gaussian; background errors are
    down-weighted with distance from the object. Undefined for an empty
    ground truth.
    """
    _check_pair(pred, gt)
    gt_b = gt > 0.5
    if not gt_b.any():
        raise MetricError("weighted F-measure undefined for empty ground truth")
    pred = pred.astype(np.float64)
    gt_f = gt_b.astype(np.float64)

    err = np.abs(pred - gt_f)
    dist = ndimage.distance_transform_edt(~gt_b)
    fi, fj = _nearest_foreground(gt_b, dist)
    err_dep = err.copy()
    err_dep[~gt_b] = err[fi[~gt_b], fj[~gt_b]]
    smoothed = ndimage.correlate(err_dep, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = err.copy()
    use_smoothed = gt_b & (smoothed < err)
    min_err[use_smoothed] = smoothed[use_smoothed]

    weight = np.ones_like(gt_f)
    weight[~gt_b] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~gt_b])
    weighted_err = min_err * weight

    n_fg = gt_f.sum()
    tp = n_fg - weighted_err[gt_b].sum()
    fp = weighted_err[~gt_b].sum()
    recall = 1.0 - weighted_err[gt_b].mean()
    precision = tp / (tp + fp + _EPS)
    return float(
        (1.0 + beta2) * recall * precision / (recall + beta2 * precision + _EPS)
    )


# --- aggregation -------------------------------------------------------------

GROUPS = ("overall", "single_obj", "multi_obj")


@dataclass
class MetricsReport:
    group: str
    s_measure: float
    e_measure_adaptive: float
    weighted_f_beta: float
    mae: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_dataset(
    predictions: Mapping[str, np.ndarray],
    gts: Mapping[str, np.ndarray],
    groups: Optional[Mapping[str, str]] = None,
) -> List[MetricsReport]:
    """Mean metrics per group; every sample also counts toward ``overall``.

    Samples with an empty ground truth have no defined weighted F-measure;
    they are reported via the log and excluded from that metric's mean only.
    """
    missing = sorted(set(gts) - set(predictions))
    if missing:
        raise MetricError(f"missing predictions for ids: {missing}")
    groups = groups or {}

    per_group: Dict[str, list] = {g: [] for g in GROUPS}
    for image_id in sorted(gts):
        gt = (np.asarray(gts[image_id]) > 0.5).astype(np.uint8)
        pred = resize_prediction(np.asarray(predictions[image_id], dtype=np.float64), gt.shape)
        try:
            wfm = weighted_f_beta(pred, gt)
        except MetricError:
            log.warning("weighted F-measure undefined for %s (empty gt); excluded", image_id)
            wfm = None
        row = (s_measure(pred, gt), e_measure_adaptive(pred, gt), wfm, mae(pred, gt))
        per_group["overall"].append(row)
        group = groups.get(image_id)
        if group is not None:
            if group not in per_group:
                raise ValidationError(f"unknown group {group!r} for {image_id!r}")
            per_group[group].append(row)

    reports = []
    for group in GROUPS:
        rows = per_group[group]
        if not rows:
            continue
        wfms = [r[2] for r in rows if r[2] is not None]
        reports.append(
            MetricsReport(
                group=group,
                s_measure=float(np.mean([r[0] for r in rows])),
                e_measure_adaptive=float(np.mean([r[1] for r in rows])),
                weighted_f_beta=float(np.mean(wfms)) if wfms else float("nan"),
                mae=float(np.mean([r[3] for r in rows])),
                n_samples=len(rows),
            )
        )
    return reports
