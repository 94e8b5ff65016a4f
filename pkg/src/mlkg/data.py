"""Dataset loading in the canonical layout, plus synthetic desk-scale fixtures.

Canonical layout::

    root/<split>/images/<class>/<id>.<ext>
    root/<split>/masks/<class>/<id>.png

The textual reference for a sample is its class directory name with hyphens
and underscores mapped to spaces. Real camouflage datasets can be imported
by re-arranging them into this layout; the synthetic fixture generator below
produces the same structure from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import DatasetError, ValidationError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
MASK_THRESHOLD = 128
MULTI_OBJ_MIN_COMPONENTS = 2
MULTI_OBJ_AREA_FLOOR = 0.001  # fraction of image pixels


@dataclass(frozen=True)
class SampleDescriptor:
    image_id: str
    class_name: str
    image_path: Path
    mask_path: Path


@dataclass
class DatasetIndex:
    split: str
    samples: List[SampleDescriptor]

    def __len__(self):
        return len(self.samples)

    def class_names(self) -> List[str]:
        return sorted({s.class_name for s in self.samples})


@dataclass
class CamouflagedSample:
    image_id: str
    photo: np.ndarray          # uint8, (H, W, 3)
    t_ref: str
    gt_mask: np.ndarray        # uint8 in {0, 1}, (H, W)
    group: str                 # single_obj | multi_obj

    @property
    def class_name(self) -> str:
        return self.t_ref


def class_label(directory_name: str) -> str:
    return directory_name.replace("-", " ").replace("_", " ")


def load_dataset(root, split: str) -> DatasetIndex:
    """Enumerate image/mask pairs of one split; orphans are integrity errors."""
    root = Path(root)
    images_dir = root / split / "images"
    masks_dir = root / split / "masks"
    if not images_dir.is_dir():
        raise DatasetError(f"missing images directory {images_dir}")
    if not masks_dir.is_dir():
        raise DatasetError(f"missing masks directory {masks_dir}")

    samples = []
    orphan_images, seen_mask_paths = [], set()
    for class_dir in sorted(p for p in images_dir.iterdir() if p.is_dir()):
        for image_path in sorted(class_dir.iterdir()):
            if image_path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            mask_path = masks_dir / class_dir.name / (image_path.stem + ".png")
            if not mask_path.is_file():
                orphan_images.append(str(image_path))
                continue
            seen_mask_paths.add(mask_path)
            samples.append(
                SampleDescriptor(
                    image_id=f"{class_dir.name}__{image_path.stem}",
                    class_name=class_label(class_dir.name),
                    image_path=image_path,
                    mask_path=mask_path,
                )
            )
    orphan_masks = [
        str(p)
        for class_dir in sorted(q for q in masks_dir.iterdir() if q.is_dir())
        for p in sorted(class_dir.iterdir())
        if p.suffix.lower() == ".png" and p not in seen_mask_paths
    ]
    if orphan_images or orphan_masks:
        raise DatasetError(
            f"dataset integrity failure in {root}/{split}: "
            f"images without masks: {orphan_images}; masks without images: {orphan_masks}"
        )
    ids = [s.image_id for s in samples]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DatasetError(f"duplicate image ids: {dupes}")
    samples.sort(key=lambda s: s.image_id)
    return DatasetIndex(split=split, samples=samples)


def classify_group(mask: np.ndarray) -> str:
    """multi_obj when >= 2 connected components each cover >= 0.1% of pixels."""
    floor = MULTI_OBJ_AREA_FLOOR * mask.size
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n < MULTI_OBJ_MIN_COMPONENTS:
        return "single_obj"
    areas = ndimage.sum_labels(np.ones_like(mask), labels, index=range(1, n + 1))
    return "multi_obj" if (areas >= floor).sum() >= MULTI_OBJ_MIN_COMPONENTS else "single_obj"


def load_photo(descriptor: SampleDescriptor) -> np.ndarray:
    try:
        return np.asarray(Image.open(descriptor.image_path).convert("RGB"))
    except OSError as exc:
        raise DatasetError(f"cannot read image {descriptor.image_path}: {exc}") from exc


def load_mask(path) -> np.ndarray:
    try:
        raw = np.asarray(Image.open(path).convert("L"))
    except OSError as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    return (raw >= MASK_THRESHOLD).astype(np.uint8)


def load_sample(descriptor: SampleDescriptor) -> CamouflagedSample:
    photo = load_photo(descriptor)
    mask = load_mask(descriptor.mask_path)
    if mask.shape != photo.shape[:2]:
        raise DatasetError(
            f"{descriptor.image_id}: mask shape {mask.shape} does not match "
            f"photo {photo.shape[:2]}"
        )
    return CamouflagedSample(
        image_id=descriptor.image_id,
        photo=photo,
        t_ref=descriptor.class_name,
        gt_mask=mask,
        group=classify_group(mask),
    )


# --- synthetic fixtures -------------------------------------------------------

_CLASS_NAMES = (
    "triangle", "square", "pentagon", "hexagon", "heptagon",
    "octagon", "nonagon", "decagon",
)


def _class_name(class_index: int) -> str:
    if class_index < len(_CLASS_NAMES):
        return _CLASS_NAMES[class_index]
    return f"polygon{class_index + 3}"


def _polygon_points(center, radius, sides, rotation):
    angles = rotation + np.arange(sides) * (2 * np.pi / sides)
    return [(center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)) for a in angles]


def _texture(rng: np.random.Generator, size: int, base: float, phase_shift: float = 0.0):
    yy, xx = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(1.0, 5.0, size=2)
        phase = rng.uniform(0, 2 * np.pi) + phase_shift
        field += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    field += 0.6 * rng.standard_normal((size, size))
    field = (field - field.min()) / (field.max() - field.min() + 1e-12)
    return base + 0.25 * field


def _draw_shape_mask(size: int, sides: int, rng: np.random.Generator,
                     center_frac, radius_frac) -> np.ndarray:
    center = (center_frac[0] * size + rng.uniform(-0.04, 0.04) * size,
              center_frac[1] * size + rng.uniform(-0.04, 0.04) * size)
    radius = rng.uniform(*radius_frac) * size
    rotation = rng.uniform(0, 2 * np.pi)
    img = Image.new("L", (size, size), 0)
    ImageDraw.Draw(img).polygon(_polygon_points(center, radius, sides, rotation), fill=255)
    return (np.asarray(img) > 0).astype(np.uint8)


def make_synthetic_fixture(
    out_dir,
    n_classes: int = 2,
    n_per_class: int = 2,
    size: int = 64,
    seed: int = 0,
    splits=("train", "test"),
) -> Path:
    """Write a deterministic fixture dataset of camouflaged polygons.

    Each class uses one polygon vocabulary (class i draws (i+3)-gons), so
    vocabularies are disjoint across classes. Backgrounds are textured; the
    embedded shape shifts the texture by a low-contrast delta, and the exact
    shape raster is saved as the mask. Odd-indexed samples contain a second,
    well-separated shape (a multi-object scene).
    """
    if size < 32:
        raise ValidationError("fixture size must be >= 32")
    out_dir = Path(out_dir)
    for split_idx, split in enumerate(splits):
        for class_idx in range(n_classes):
            name = _class_name(class_idx)
            img_dir = out_dir / split / "images" / name
            mask_dir = out_dir / split / "masks" / name
            img_dir.mkdir(parents=True, exist_ok=True)
            mask_dir.mkdir(parents=True, exist_ok=True)
            for sample_idx in range(n_per_class):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, split_idx, class_idx, sample_idx])
                )
                sides = class_idx + 3
                mask = _draw_shape_mask(size, sides, rng, (0.40, 0.40), (0.18, 0.24))
                if sample_idx % 2 == 1:
                    mask |= _draw_shape_mask(size, sides, rng, (0.78, 0.78), (0.10, 0.14))

                channels = []
                delta = rng.uniform(0.08, 0.15) * rng.choice((-1.0, 1.0))
                for _ in range(3):
                    background = _texture(rng, size, base=rng.uniform(0.25, 0.45))
                    inner = _texture(rng, size, base=rng.uniform(0.25, 0.45),
                                     phase_shift=rng.uniform(0.5, 1.5)) + delta
                    channels.append(np.where(mask == 1, inner, background))
                photo = np.clip(np.stack(channels, axis=-1), 0, 1)
                photo8 = (photo * 255).round().astype(np.uint8)

                stem = f"{name}_{sample_idx:04d}"
                Image.fromarray(photo8).save(img_dir / f"{stem}.png")
                Image.fromarray(mask * 255).save(mask_dir / f"{stem}.png")
    return out_dir
