"""Knowledge factory: bundle generation and the on-disk knowledge cache.

A :class:`KnowledgeBundle` holds the seven knowledge texts for one
(class, image) pair. Target-level texts (Ka, Kb) depend only on the class;
scene-level texts (Kc..Kg) are generated per image, so the cache keys them
accordingly and shares the class-level entries between images of one class.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .backends import MLLMBackend
from .errors import BackendError, CacheFormatError, CacheMissError, ValidationError
from .prompts import KNOWLEDGE_IDS, PROMPT_FOR_KNOWLEDGE, TEMPLATES, render_prompt

CLASS_LEVEL_IDS = ("Ka", "Kb")
SCENE_LEVEL_IDS = ("Kc", "Kd", "Ke", "Kf", "Kg")

CACHE_VERSION = 1


@dataclass
class KnowledgeBundle:
    """Seven knowledge texts for one (class, image) pair."""

    class_name: str
    image_id: str
    texts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        missing = [k for k in KNOWLEDGE_IDS if not self.texts.get(k)]
        if missing:
            raise ValidationError(
                f"bundle for ({self.class_name!r}, {self.image_id!r}) is incomplete: "
                f"missing or empty {missing}"
            )
        expected_ka = render_prompt(TEMPLATES["Ka"], self.class_name)
        if self.texts["Ka"] != expected_ka:
            raise ValidationError(
                f"Ka text {self.texts['Ka']!r} does not match the caption template "
                f"{expected_ka!r}"
            )


def generate_bundle(
    class_name: str,
    image: Optional[np.ndarray],
    image_id: str,
    backend: MLLMBackend,
) -> KnowledgeBundle:
    """Produce a complete bundle: Ka rendered locally, Kb..Kg from the backend.

    Scene prompts require the image; Kb is obtained text-only. Backend
    failures surface as :class:`BackendError` carrying the prompt id that
    failed, so callers can retry from there.
    """
    if image is None:
        raise ValidationError(
            f"scene prompts for class {class_name!r} require an image "
            "(Kc..Kg are generated from the photo)"
        )
    texts = {"Ka": render_prompt(TEMPLATES["Ka"], class_name)}
    for kid in KNOWLEDGE_IDS[1:]:
        pid = PROMPT_FOR_KNOWLEDGE[kid]
        template = TEMPLATES[pid]
        prompt = render_prompt(template, class_name)
        try:
            texts[kid] = backend.query(prompt, image if template.requires_image else None)
        except BackendError as exc:
            raise BackendError(str(exc), prompt_id=pid) from exc
    return KnowledgeBundle(class_name=class_name, image_id=image_id, texts=texts)


class KnowledgeCache:
    """JSON-file cache of generated knowledge, one file per dataset split.

    Schema::

        {
          "version": 1,
          "classes": {"<class>": {"Ka": str, "Kb": str}},
          "images": {"<image_id>": {"class": str, "Kc": str, ..., "Kg": str}}
        }

    Writes go through a temp file and an atomic rename, so concurrent readers
    never observe a torn file. Saved output is byte-stable (sorted keys).
    """

    def __init__(self, path):
        self.path = Path(path)
        self.version = CACHE_VERSION
        self._classes: dict = {}
        self._images: dict = {}
        if self.path.exists():
            self._read()

    def _read(self):
        try:
            raw = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CacheFormatError(self.path, f"cannot parse cache file: {exc}") from exc
        if not isinstance(raw, dict) or "classes" not in raw or "images" not in raw:
            raise CacheFormatError(self.path, "missing 'classes'/'images' sections")
        self.version = raw.get("version", CACHE_VERSION)
        self._classes = raw["classes"]
        self._images = raw["images"]

    def save(self):
        payload = {
            "version": self.version,
            "classes": self._classes,
            "images": self._images,
        }
        text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def store(self, bundle: KnowledgeBundle):
        bundle.validate()
        self._classes[bundle.class_name] = {k: bundle.texts[k] for k in CLASS_LEVEL_IDS}
        entry = {"class": bundle.class_name}
        entry.update({k: bundle.texts[k] for k in SCENE_LEVEL_IDS})
        self._images[bundle.image_id] = entry

    def has(self, class_name: str, image_id: str) -> bool:
        entry = self._images.get(image_id)
        return (
            entry is not None
            and entry.get("class") == class_name
            and class_name in self._classes
        )

    def load(self, class_name: str, image_id: str) -> KnowledgeBundle:
        entry = self._images.get(image_id)
        if entry is None or entry.get("class") != class_name or class_name not in self._classes:
            raise CacheMissError(class_name, image_id)
        texts = dict(self._classes[class_name])
        texts.update({k: entry[k] for k in SCENE_LEVEL_IDS})
        return KnowledgeBundle(class_name=class_name, image_id=image_id, texts=texts)

    def image_ids(self) -> list:
        return sorted(self._images)


def populate_cache(
    cache: KnowledgeCache,
    samples: Iterable,
    backend: MLLMBackend,
    load_image,
    workers: int = 1,
    skip_cached: bool = True,
) -> int:
    """Generate and store bundles for every (class_name, image_id) sample.

    ``samples`` yields objects with ``class_name`` and ``image_id``
    attributes; ``load_image(sample)`` returns the raster. Generation for
    distinct images may run in a thread pool; the cache itself is only
    touched from the calling thread (single writer).
    """
    todo = [s for s in samples if not (skip_cached and cache.has(s.class_name, s.image_id))]

    def make(sample):
        return generate_bundle(sample.class_name, load_image(sample), sample.image_id, backend)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            bundles = list(pool.map(make, todo))
    else:
        bundles = [make(s) for s in todo]
    for bundle in bundles:
        cache.store(bundle)
    if bundles:
        cache.save()
    return len(bundles)
