"""Multimodal-LLM backends used by the knowledge factory.

Two implementations of the same ``query(prompt, image) -> text`` interface:

* :class:`StubMLLMBackend` answers deterministically from the prompt text and
  an image hash, performing no I/O. It exists so the whole pipeline can run
  and be tested without any model.
* :class:`HttpMLLMBackend` posts ``{"prompt": ..., "image_base64": ...}`` to a
  remote service and expects ``{"text": ...}`` back (the protocol served by
  :mod:`mlkg.service`).

Images are passed around as uint8 RGB arrays of shape (H, W, 3).
"""

from __future__ import annotations

import base64
import hashlib
import io
import re
import time
from typing import Optional, Protocol

import httpx
import numpy as np
from PIL import Image

from .errors import BackendError
from .prompts import CLS_PLACEHOLDER, TEMPLATES


class MLLMBackend(Protocol):
    def query(self, prompt: str, image: Optional[np.ndarray] = None) -> str: ...


def image_digest(image: Optional[np.ndarray]) -> str:
    """Stable hex digest of raster content (shape + raw bytes), '-' for no image."""
    if image is None:
        return "-"
    arr = np.ascontiguousarray(image)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _template_matchers():
    """Compile one regex per backend-facing template, capturing the class name."""
    matchers = []
    for pid, tpl in TEMPLATES.items():
        if pid == "Ka":
            continue
        parts = [re.escape(p) for p in tpl.body.split(CLS_PLACEHOLDER)]
        # First slot captures the class; repeats just have to match something.
        pattern = parts[0] + "(?P<cls>.+?)" + "(?:.+?)".join(parts[1:])
        matchers.append((pid, re.compile("^" + pattern + "$", re.DOTALL)))
    return matchers


class StubMLLMBackend:
    """Deterministic canned backend: pure function of (prompt text, image hash).

    Replies with ``stub(<prompt-id>,<class>,<image-hash-prefix>)`` when the
    prompt matches one of the known templates, so the downstream text encoder
    sees distinct, reproducible strings per (prompt, class, image).
    """

    def __init__(self):
        self._matchers = _template_matchers()

    def query(self, prompt: str, image: Optional[np.ndarray] = None) -> str:
        digest = image_digest(image)
        prefix = digest[:8] if digest != "-" else "-"
        for pid, rx in self._matchers:
            m = rx.match(prompt)
            if m:
                return f"stub({pid},{m.group('cls')},{prefix})"
        raw = hashlib.sha256(prompt.encode()).hexdigest()[:8]
        return f"stub(raw,{raw},{prefix})"


def encode_image_base64(image: np.ndarray) -> str:
    """PNG-encode an RGB uint8 array for the wire."""
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_base64(payload: str) -> np.ndarray:
    data = base64.b64decode(payload)
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


class HttpMLLMBackend:
    """Remote backend speaking the JSON wire protocol of :mod:`mlkg.service`.

    Retries transport errors and 5xx responses up to ``retries`` times;
    ``min_interval`` seconds are enforced between consecutive calls so a
    rate-limited endpoint can be used politely.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 3,
        min_interval: float = 0.0,
        retry_delay: float = 0.5,
        client: Optional[httpx.Client] = None,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = max(1, int(retries))
        self.min_interval = min_interval
        self.retry_delay = retry_delay
        self._client = client or httpx.Client()
        self._last_call = 0.0

    def _throttle(self):
        if self.min_interval <= 0:
            return
        wait = self._last_call + self.min_interval - time.monotonic()
        if wait > 0:
            time.sleep(wait)

    def query(self, prompt: str, image: Optional[np.ndarray] = None) -> str:
        payload = {
            "prompt": prompt,
            "image_base64": encode_image_base64(image) if image is not None else None,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            self._throttle()
            try:
                resp = self._client.post(f"{self.url}/query", json=payload, timeout=self.timeout)
                self._last_call = time.monotonic()
                if resp.status_code >= 500:
                    last_error = BackendError(f"server error {resp.status_code}")
                elif resp.status_code != 200:
                    raise BackendError(f"backend rejected request: {resp.status_code} {resp.text}")
                else:
                    text = resp.json().get("text")
                    if not isinstance(text, str) or not text:
                        raise BackendError("backend returned no text")
                    return text
            except httpx.HTTPError as exc:
                self._last_call = time.monotonic()
                last_error = exc
            if attempt + 1 < self.retries and self.retry_delay > 0:
                time.sleep(self.retry_delay)
        raise BackendError(f"backend failed after {self.retries} attempts: {last_error}")
