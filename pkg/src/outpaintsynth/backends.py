"""Generative backends: the adapter protocol, a deterministic mock and an HTTP client."""

from __future__ import annotations

import base64
import io
import os
import threading
import time
from typing import Protocol

import numpy as np
import requests
from PIL import Image

from .compose import invert_mask
from .quality import image_digest

MOCK_MODES = ("always-smooth", "always-noisy", "noisy-first-k")
ENV_ENDPOINT = "OUTPAINTSYNTH_BACKEND_URL"
ENV_TIMEOUT = "OUTPAINTSYNTH_BACKEND_TIMEOUT"
ENV_RETRIES = "OUTPAINTSYNTH_BACKEND_RETRIES"


class BackendError(RuntimeError):
    pass


class GenerativeBackend(Protocol):
    name: str

    def outpaint(self, canvas, mask, positive, negative, noise_seed) -> np.ndarray: ...

    def text_to_image(self, positive, negative, noise_seed, size=512) -> np.ndarray: ...


class _ModeScoreProvider:
    def __init__(self, backend, name, smooth, noisy, higher_is_better):
        self.backend = backend
        self.name = name
        self.smooth = smooth
        self.noisy = noisy
        self.higher_is_better = higher_is_better

    def score(self, image):
        kind = self.backend.kind_of(image)
        if kind is None:
            raise KeyError(f"{self.name}: image was not produced by this mock backend")
        return self.smooth if kind == "smooth" else self.noisy


class MockBackend:
    """Deterministic stand-in for a diffusion model.

    ``always-smooth`` fills the generated region with a gentle gradient,
    ``always-noisy`` with blocky noise that fails the TV threshold, and
    ``noisy-first-k`` returns noise for the first ``k`` calls on a given canvas
    (or prompt, for text-to-image) and smooth output afterwards. Pixels where
    ``mask == 0`` are returned unchanged.
    """

    name = "mock"

    def __init__(self, mode="always-smooth", k=0, seed=0):
        if mode not in MOCK_MODES:
            raise ValueError(f"unknown mock mode {mode!r}; choose from {MOCK_MODES}")
        if k < 0:
            raise ValueError("k must be >= 0")
        self.mode = mode
        self.k = k
        self.seed = seed
        self._calls: dict[str, int] = {}
        self._kinds: dict[str, str] = {}
        self._lock = threading.Lock()

    def _next_kind(self, key):
        with self._lock:
            n = self._calls.get(key, 0)
            self._calls[key] = n + 1
        if self.mode == "always-smooth":
            return "smooth"
        if self.mode == "always-noisy":
            return "noisy"
        return "noisy" if n < self.k else "smooth"

    def _field(self, kind, h, w, noise_seed):
        rng = np.random.default_rng([int(self.seed) & 0xFFFFFFFF, int(noise_seed) & 0xFFFFFFFF])
        if kind == "smooth":
            top = rng.uniform(60, 200, size=3)
            bottom = np.clip(top + rng.uniform(-60, 60, size=3), 0, 255)
            t = np.linspace(0.0, 1.0, h)[:, None, None]
            return np.broadcast_to(top + (bottom - top) * t, (h, w, 3))
        block = max(1, min(h, w) // 16)
        coarse = rng.uniform(0, 255, size=(-(-h // block), -(-w // block), 3))
        return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:h, :w]

    def _register(self, out, kind):
        with self._lock:
            self._kinds[image_digest(out)] = kind
        return out

    def outpaint(self, canvas, mask, positive, negative, noise_seed):
        canvas = np.asarray(canvas, dtype=np.uint8)
        mask = np.asarray(mask)
        kind = self._next_kind("outpaint:" + image_digest(canvas))
        h, w = canvas.shape[:2]
        alpha = (mask.astype(np.float64) / 255.0)[:, :, None]
        blended = canvas * (1.0 - alpha) + self._field(kind, h, w, noise_seed) * alpha
        out = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
        out[mask == 0] = canvas[mask == 0]
        return self._register(out, kind)

    def text_to_image(self, positive, negative, noise_seed, size=512):
        kind = self._next_kind("t2i:" + positive)
        out = np.clip(np.rint(self._field(kind, size, size, noise_seed)), 0, 255).astype(np.uint8)
        return self._register(np.ascontiguousarray(out), kind)

    def kind_of(self, image):
        with self._lock:
            return self._kinds.get(image_digest(np.asarray(image, dtype=np.uint8)))

    def iqa_providers(self):
        """Fixture BRISQUE/CLIP-IQA scorers that pass smooth and fail noisy outputs."""
        return {
            "brisque": _ModeScoreProvider(self, "brisque", smooth=10.0, noisy=60.0, higher_is_better=False),
            "clipiqa": _ModeScoreProvider(self, "clipiqa", smooth=0.95, noisy=0.3, higher_is_better=True),
        }


def encode_png(array) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


class HttpBackend:
    """Client for a remote inference service.

    Each call POSTs a JSON request::

        {"task": "outpaint" | "text_to_image", "canvas": <base64 PNG>, "mask": <base64 PNG>,
         "positive": str, "negative": str, "noise_seed": int, "size": [width, height]}

    (``canvas``/``mask`` are omitted for text-to-image) and expects the raster
    as PNG bytes in the response body. The mask is sent with 255 marking the
    region to generate unless ``invert_mask`` is set.
    """

    name = "http"

    def __init__(self, endpoint=None, timeout=None, retries=None, invert_mask=False, session=None):
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        if not self.endpoint:
            raise BackendError(f"no backend endpoint given and {ENV_ENDPOINT} is unset")
        self.timeout = float(timeout if timeout is not None else os.environ.get(ENV_TIMEOUT, 120))
        self.retries = int(retries if retries is not None else os.environ.get(ENV_RETRIES, 2))
        self.invert_mask = invert_mask
        self.session = session or requests.Session()

    def _post(self, payload):
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
                time.sleep(min(2.0 ** attempt * 0.1, 2.0))
                continue
            if resp.status_code != 200:
                raise BackendError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
            return decode_png(resp.content)
        raise BackendError(f"backend unreachable after {self.retries + 1} tries: {last}")

    def outpaint(self, canvas, mask, positive, negative, noise_seed):
        canvas = np.asarray(canvas, dtype=np.uint8)
        mask = np.asarray(mask, dtype=np.uint8)
        h, w = canvas.shape[:2]
        payload = {
            "task": "outpaint",
            "canvas": encode_png(canvas),
            "mask": encode_png(invert_mask(mask) if self.invert_mask else mask),
            "positive": positive,
            "negative": negative,
            "noise_seed": int(noise_seed),
            "size": [w, h],
        }
        return self._post(payload)

    def text_to_image(self, positive, negative, noise_seed, size=512):
        payload = {
            "task": "text_to_image",
            "positive": positive,
            "negative": negative,
            "noise_seed": int(noise_seed),
            "size": [size, size],
        }
        return self._post(payload)


def make_backend(name, **kwargs):
    if name == "mock":
        return MockBackend(**kwargs)
    if name == "http":
        return HttpBackend(**kwargs)
    raise ValueError(f"unknown backend {name!r}")
