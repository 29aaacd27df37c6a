"""No-reference quality gate: native TV loss plus pluggable BRISQUE/CLIP-IQA scorers."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image

logger = logging.getLogger(__name__)

SKIPPED = None


def _area_weights(n_in, n_out):
    """Integer ``(n_out, n_in)`` overlap matrix, in units of ``1/n_out`` pixel; rows sum to ``n_in``."""
    edges = np.arange(n_out + 1) * n_in
    lo = np.arange(n_in) * n_out
    w = np.minimum(edges[1:, None], lo[None, :] + n_out) - np.maximum(edges[:-1, None], lo[None, :])
    return np.clip(w, 0, None).astype(float)


def area_downscale(image, size):
    """Resize to ``size x size`` by exact area averaging (box filter)."""
    arr = check_image(image)
    h, w, _ = arr.shape
    # integer weights keep sums exact for 8-bit input; one division at the end
    out = np.einsum("ih,hwc,jw->ijc", _area_weights(h, size), arr, _area_weights(w, size), optimize=True)
    return out / (h * w)


def total_variation(image) -> float:
    """Mean absolute difference over all horizontally and vertically adjacent pixel pairs."""
    arr = check_image(image)
    h, w, c = arr.shape
    n_pairs = h * (w - 1) + (h - 1) * w
    if n_pairs == 0:
        return 0.0
    total = np.abs(np.diff(arr, axis=1)).sum() + np.abs(np.diff(arr, axis=0)).sum()
    return float(total / (n_pairs * c))


def tv_loss(image, target_resolution=32) -> float:
    """Total variation of the image after area-downscaling to ``target_resolution`` squared.

    Intensities are taken as given (expected on a 0-255 scale). Images smaller
    than the target in either dimension are scored at native resolution.
    """
    if target_resolution < 2:
        raise ValueError("target_resolution must be >= 2")
    arr = check_image(image)
    if arr.shape[0] < target_resolution or arr.shape[1] < target_resolution:
        logger.info("image %s smaller than %d px; scoring TV at native resolution", arr.shape[:2], target_resolution)
        return total_variation(arr)
    return total_variation(area_downscale(arr, target_resolution))


def image_digest(image) -> str:
    arr = np.ascontiguousarray(np.asarray(image))
    h = hashlib.sha1(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


class IqaProvider(Protocol):
    name: str
    higher_is_better: bool

    def score(self, image) -> float: ...


class CallableProvider:
    """Adapter around any ``image -> float`` scorer."""

    def __init__(self, name, func, higher_is_better):
        self.name = name
        self.func = func
        self.higher_is_better = higher_is_better

    def score(self, image):
        return float(self.func(image))

    def __repr__(self):
        return f"CallableProvider({self.name!r})"


class FixtureIqaProvider:
    """Returns recorded scores keyed by image content digest.

    Unknown images raise ``KeyError`` unless ``default`` is given.
    """

    def __init__(self, name, scores=None, higher_is_better=False, default=None):
        self.name = name
        self.scores = dict(scores or {})
        self.higher_is_better = higher_is_better
        self.default = default

    def record(self, image, value):
        self.scores[image_digest(image)] = float(value)

    def score(self, image):
        key = image_digest(image)
        if key in self.scores:
            return self.scores[key]
        if self.default is not None:
            return float(self.default)
        raise KeyError(f"{self.name}: no recorded score for image {key[:12]}")

    def __repr__(self):
        return f"FixtureIqaProvider({self.name!r}, n={len(self.scores)})"


class PyiqaProvider:
    """BRISQUE or CLIP-IQA through the optional ``pyiqa`` package."""

    _DIRECTION = {"brisque": False, "clipiqa": True}

    def __init__(self, metric, device="cpu"):
        if metric not in self._DIRECTION:
            raise ValueError(f"metric must be one of {sorted(self._DIRECTION)}")
        try:
            import pyiqa  # noqa: F401
        except ImportError as exc:
            raise ImportError("PyiqaProvider needs the optional 'pyiqa' package (pip install pyiqa)") from exc
        self.name = metric
        self.higher_is_better = self._DIRECTION[metric]
        self.device = device
        self._metric = None

    def score(self, image):
        import pyiqa
        import torch

        if self._metric is None:
            self._metric = pyiqa.create_metric(self.name, device=self.device)
        arr = np.asarray(image, dtype=np.float32) / 255.0
        tensor = torch.from_numpy(arr).permute(2, 0, 1)[None].to(self.device)
        with torch.no_grad():
            return float(self._metric(tensor).item())


@dataclass(frozen=True)
class QualityThresholds:
    brisque_max: float = 15.0
    clipiqa_min: float = 0.9
    tv_max: float = 15.0
    tv_resolution: int = 32

    def __post_init__(self):
        for name in ("brisque_max", "clipiqa_min", "tv_max"):
            if math.isnan(getattr(self, name)):
                raise ValueError(f"{name} must not be NaN")
        if int(self.tv_resolution) < 2:
            raise ValueError("tv_resolution must be >= 2")


@dataclass
class QualityReport:
    brisque: float | None
    clip_iqa: float | None
    tv: float
    pass_brisque: bool | None
    pass_clipiqa: bool | None
    pass_tv: bool
    pass_all: bool
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check(value, limit, higher_is_better):
    return bool(value >= limit) if higher_is_better else bool(value <= limit)


def _run_provider(provider, image, notes, slot):
    if provider is None:
        notes[slot] = "no provider"
        return None
    try:
        value = float(provider.score(image))
    except Exception as exc:  # noqa: BLE001 - a faulty scorer must not abort the gate
        notes[slot] = f"{type(exc).__name__}: {exc}"
        return None
    if not math.isfinite(value):
        notes[slot] = f"non-finite score {value}"
        return None
    return value


def assess(image, providers=None, thresholds=None, allow_skipped=False) -> QualityReport:
    """Score an image and apply inclusive thresholds.

    ``providers`` maps ``"brisque"`` / ``"clipiqa"`` to scorer adapters. A
    missing or failing scorer leaves its flag as ``None`` (skipped); skipped
    flags count as failures unless ``allow_skipped`` is set.
    """
    providers = providers or {}
    th = thresholds or QualityThresholds()
    notes = {}
    tv = tv_loss(image, th.tv_resolution)
    brisque = _run_provider(providers.get("brisque"), image, notes, "brisque")
    clip = _run_provider(providers.get("clipiqa"), image, notes, "clipiqa")
    pass_tv = _check(tv, th.tv_max, higher_is_better=False)
    pass_brisque = SKIPPED if brisque is None else _check(brisque, th.brisque_max, higher_is_better=False)
    pass_clip = SKIPPED if clip is None else _check(clip, th.clipiqa_min, higher_is_better=True)
    flags = [pass_brisque, pass_clip, pass_tv]
    if allow_skipped:
        pass_all = all(f for f in flags if f is not SKIPPED)
    else:
        pass_all = all(f is True for f in flags)
    return QualityReport(brisque, clip, tv, pass_brisque, pass_clip, pass_tv, pass_all, notes)


class QualityGate(BaseEstimator):
    """Accept/reject generated images on BRISQUE, CLIP-IQA and TV loss.

    The gate is stateless; ``fit`` only validates parameters so it can sit in
    pipelines and be cloned with ``get_params``.
    """

    def __init__(self, brisque_max=15.0, clipiqa_min=0.9, tv_max=15.0, tv_resolution=32,
                 brisque_provider=None, clipiqa_provider=None, allow_skipped=False):
        self.brisque_max = brisque_max
        self.clipiqa_min = clipiqa_min
        self.tv_max = tv_max
        self.tv_resolution = tv_resolution
        self.brisque_provider = brisque_provider
        self.clipiqa_provider = clipiqa_provider
        self.allow_skipped = allow_skipped

    @property
    def thresholds(self) -> QualityThresholds:
        return QualityThresholds(self.brisque_max, self.clipiqa_min, self.tv_max, self.tv_resolution)

    def fit(self, X=None, y=None):
        self.thresholds_ = self.thresholds
        return self

    def assess(self, image) -> QualityReport:
        providers = {"brisque": self.brisque_provider, "clipiqa": self.clipiqa_provider}
        return assess(image, providers, self.thresholds, self.allow_skipped)

    def predict(self, X):
        return np.array([self.assess(img).pass_all for img in X], dtype=bool)
