"""Detector adapters.

An adapter exposes ``name``, ``rank`` and ``detect(source) -> list[Detection]``
where ``source`` is a :class:`SourceImage`. Adapters only localize; vehicle
classes come from the curated manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np

from .geometry import PixelBox
from .manifest import load_image

ENSEMBLE_ORDER = ("fcos", "retinanet", "ssd", "maskrcnn", "fasterrcnn")
VEHICLE_LABELS = frozenset({"car", "bus", "truck"})


class Detection(NamedTuple):
    box: PixelBox
    confidence: float
    label: str


@dataclass
class SourceImage:
    """A source photograph, loaded on first access to ``pixels``."""

    path: str | None = None
    _pixels: np.ndarray | None = field(default=None, repr=False)

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            if self.path is None:
                raise ValueError("SourceImage has neither a path nor pixels")
            self._pixels = load_image(self.path)
        return self._pixels

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.pixels.shape[:2]
        return w, h


class DetectorAdapter(Protocol):
    name: str
    rank: int

    def detect(self, source: SourceImage) -> list[Detection]: ...


def _parse_detection(row) -> Detection:
    x0, y0, x1, y1, conf, label = row
    return Detection(PixelBox(float(x0), float(y0), float(x1), float(y1)), float(conf), str(label))


class FixtureDetector:
    """Replays detections from sidecar JSON files.

    For an image ``foo.jpg`` the sidecar is ``foo.detections.json``::

        {"fcos": [[x0, y0, x1, y1, conf, "car"], ...], "ssd": "error", ...}

    A model missing from the sidecar detects nothing; the string ``"error"``
    makes :meth:`detect` raise, to exercise failure paths. ``table`` may be
    given instead of sidecars, keyed by image path.
    """

    def __init__(self, name, rank=None, table=None):
        self.name = name
        self.rank = ENSEMBLE_ORDER.index(name) if rank is None and name in ENSEMBLE_ORDER else rank
        self.table = table

    @staticmethod
    def sidecar_path(image_path) -> Path:
        p = Path(image_path)
        return p.with_name(p.stem + ".detections.json")

    def _entries(self, source):
        if self.table is not None:
            return self.table.get(str(source.path), {}).get(self.name, [])
        sidecar = self.sidecar_path(source.path)
        if not sidecar.exists():
            return []
        return json.loads(sidecar.read_text(encoding="utf-8")).get(self.name, [])

    def detect(self, source):
        entries = self._entries(source)
        if entries == "error":
            raise RuntimeError(f"{self.name}: fixture-declared failure for {source.path}")
        return [_parse_detection(r) for r in entries]

    def __repr__(self):
        return f"FixtureDetector(name={self.name!r}, rank={self.rank})"


def fixture_ensemble(table=None):
    return [FixtureDetector(name, rank, table) for rank, name in enumerate(ENSEMBLE_ORDER)]


# COCO category ids reported by torchvision detection models
_COCO_VEHICLES = {3: "car", 6: "bus", 8: "truck"}

_TORCHVISION_BUILDERS = {
    "fcos": "fcos_resnet50_fpn",
    "retinanet": "retinanet_resnet50_fpn",
    "ssd": "ssd300_vgg16",
    "maskrcnn": "maskrcnn_resnet50_fpn",
    "fasterrcnn": "fasterrcnn_resnet50_fpn",
}


class TorchvisionDetector:
    """Wraps a torchvision COCO detector; only car/bus/truck boxes are reported.

    ``weights="DEFAULT"`` downloads pretrained weights on first use.
    """

    def __init__(self, name, rank=None, weights="DEFAULT", score_threshold=0.5, device="cpu", **builder_kwargs):
        if name not in _TORCHVISION_BUILDERS:
            raise ValueError(f"unknown torchvision detector {name!r}; choose from {sorted(_TORCHVISION_BUILDERS)}")
        self.name = name
        self.rank = ENSEMBLE_ORDER.index(name) if rank is None else rank
        self.weights = weights
        self.score_threshold = score_threshold
        self.device = device
        self.builder_kwargs = builder_kwargs
        self._model = None

    def _load(self):
        if self._model is None:
            from torchvision.models import detection

            builder = getattr(detection, _TORCHVISION_BUILDERS[self.name])
            model = builder(weights=self.weights, **self.builder_kwargs)
            self._model = model.eval().to(self.device)
        return self._model

    def detect(self, source):
        import torch

        model = self._load()
        pixels = np.ascontiguousarray(source.pixels)
        tensor = torch.from_numpy(pixels).permute(2, 0, 1).float().div(255.0).to(self.device)
        with torch.no_grad():
            out = model([tensor])[0]
        h, w = pixels.shape[:2]
        dets = []
        for box, score, label in zip(out["boxes"].tolist(), out["scores"].tolist(), out["labels"].tolist()):
            if score < self.score_threshold or label not in _COCO_VEHICLES:
                continue
            x0, y0, x1, y1 = max(0.0, box[0]), max(0.0, box[1]), min(float(w), box[2]), min(float(h), box[3])
            if x1 > x0 and y1 > y0:
                dets.append(Detection(PixelBox(x0, y0, x1, y1), float(score), _COCO_VEHICLES[label]))
        return dets
