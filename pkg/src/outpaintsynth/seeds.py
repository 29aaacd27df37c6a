"""Seed extraction: detector consensus, largest-box selection and buffered crops."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .detectors import VEHICLE_LABELS, SourceImage
from .geometry import BufferSpec, PixelBox, buffered_crop, check_class_id, iou, remove_buffer
from .manifest import load_image, save_image

logger = logging.getLogger(__name__)

REASON_UNDETECTED = "undetected"
REASON_BELOW_MIN_DIM = "below min_dim"


@dataclass
class SeedRecord:
    seed_id: str
    class_id: int
    crop_image: np.ndarray = field(repr=False)
    buffer: BufferSpec
    crop_box: PixelBox
    source_path: str | None = None
    detector: str | None = None

    def __post_init__(self):
        self.class_id = check_class_id(self.class_id)

    @property
    def crop_width(self) -> float:
        return self.crop_box.width

    @property
    def crop_height(self) -> float:
        return self.crop_box.height

    @property
    def inner_box(self) -> PixelBox:
        """Object box relative to the crop's top-left corner."""
        return remove_buffer(self.crop_width, self.crop_height, self.buffer)

    def to_record(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "source_path": self.source_path,
            "class_id": self.class_id,
            "crop_box": list(self.crop_box.as_tuple()),
            "buffer": self.buffer.to_dict(),
            "detector": self.detector,
            "status": "accepted",
            "reason": None,
        }

    @classmethod
    def from_record(cls, record, image_dir) -> "SeedRecord":
        image = load_image(Path(image_dir) / f"{record['seed_id']}.png")
        return cls(
            seed_id=record["seed_id"],
            class_id=record["class_id"],
            crop_image=image,
            buffer=BufferSpec.from_dict(record["buffer"]),
            crop_box=PixelBox.coerce(record["crop_box"]),
            source_path=record.get("source_path"),
            detector=record.get("detector"),
        )

    def save(self, image_dir):
        save_image(Path(image_dir) / f"{self.seed_id}.png", self.crop_image)


@dataclass
class SeedRejection:
    seed_id: str
    class_id: int
    reason: str
    source_path: str | None = None
    detail: str = ""

    def to_record(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "source_path": self.source_path,
            "class_id": self.class_id,
            "crop_box": None,
            "buffer": None,
            "detector": None,
            "status": "rejected",
            "reason": self.reason,
        }


def largest_box(detections, vehicle_labels=VEHICLE_LABELS):
    """Largest-area vehicle box; ties go to the smaller ``y_min``, then ``x_min``."""
    best = None
    best_key = None
    for det in detections:
        if vehicle_labels is not None and det.label not in vehicle_labels:
            continue
        box = PixelBox.coerce(det.box)
        key = (-box.area, box.y_min, box.x_min)
        if best_key is None or key < best_key:
            best, best_key = box, key
    return best


def consensus_vote(per_model_boxes, vote_iou_threshold=0.95):
    """Count, for each model, how many other models' boxes it overlaps.

    ``per_model_boxes`` maps model name to its largest box, or ``None`` when the
    model found nothing. Every unordered pair with IoU at or above the
    threshold gives one vote to each side.
    """
    tallies = {name: 0 for name in per_model_boxes}
    present = [(n, b) for n, b in per_model_boxes.items() if b is not None]
    for (na, ba), (nb, bb) in itertools.combinations(present, 2):
        if iou(ba, bb) >= vote_iou_threshold:
            tallies[na] += 1
            tallies[nb] += 1
    return tallies


def _ensemble_order(detectors):
    def key(i):
        rank = getattr(detectors[i], "rank", None)
        return (i if rank is None else rank, i)

    return sorted(range(len(detectors)), key=key)


def _as_source(image):
    if isinstance(image, SourceImage):
        return image
    if isinstance(image, (str, Path)):
        return SourceImage(path=str(image))
    return SourceImage(_pixels=np.asarray(image))


def rank_detectors(calibration_images, detectors, vote_iou_threshold=0.95, vehicle_labels=VEHICLE_LABELS):
    """Order ``detectors`` by total consensus votes over a calibration set.

    Returns ``(ranked_detectors, totals)``. Ties keep the predefined ensemble
    order. A detector that raises on an image casts no vote for that image.
    """
    calibration_images = list(calibration_images)
    if not calibration_images:
        raise ValueError("calibration set must be non-empty")
    if len({d.name for d in detectors}) != len(detectors):
        raise ValueError("detector names must be unique")
    order = _ensemble_order(detectors)
    totals = {d.name: 0 for d in detectors}
    for image in calibration_images:
        source = _as_source(image)
        boxes = {}
        for det in detectors:
            try:
                boxes[det.name] = largest_box(det.detect(source), vehicle_labels)
            except Exception as exc:  # noqa: BLE001 - adapter faults are data, not crashes
                logger.warning("detector %s failed on %s: %s", det.name, source.path, exc)
                boxes[det.name] = None
        for name, votes in consensus_vote(boxes, vote_iou_threshold).items():
            totals[name] += votes
    position = {detectors[i].name: k for k, i in enumerate(order)}
    ranked = sorted(detectors, key=lambda d: (-totals[d.name], position[d.name]))
    return ranked, totals


def _crop_raster(pixels, crop_box):
    w = max(1, math.ceil(crop_box.width - 1e-9))
    h = max(1, math.ceil(crop_box.height - 1e-9))
    im = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8))
    return np.asarray(im.resize((w, h), Image.BILINEAR, box=crop_box.as_tuple()), dtype=np.uint8)


def extract_seed(
    image,
    class_id,
    detectors,
    min_dim=32,
    buffer_factor=1.15,
    seed_id=None,
    vehicle_labels=VEHICLE_LABELS,
):
    """Detect, buffer and crop the dominant vehicle of one curated photograph.

    ``detectors`` are tried in the given order until one reports a vehicle.
    Returns a :class:`SeedRecord` or a :class:`SeedRejection`; an unreadable
    image path raises ``OSError``.
    """
    class_id = check_class_id(class_id)
    source = _as_source(image)
    if seed_id is None:
        seed_id = Path(source.path).stem if source.path else "seed"
    pixels = source.pixels
    height, width = pixels.shape[:2]

    box = used = None
    for det in detectors:
        try:
            box = largest_box(det.detect(source), vehicle_labels)
        except Exception as exc:  # noqa: BLE001
            logger.warning("detector %s failed on %s: %s", det.name, source.path, exc)
            continue
        if box is not None:
            used = det.name
            break
    if box is None:
        return SeedRejection(seed_id, class_id, REASON_UNDETECTED, source.path)
    if box.width < min_dim or box.height < min_dim:
        return SeedRejection(
            seed_id, class_id, REASON_BELOW_MIN_DIM, source.path,
            detail=f"{box.width:g}x{box.height:g} < {min_dim}",
        )
    box = PixelBox(box.x_min, box.y_min, min(box.x_max, width), min(box.y_max, height))
    crop_box, spec = buffered_crop(box, width, height, buffer_factor)
    return SeedRecord(
        seed_id=seed_id,
        class_id=class_id,
        crop_image=_crop_raster(pixels, crop_box),
        buffer=spec,
        crop_box=crop_box,
        source_path=source.path,
        detector=used,
    )


class ConsensusDetectorSelector(BaseEstimator):
    """Pick a primary detector and fallbacks by pairwise-IoU consensus.

    Parameters
    ----------
    detectors : list of detector adapters
        The ensemble, in its predefined priority order (or carrying ``rank``).
    vote_iou_threshold : float, default=0.95
        Minimum IoU for two models' largest boxes to count as agreeing.
    min_dim : int, default=32
        Smallest accepted inner object width/height in pixels.
    buffer_factor : float, default=1.15
        Total expansion factor of the crop around the detected box.
    vehicle_labels : collection of str, optional
        Coarse detector labels accepted as vehicles.

    Attributes
    ----------
    ranking_ : list of str
        Detector names, primary first.
    votes_ : dict
        Total votes per detector over the calibration images.
    """

    def __init__(self, detectors=None, vote_iou_threshold=0.95, min_dim=32, buffer_factor=1.15, vehicle_labels=None):
        self.detectors = detectors
        self.vote_iou_threshold = vote_iou_threshold
        self.min_dim = min_dim
        self.buffer_factor = buffer_factor
        self.vehicle_labels = vehicle_labels

    def _labels(self):
        return VEHICLE_LABELS if self.vehicle_labels is None else frozenset(self.vehicle_labels)

    def fit(self, X, y=None):
        if not self.detectors:
            raise ValueError("at least one detector is required")
        if not 0 < self.vote_iou_threshold <= 1:
            raise ValueError(f"vote_iou_threshold must be in (0, 1], got {self.vote_iou_threshold}")
        ranked, totals = rank_detectors(X, self.detectors, self.vote_iou_threshold, self._labels())
        self.ranked_detectors_ = ranked
        self.ranking_ = [d.name for d in ranked]
        self.votes_ = totals
        self.primary_ = ranked[0].name
        return self

    def predict(self, X):
        """Largest vehicle box per image using the ranked fallback chain (``None`` if undetected)."""
        check_is_fitted(self, "ranked_detectors_")
        out = []
        for image in X:
            source = _as_source(image)
            box = None
            for det in self.ranked_detectors_:
                try:
                    box = largest_box(det.detect(source), self._labels())
                except Exception as exc:  # noqa: BLE001
                    logger.warning("detector %s failed on %s: %s", det.name, source.path, exc)
                if box is not None:
                    break
            out.append(box)
        return out

    def extract(self, image, class_id, seed_id=None):
        check_is_fitted(self, "ranked_detectors_")
        return extract_seed(
            image, class_id, self.ranked_detectors_, self.min_dim, self.buffer_factor, seed_id, self._labels()
        )
