"""Box arithmetic, buffer bookkeeping and the class registry."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence


class InvalidGeometryError(ValueError):
    """Raised for degenerate, non-finite or otherwise impossible boxes."""


class VehicleClass(NamedTuple):
    id: int
    name: str
    description: str


CLASS_REGISTRY: tuple[VehicleClass, ...] = (
    VehicleClass(0, "COUPE", "Coupe, Convertible, Cabriolet, or other two-door passenger cars"),
    VehicleClass(1, "SEDAN", "Sedan, or other four-door passenger cars"),
    VehicleClass(2, "SUV", "SUV or Crossover"),
    VehicleClass(3, "MINIVAN", "Minivan or Wagon"),
    VehicleClass(4, "MINIBUS", "Minibus, Shuttles, or large passenger vans"),
    VehicleClass(5, "BUS", "City, Coach, Double-Decker, Articulated, or School Bus"),
    VehicleClass(6, "VAN", "Work, Camper, or Conversion Van"),
    VehicleClass(7, "PICKUP", "Regular, Crew Cab, or Extended Cab Pickup Truck"),
    VehicleClass(8, "TRUCK", "Single Unit, Trailer, Articulated, Dump, Tanker, or Mixer Truck"),
)
CLASS_NAMES: tuple[str, ...] = tuple(c.name for c in CLASS_REGISTRY)
NUM_CLASSES = len(CLASS_REGISTRY)


def class_id_from_name(name: str) -> int:
    try:
        return CLASS_NAMES.index(name.upper())
    except ValueError:
        raise KeyError(f"unknown vehicle class {name!r}") from None


def check_class_id(class_id) -> int:
    if isinstance(class_id, bool) or int(class_id) != class_id:
        raise ValueError(f"class_id must be an integer, got {class_id!r}")
    class_id = int(class_id)
    if not 0 <= class_id < NUM_CLASSES:
        raise ValueError(f"class_id {class_id} outside registry 0..{NUM_CLASSES - 1}")
    return class_id


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in continuous pixel coordinates (origin top-left)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidGeometryError(f"non-finite box {coords}")
        if min(coords) < 0:
            raise InvalidGeometryError(f"negative coordinate in box {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidGeometryError(f"degenerate box {coords}")

    @classmethod
    def coerce(cls, box) -> "PixelBox":
        if isinstance(box, PixelBox):
            return box
        x0, y0, x1, y1 = (float(v) for v in box)
        return cls(x0, y0, x1, y1)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "PixelBox":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def __iter__(self):
        return iter(self.as_tuple())


def iou(a, b) -> float:
    """Intersection over union of two boxes.

    Accepts ``PixelBox`` instances or any 4-sequence ``(x_min, y_min, x_max, y_max)``;
    a zero-area box raises :class:`InvalidGeometryError`.
    """
    a = PixelBox.coerce(a)
    b = PixelBox.coerce(b)
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class BufferSpec:
    """Buffer actually applied around a detected box.

    ``per_side_fractions`` are ``(left, top, right, bottom)`` margins expressed
    as fractions of the detected width (left/right) or height (top/bottom).
    Without border clamping each equals ``(buffer_factor - 1) / 2``.
    """

    buffer_factor: float = 1.15
    per_side_fractions: tuple[float, float, float, float] = (0.075, 0.075, 0.075, 0.075)

    def __post_init__(self):
        if not (math.isfinite(self.buffer_factor) and self.buffer_factor > 1):
            raise InvalidGeometryError(f"buffer_factor must be > 1, got {self.buffer_factor}")
        fr = tuple(float(f) for f in self.per_side_fractions)
        if len(fr) != 4:
            raise InvalidGeometryError("per_side_fractions needs four values")
        if not all(math.isfinite(f) and f >= 0 for f in fr):
            raise InvalidGeometryError(f"per-side fractions must be finite and >= 0, got {fr}")
        object.__setattr__(self, "per_side_fractions", fr)

    @classmethod
    def symmetric(cls, buffer_factor=1.15) -> "BufferSpec":
        side = (buffer_factor - 1) / 2
        return cls(buffer_factor, (side, side, side, side))

    @property
    def left(self) -> float:
        return self.per_side_fractions[0]

    @property
    def top(self) -> float:
        return self.per_side_fractions[1]

    @property
    def right(self) -> float:
        return self.per_side_fractions[2]

    @property
    def bottom(self) -> float:
        return self.per_side_fractions[3]

    def to_dict(self) -> dict:
        return {"buffer_factor": self.buffer_factor, "per_side_fractions": list(self.per_side_fractions)}

    @classmethod
    def from_dict(cls, d) -> "BufferSpec":
        return cls(float(d["buffer_factor"]), tuple(d["per_side_fractions"]))


def buffered_crop(detected, image_width, image_height, buffer_factor=1.15):
    """Expand ``detected`` by a total factor ``buffer_factor``, clamped to the image.

    Each side grows by ``(buffer_factor - 1) / 2`` of the detected extent. Sides
    that hit the image border keep whatever margin fits, and the returned
    :class:`BufferSpec` records the margins actually achieved.
    """
    det = PixelBox.coerce(detected)
    if det.x_max > image_width or det.y_max > image_height:
        raise InvalidGeometryError(
            f"detected box {det.as_tuple()} exceeds image {image_width}x{image_height}"
        )
    if not buffer_factor > 1:
        raise InvalidGeometryError(f"buffer_factor must be > 1, got {buffer_factor}")
    pad = (buffer_factor - 1) / 2
    w, h = det.width, det.height
    x0 = max(0.0, det.x_min - pad * w)
    y0 = max(0.0, det.y_min - pad * h)
    x1 = min(float(image_width), det.x_max + pad * w)
    y1 = min(float(image_height), det.y_max + pad * h)
    fractions = (
        (det.x_min - x0) / w,
        (det.y_min - y0) / h,
        (x1 - det.x_max) / w,
        (y1 - det.y_max) / h,
    )
    return PixelBox(x0, y0, x1, y1), BufferSpec(buffer_factor, fractions)


def remove_buffer(buffered_width, buffered_height, spec: BufferSpec) -> PixelBox:
    """Return the inner object box, relative to the buffered crop's top-left."""
    if not (buffered_width > 0 and buffered_height > 0):
        raise InvalidGeometryError("buffered crop must have positive size")
    left, top, right, bottom = spec.per_side_fractions
    inner_w = buffered_width / (1 + left + right)
    inner_h = buffered_height / (1 + top + bottom)
    x0 = left * inner_w
    y0 = top * inner_h
    if not (inner_w > 0 and inner_h > 0) or x0 + inner_w > buffered_width * (1 + 1e-12) + 1e-9:
        raise InvalidGeometryError(f"buffer spec {spec} inconsistent with crop size")
    return PixelBox(x0, y0, x0 + inner_w, y0 + inner_h)


@dataclass(frozen=True)
class NormAnnotation:
    """Class id plus box center/size normalized by the canvas dimensions."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    # slack for 6-decimal serialization
    _TOL = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "class_id", check_class_id(self.class_id))
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"non-finite annotation {vals}")
        tol = self._TOL
        if not (0 < self.w <= 1 + tol and 0 < self.h <= 1 + tol):
            raise InvalidGeometryError(f"annotation size out of range: w={self.w}, h={self.h}")
        for c, s in ((self.cx, self.w), (self.cy, self.h)):
            if c - s / 2 < -tol or c + s / 2 > 1 + tol:
                raise InvalidGeometryError(f"annotation extends outside the image: {vals}")

    @classmethod
    def from_box(cls, class_id, box, width, height) -> "NormAnnotation":
        box = PixelBox.coerce(box)
        cx, cy = box.center
        return cls(class_id, cx / width, cy / height, box.width / width, box.height / height)

    def to_box(self, width, height) -> PixelBox:
        return PixelBox(
            max(0.0, (self.cx - self.w / 2) * width),
            max(0.0, (self.cy - self.h / 2) * height),
            (self.cx + self.w / 2) * width,
            (self.cy + self.h / 2) * height,
        )


def as_boxes(boxes: Sequence) -> list[PixelBox]:
    return [PixelBox.coerce(b) for b in boxes]
