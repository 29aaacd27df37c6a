"""Plain-text label files: one ``<class_id> <cx> <cy> <w> <h>`` line per object.

Prediction files use the same layout with a trailing confidence column.
"""

from __future__ import annotations

import math
from pathlib import Path

from .geometry import InvalidGeometryError, NormAnnotation, NUM_CLASSES


class LabelParseError(ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def serialize_labels(annotations) -> str:
    lines = [
        f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f}\n" for a in annotations
    ]
    return "".join(lines)


def _parse_rows(text, n_fields):
    rows = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != n_fields:
            raise LabelParseError(line_no, f"expected {n_fields} fields, got {len(parts)}")
        try:
            class_id = int(parts[0])
        except ValueError:
            raise LabelParseError(line_no, f"class id {parts[0]!r} is not an integer") from None
        if not 0 <= class_id < NUM_CLASSES:
            raise LabelParseError(line_no, f"class id {class_id} outside registry")
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise LabelParseError(line_no, "non-numeric coordinate") from None
        for v in values:
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise LabelParseError(line_no, f"value {v} outside [0, 1]")
        rows.append((line_no, class_id, values))
    return rows


def parse_labels(text) -> list[NormAnnotation]:
    out = []
    for line_no, class_id, (cx, cy, w, h) in _parse_rows(text, 5):
        try:
            out.append(NormAnnotation(class_id, cx, cy, w, h))
        except InvalidGeometryError as exc:
            raise LabelParseError(line_no, str(exc)) from None
    return out


def serialize_predictions(predictions) -> str:
    """``predictions`` is an iterable of ``(NormAnnotation, confidence)``."""
    return "".join(
        f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f} {conf:.6f}\n"
        for a, conf in predictions
    )


def parse_predictions(text) -> list[tuple[NormAnnotation, float]]:
    out = []
    for line_no, class_id, (cx, cy, w, h, conf) in _parse_rows(text, 6):
        try:
            out.append((NormAnnotation(class_id, cx, cy, w, h), conf))
        except InvalidGeometryError as exc:
            raise LabelParseError(line_no, str(exc)) from None
    return out


def write_label_file(path, annotations):
    Path(path).write_text(serialize_labels(annotations), encoding="utf-8")


def read_label_file(path):
    return parse_labels(Path(path).read_text(encoding="utf-8"))
