"""Line-delimited JSON manifests and lossless raster I/O."""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from PIL import Image


def dumps(record) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
    return out


class JsonlAppender:
    """Serialized appends from any number of worker threads."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record):
        line = dumps(record) + "\n"
        with self._lock, self.path.open("a", encoding="utf-8", newline="\n") as fh:
            fh.write(line)


def load_image(path) -> np.ndarray:
    """Read an RGB raster as ``uint8`` array of shape ``(H, W, 3)``."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_image(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)
