import json

import numpy as np
import pytest
from PIL import Image

from outpaintsynth.geometry import BufferSpec, PixelBox
from outpaintsynth.seeds import SeedRecord


def smooth_crop(width, height, seed=0):
    """A gently shaded RGB raster standing in for a cropped vehicle."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(40, 200, size=3)
    yy, xx = np.mgrid[0:height, 0:width]
    shade = (xx / max(width - 1, 1) - 0.5)[..., None] * 30 + (yy / max(height - 1, 1) - 0.5)[..., None] * 20
    return np.clip(np.rint(base + shade), 0, 255).astype(np.uint8)


def make_seed(crop_w=115, crop_h=115, buffer=None, class_id=1, seed_id="s0", raster_seed=0):
    buffer = buffer or BufferSpec.symmetric(1.15)
    raster = smooth_crop(int(np.ceil(crop_w)), int(np.ceil(crop_h)), raster_seed)
    return SeedRecord(seed_id, class_id, raster, buffer, PixelBox(0, 0, crop_w, crop_h))


@pytest.fixture
def seed_factory():
    return make_seed


def write_source(directory, name, size, box, models=None, seed=0):
    """Write a smooth source photo plus a detector sidecar reporting ``box``."""
    w, h = size
    img = smooth_crop(w, h, seed)
    x0, y0, x1, y1 = box
    img[int(y0):int(y1), int(x0):int(x1)] = (np.array([30, 60, 150]) + seed * 7) % 255
    path = directory / f"{name}.png"
    Image.fromarray(img).save(path)
    models = models or ["fcos", "retinanet", "ssd", "maskrcnn", "fasterrcnn"]
    sidecar = {m: [[x0, y0, x1, y1, 0.9, "car"]] for m in models}
    (directory / f"{name}.detections.json").write_text(json.dumps(sidecar))
    return path


@pytest.fixture
def source_factory():
    return write_source


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
