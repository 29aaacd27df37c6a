"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary (see conftest.py) and when this file is run as a script.
"""

import itertools
import math
import time

import numpy as np
import pytest

from outpaintsynth import _rng
from outpaintsynth.backends import MockBackend
from outpaintsynth.compose import UnplaceableSeedError, derive_annotation, sample_placement
from outpaintsynth.dataset import SPLITS, SplitConfig, distribution_table, stratified_split
from outpaintsynth.detectors import ENSEMBLE_ORDER, fixture_ensemble
from outpaintsynth.geometry import PixelBox, buffered_crop, iou, remove_buffer
from outpaintsynth.manifest import load_image, read_jsonl
from outpaintsynth.metrics import DetectionSample, compute_map, f1, fitness
from outpaintsynth.orchestrate import load_bundle, run_pipeline
from outpaintsynth.quality import QualityGate, tv_loss
from outpaintsynth.seeds import SeedRecord, consensus_vote, rank_detectors

from conftest import make_seed
from test_metrics import oracle_map, random_samples
from test_quality import reference_tv

RESULTS = {}


def record(number, ok, detail):
    RESULTS[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(RESULTS[number])
    assert ok, RESULTS[number]


# (precision, recall, F1, mAP50, mAP50-95, fitness) as published
PUBLISHED_METRICS = {
    "Real": (0.748, 0.817, 0.781, 0.842, 0.786, 0.791),
    "Augmented": (0.789, 0.815, 0.802, 0.873, 0.817, 0.823),
    "Real (mosaic)": (0.813, 0.791, 0.802, 0.874, 0.813, 0.819),
    "Augmented (mosaic)": (0.859, 0.850, 0.854, 0.902, 0.857, 0.862),
    "Real (mixup)": (0.793, 0.803, 0.798, 0.853, 0.783, 0.790),
    "Augmented (mixup)": (0.874, 0.827, 0.850, 0.910, 0.851, 0.857),
}

# class 0..8 then background, percent of images
PUBLISHED_CLASS_MIX = (15, 19, 8, 4, 4, 20, 3, 4, 13, 10)
PUBLISHED_TOTAL = 5664
PUBLISHED_SPLIT_SIZES = {"train": 2269, "val": 562, "test": 2833}


def test_criterion_1_published_metric_formulas():
    worst = 0.0
    for p, r, f, m50, m5095, fit in PUBLISHED_METRICS.values():
        worst = max(worst, abs(f1(p, r) - f), abs(fitness(m50, m5095) - fit))
    record(1, worst <= 0.002, f"F1 and fitness for 6 rows, max |error| {worst:.5f} (tol 0.002)")


def published_population():
    exact = [PUBLISHED_TOTAL * p / 100 for p in PUBLISHED_CLASS_MIX]
    counts = [math.floor(e) for e in exact]
    for i in sorted(range(len(exact)), key=lambda i: counts[i] - exact[i])[: PUBLISHED_TOTAL - sum(counts)]:
        counts[i] += 1
    assert sum(counts) == PUBLISHED_TOTAL
    return [(f"c{c}_{k:04d}", None if c == 9 else c) for c, n in enumerate(counts) for k in range(n)]


def test_criterion_2_split_reproduction():
    records = published_population()
    assignment = stratified_split(records, SplitConfig(), _rng.stream(0, "split"))
    sizes = {s: len(assignment.seeds(s)) for s in SPLITS}
    # size tolerance: 0.7% of the population (share of total, in points)
    size_dev = max(abs(sizes[s] - PUBLISHED_SPLIT_SIZES[s]) / PUBLISHED_TOTAL for s in SPLITS)
    table = distribution_table(assignment)
    row_dev = max(abs(table.percent[s][col] - target)
                  for s in SPLITS for col, target in zip(table.columns, PUBLISHED_CLASS_MIX))
    leaks = 0
    for rerun in range(1000):
        a = stratified_split(records, SplitConfig(), _rng.stream(rerun, "split"))
        seen = [a.seeds(s) for s in SPLITS]
        leaks += sum(len(x & y) for x, y in itertools.combinations(seen, 2))
        leaks += PUBLISHED_TOTAL - sum(len(x) for x in seen)
    ok = size_dev <= 0.007 and row_dev <= 1.0 and leaks == 0
    record(2, ok, f"sizes {sizes} vs {PUBLISHED_SPLIT_SIZES} (max dev {100 * size_dev:.2f}% of total, tol 0.7%); "
                  f"row dev {row_dev:.3f} pt (tol 1); overlaps over 1000 reruns: {leaks}")


def test_criterion_3_geometry_oracle():
    rng = np.random.default_rng(3)
    worst_rt, worst_ann, n_ann, clamped = 0.0, 0.0, 0, 0
    for _ in range(10_000):
        W, H = (int(v) for v in rng.integers(64, 1500, 2))
        w, h = rng.uniform(32, W), rng.uniform(32, H)
        # a third of boxes touch a border so that clamping kicks in
        x0 = rng.choice([0.0, W - w, rng.uniform(0, W - w)], p=[1 / 6, 1 / 6, 2 / 3])
        y0 = rng.choice([0.0, H - h, rng.uniform(0, H - h)], p=[1 / 6, 1 / 6, 2 / 3])
        detected = PixelBox(x0, y0, x0 + w, y0 + h)
        crop, spec = buffered_crop(detected, W, H, 1.15)
        clamped += min(spec.per_side_fractions) < 0.075 - 1e-12
        inner = remove_buffer(crop.width, crop.height, spec)
        back = (crop.x_min + inner.x_min, crop.y_min + inner.y_min, crop.x_min + inner.x_max, crop.y_min + inner.y_max)
        worst_rt = max(worst_rt, max(abs(a - b) for a, b in zip(back, detected.as_tuple())))

        seed = SeedRecord("s", 0, np.zeros((math.ceil(crop.height), math.ceil(crop.width), 3), np.uint8), spec, crop)
        try:
            placement = sample_placement(seed, 512, rng)
        except UnplaceableSeedError:
            continue
        n_ann += 1
        # independent route: map the detected box from source to canvas coordinates
        tx, ty = placement.top_left
        s = placement.scale
        expected = (tx + s * (detected.x_min - crop.x_min), ty + s * (detected.y_min - crop.y_min),
                    tx + s * (detected.x_max - crop.x_min), ty + s * (detected.y_max - crop.y_min))
        got = derive_annotation(seed, placement).to_box(512, 512).as_tuple()
        worst_ann = max(worst_ann, max(abs(a - b) for a, b in zip(got, expected)))
    ok = worst_rt <= 0.5 and worst_ann <= 0.5 and clamped > 1000 and n_ann > 5000
    record(3, ok, f"round trip max err {worst_rt:.2e} px over 10^4 boxes ({clamped} clamped); "
                  f"annotation max err {worst_ann:.2e} px over {n_ann} placements (tol 0.5)")


def raster_iou(a, b, size):
    ma = np.zeros((size, size), bool)
    mb = np.zeros((size, size), bool)
    ma[a[1]:a[3], a[0]:a[2]] = True
    mb[b[1]:b[3], b[0]:b[2]] = True
    return (ma & mb).sum() / (ma | mb).sum()


def test_criterion_4_iou_and_consensus():
    rng = np.random.default_rng(4)
    worst_iou = 0.0
    for _ in range(10_000):
        boxes = []
        for _ in range(2):
            x0, y0 = (int(v) for v in rng.integers(0, 48, 2))
            x1, y1 = x0 + int(rng.integers(1, 17)), y0 + int(rng.integers(1, 17))
            boxes.append((x0, y0, x1, y1))
        a, b = boxes
        err = abs(iou(PixelBox(*a), PixelBox(*b)) - raster_iou(a, b, 64))
        # ratio to the allowed slack of 2/area; <= 1 passes
        worst_iou = max(worst_iou, err / (2 / min(PixelBox(*a).area, PixelBox(*b).area)))

    mismatches = 0
    for _ in range(500):
        base = rng.uniform(0, 100, 2)
        boxes = {}
        for m in ENSEMBLE_ORDER:
            if rng.uniform() < 0.1:
                boxes[m] = None
                continue
            jitter = rng.choice([0.0, 0.5, 3.0]) * rng.normal(size=4)
            x0, y0 = np.maximum(base + jitter[:2], 0)
            boxes[m] = PixelBox(x0, y0, x0 + 60 + abs(jitter[2]), y0 + 40 + abs(jitter[3]))
        oracle = dict.fromkeys(ENSEMBLE_ORDER, 0)
        for a in ENSEMBLE_ORDER:
            for b in ENSEMBLE_ORDER:
                if a != b and boxes[a] is not None and boxes[b] is not None and iou(boxes[a], boxes[b]) >= 0.95:
                    oracle[a] += 1
        mismatches += consensus_vote(boxes) != oracle

    images = ["cal0", "cal1"]
    rows = [[10, 10, 110, 90, 0.9, "car"]]
    table = {img: {m: rows for m in ENSEMBLE_ORDER} for img in images}
    ranked, _ = rank_detectors(images, list(reversed(fixture_ensemble(table))))
    order = [d.name for d in ranked]
    ok = worst_iou <= 1.0 and mismatches == 0 and order == list(ENSEMBLE_ORDER) and order[0] == "fcos"
    record(4, ok, f"iou vs raster worst {worst_iou:.2e} of the 2/area bound; consensus mismatches {mismatches}/500; "
                  f"unanimous order {order}")


def test_criterion_5_tv_properties():
    constant = tv_loss(np.full((512, 512, 3), 93, np.uint8))
    yy, xx = np.mgrid[:32, :32]
    board = np.repeat((((yy + xx) % 2) * 255).astype(np.uint8)[..., None], 3, axis=2)
    checker = tv_loss(board)
    rng = np.random.default_rng(5)
    worst_ref, worst_sym = 0.0, 0.0
    for k in range(100):
        h, w = (512, 512) if k < 5 else tuple(int(v) for v in rng.integers(32, 200, 2))
        img = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
        if k % 2:
            img = np.repeat(np.repeat(img[::8, ::8], 8, 0), 8, 1)[:h, :w]
        base = tv_loss(img)
        worst_ref = max(worst_ref, abs(base - reference_tv(img)))
        for variant in (img[..., [1, 2, 0]], img[..., [2, 1, 0]], img[:, ::-1], img[::-1]):
            worst_sym = max(worst_sym, abs(tv_loss(variant) - base))
    ok = constant == 0.0 and checker == 255.0 and worst_ref <= 1e-6 and worst_sym <= 1e-9
    record(5, ok, f"constant {constant}, checkerboard {checker}, double-loop max err {worst_ref:.1e} on 100 images, "
                  f"symmetry max err {worst_sym:.1e}")


def test_criterion_6_map_oracle():
    shrunk = [DetectionSample("a", [(0, (0, 0, 100, 100))], [(0, (0, 0, 100, 60), 0.9)])]
    r = compute_map(shrunk)
    fixture_ok = abs(r.map50 - 1.0) <= 1e-9 and abs(r.map50_95 - 0.3) <= 1e-9
    worst = 0.0
    n = 60
    for k in range(n):
        samples = random_samples(np.random.default_rng(6000 + k), n_images=int(1 + k % 4))
        got = compute_map(samples)
        o50, o5095 = oracle_map(samples)
        worst = max(worst, abs(got.map50 - o50), abs(got.map50_95 - o5095))
    record(6, fixture_ok and worst <= 1e-9,
           f"shrunk fixture mAP50={r.map50:.6f} mAP50-95={r.map50_95:.6f}; max |error| vs brute force over {n} "
           f"random instances {worst:.1e} (tol 1e-9)")


class CountingBackend(MockBackend):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.calls = 0

    def outpaint(self, *a, **kw):
        self.calls += 1
        return super().outpaint(*a, **kw)

    def text_to_image(self, *a, **kw):
        self.calls += 1
        return super().text_to_image(*a, **kw)


def _pipeline(workdir, seeds):
    backend = CountingBackend("noisy-first-k", k=2, seed=0)
    p = backend.iqa_providers()
    gate = QualityGate(brisque_provider=p["brisque"], clipiqa_provider=p["clipiqa"])
    report = run_pipeline(seeds, workdir, backend, gate, global_seed=11, background_fraction=0.1, workers=4)
    return backend, report


def test_criterion_7_hermetic_end_to_end(tmp_path):
    start = time.perf_counter()
    seeds = [make_seed(90 + 11 * i, 70 + 7 * (i % 5), class_id=i % 9, seed_id=f"seed{i:02d}", raster_seed=i)
             for i in range(20)]
    backend, report = _pipeline(tmp_path / "a", seeds)
    wd = tmp_path / "a"
    images = sorted((wd / "generated" / "images").glob("*.png"))
    labels = sorted((wd / "generated" / "labels").glob("*.txt"))
    vehicle = [p for p in labels if not p.stem.startswith("bg_")]
    background = [p for p in labels if p.stem.startswith("bg_")]
    counts_ok = (len(images) == 22 and len(vehicle) == 20 and len(background) == 2
                 and all(len(p.read_text().splitlines()) == 1 for p in vehicle)
                 and all(p.read_text() == "" for p in background))

    preserved = 0
    for row in read_jsonl(wd / "compose.jsonl"):
        bundle = load_bundle(row, wd)
        out = load_image(wd / "generated" / "images" / f"{bundle.stem}.png")
        preserved += np.array_equal(out[bundle.preserve], bundle.canvas[bundle.preserve])

    logged = len(read_jsonl(wd / "attempts.jsonl")) + len(read_jsonl(wd / "background_attempts.jsonl"))
    claimed = sum(r["attempts"] for r in read_jsonl(wd / "outpaint.jsonl") + read_jsonl(wd / "backgrounds.jsonl"))
    accounting_ok = logged == claimed == backend.calls

    _pipeline(tmp_path / "b", seeds)
    files_a = {p.relative_to(wd): p.read_bytes() for p in sorted(wd.rglob("*")) if p.is_file()}
    files_b = {p.relative_to(tmp_path / "b"): p.read_bytes() for p in sorted((tmp_path / "b").rglob("*")) if p.is_file()}
    identical = files_a == files_b
    elapsed = time.perf_counter() - start
    ok = counts_ok and preserved == 20 and accounting_ok and identical and elapsed < 60
    record(7, ok, f"{len(vehicle)} vehicle + {len(background)} background images; preservation {preserved}/20; "
                  f"attempts logged {logged} = manifest {claimed} = backend calls {backend.calls}; "
                  f"rerun byte-identical: {identical}; {elapsed:.1f}s (limit 60s)")


def test_criterion_8_non_reproducibility_note():
    # Absolute detector-training results cannot be checked offline; the evaluator is
    # covered at formula level (criterion 1) and oracle level (criterion 6).
    covered = all(str(RESULTS.get(n, "")).startswith("PASS") for n in (1, 6))
    if not covered:
        test_criterion_1_published_metric_formulas()
        test_criterion_6_map_oracle()
        covered = all(RESULTS[n].startswith("PASS") for n in (1, 6))
    record(8, covered, "trained-model metric levels are out of reach offline; evaluator verified via criteria 1 and 6")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                pass
    sys.exit(0 if all(v.startswith("PASS") for v in RESULTS.values()) else 1)
