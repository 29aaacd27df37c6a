"""Generate-score-retry loop, background generation and the end-to-end run."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import _rng
from .compose import CanvasBundle, CanvasComposer, PlacementSpec, UnplaceableSeedError, invert_mask
from .geometry import NormAnnotation, PixelBox
from .labels import serialize_labels
from .manifest import load_image, read_jsonl, save_image, write_jsonl
from .prompts import PromptConfig, build_background_prompt, build_positive

logger = logging.getLogger(__name__)

EXHAUSTION_POLICIES = ("skip", "keep-best")
REASON_EXHAUSTED = "exhausted"
REASON_BACKEND_DEAD = "backend-dead"


@dataclass(frozen=True)
class AttemptPolicy:
    max_attempts: int = 20
    on_exhaustion: str = "skip"

    def __post_init__(self):
        if int(self.max_attempts) < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.on_exhaustion not in EXHAUSTION_POLICIES:
            raise ValueError(f"on_exhaustion must be one of {EXHAUSTION_POLICIES}")


@dataclass
class GenerationResult:
    key: str
    accepted: bool
    image: np.ndarray | None = field(default=None, repr=False)
    report: object = None
    attempts: int = 0
    reason: str | None = None
    kept_best: bool = False
    attempt_log: list[dict] = field(default_factory=list, repr=False)


def _best_key(report):
    clip = report.clip_iqa if report.clip_iqa is not None else -np.inf
    return (clip, -report.tv)


def _attempt_loop(key, call, gate, policy, make_request, postprocess=None):
    """Shared retry loop; ``make_request(attempt)`` returns ``(prompt, noise_seed)``."""
    policy = policy or AttemptPolicy()
    log = []
    best = None
    errors = 0
    for attempt in range(1, policy.max_attempts + 1):
        prompt, noise_seed = make_request(attempt)
        entry = {
            "key": key,
            "attempt": attempt,
            "positive": prompt.positive,
            "negative": prompt.negative,
            "location": prompt.location,
            "time": prompt.time,
            "noise_seed": noise_seed,
        }
        try:
            image = np.asarray(call(prompt, noise_seed))
            if postprocess is not None:
                image = postprocess(image)
        except Exception as exc:  # noqa: BLE001 - backend faults count as failed attempts
            errors += 1
            entry.update(status="backend-error", error=f"{type(exc).__name__}: {exc}")
            log.append(entry)
            logger.warning("%s attempt %d: backend error %s", key, attempt, exc)
            continue
        report = gate.assess(image)
        entry.update(status="pass" if report.pass_all else "fail", **{f"score_{k}": v for k, v in report.to_dict().items() if k != "notes"})
        if report.notes:
            entry["notes"] = report.notes
        log.append(entry)
        if report.pass_all:
            return GenerationResult(key, True, image, report, attempt, None, False, log)
        if best is None or _best_key(report) > _best_key(best[1]):
            best = (image, report)
    if errors == policy.max_attempts:
        return GenerationResult(key, False, None, None, policy.max_attempts, REASON_BACKEND_DEAD, False, log)
    if policy.on_exhaustion == "keep-best" and best is not None:
        return GenerationResult(key, True, best[0], best[1], policy.max_attempts, None, True, log)
    return GenerationResult(key, False, None, None, policy.max_attempts, REASON_EXHAUSTED, False, log)


def generate_until_pass(bundle, backend, gate, policy=None, global_seed=0, prompt_config=None) -> GenerationResult:
    """Outpaint one canvas until the gate accepts it or attempts run out.

    Each attempt draws a fresh prompt and noise seed from the stream
    ``(global_seed, "outpaint", seed_id, image_index, attempt)``. Pixels under
    ``mask == 0`` are copied back from the canvas after every backend call.
    """
    cfg = prompt_config or PromptConfig()
    canvas = np.asarray(bundle.canvas, dtype=np.uint8)
    preserve = bundle.preserve

    def make_request(attempt):
        rng = _rng.stream(global_seed, "outpaint", bundle.seed_id, bundle.image_index, attempt)
        return build_positive(bundle.class_id, rng, cfg), int(rng.integers(2**31))

    def call(prompt, noise_seed):
        return backend.outpaint(canvas, bundle.mask, prompt.positive, prompt.negative, noise_seed)

    def reclamp(image):
        if image.shape != canvas.shape:
            raise ValueError(f"backend returned shape {image.shape}, expected {canvas.shape}")
        out = np.array(image, dtype=np.uint8)
        out[preserve] = canvas[preserve]
        return out

    return _attempt_loop(bundle.stem, call, gate, policy, make_request, reclamp)


def generate_background(backend, gate, prompt_spec=None, policy=None, global_seed=0, index=0, size=512,
                        prompt_config=None) -> GenerationResult:
    """Text-to-image loop for vehicle-free scenes.

    A fixed ``prompt_spec`` is reused on every attempt; otherwise a fresh
    description is drawn per attempt.
    """
    cfg = prompt_config or PromptConfig()
    key = background_stem(index)

    def make_request(attempt):
        rng = _rng.stream(global_seed, "background", index, attempt)
        prompt = prompt_spec if prompt_spec is not None else build_background_prompt(rng, cfg)
        return prompt, int(rng.integers(2**31))

    def call(prompt, noise_seed):
        return backend.text_to_image(prompt.positive, prompt.negative, noise_seed, size)

    def check(image):
        if image.shape[:2] != (size, size):
            raise ValueError(f"backend returned shape {image.shape}, expected {size}x{size}")
        return np.asarray(image, dtype=np.uint8)

    return _attempt_loop(key, call, gate, policy, make_request, check)


def background_stem(index):
    return f"bg_{index:05d}"


def background_quota(n_vehicle_images, fraction):
    """Backgrounds needed so they make up ``fraction`` of the final image count."""
    if not 0 <= fraction < 1:
        raise ValueError("background fraction must be in [0, 1)")
    return int(round(fraction * n_vehicle_images / (1.0 - fraction)))


# ---------------------------------------------------------------- stages

def bundle_record(bundle, inverted=False) -> dict:
    return {
        "seed_id": bundle.seed_id,
        "image_index": bundle.image_index,
        "stem": bundle.stem,
        "class_id": bundle.class_id,
        "placement": bundle.placement.to_dict(),
        "annotation": [bundle.annotation.cx, bundle.annotation.cy, bundle.annotation.w, bundle.annotation.h],
        "inner_box": list(bundle.inner_box.as_tuple()),
        "mask_inverted": bool(inverted),
    }


def load_bundle(record, workdir) -> CanvasBundle:
    workdir = Path(workdir)
    canvas = load_image(workdir / "canvases" / f"{record['stem']}.png")
    with Image.open(workdir / "masks" / f"{record['stem']}.png") as im:
        mask = np.asarray(im.convert("L"), dtype=np.uint8).copy()
    if record.get("mask_inverted"):
        mask = invert_mask(mask)
    return CanvasBundle(
        seed_id=record["seed_id"],
        image_index=record["image_index"],
        canvas=canvas,
        mask=mask,
        annotation=NormAnnotation(record["class_id"], *record["annotation"]),
        placement=PlacementSpec.from_dict(record["placement"]),
        inner_box=PixelBox.coerce(record["inner_box"]),
    )


def compose_stage(seeds, workdir, composer=None, invert=False):
    """Compose canvases for every seed and write canvases/, masks/ and compose.jsonl."""
    workdir = Path(workdir)
    composer = composer or CanvasComposer()
    composer.fit(seeds)
    bundles, rows, rejects = [], [], []
    for seed in seeds:
        for k in range(composer.images_per_seed):
            try:
                bundle = composer.compose_seed(seed, k)
            except UnplaceableSeedError as exc:
                rejects.append({"seed_id": seed.seed_id, "image_index": k, "reason": exc.reason, "detail": str(exc)})
                continue
            save_image(workdir / "canvases" / f"{bundle.stem}.png", bundle.canvas)
            save_image(workdir / "masks" / f"{bundle.stem}.png", invert_mask(bundle.mask) if invert else bundle.mask)
            bundles.append(bundle)
            rows.append(bundle_record(bundle, invert))
    write_jsonl(workdir / "compose.jsonl", rows)
    write_jsonl(workdir / "compose_rejects.jsonl", rejects)
    return bundles, rejects


def _existing(path, key):
    path = Path(path)
    if not path.exists():
        return {}
    return {r[key]: r for r in read_jsonl(path)}


def _persist(result, workdir, annotations):
    img_path = workdir / "generated" / "images" / f"{result.key}.png"
    save_image(img_path, result.image)
    (workdir / "generated" / "labels").mkdir(parents=True, exist_ok=True)
    (workdir / "generated" / "labels" / f"{result.key}.txt").write_text(serialize_labels(annotations), encoding="utf-8")


def _result_row(result, extra):
    row = dict(extra)
    row.update(
        stem=result.key,
        status="accepted" if result.accepted else "rejected",
        reason=result.reason,
        attempts=result.attempts,
        kept_best=result.kept_best,
        scores=None if result.report is None else {
            "brisque": result.report.brisque, "clip_iqa": result.report.clip_iqa, "tv": result.report.tv,
        },
    )
    return row


def _merge_write(path, old_rows, new_rows, sort_key):
    rows = list(old_rows) + list(new_rows)
    rows.sort(key=sort_key)
    write_jsonl(path, rows)
    return rows


def outpaint_stage(bundles, workdir, backend, gate, policy=None, global_seed=0, prompt_config=None,
                   workers=1, resume=False):
    """Outpaint all bundles; persist accepted images with their single-line labels."""
    workdir = Path(workdir)
    done = _existing(workdir / "outpaint.jsonl", "stem") if resume else {}
    old_attempts = read_jsonl(workdir / "attempts.jsonl") if resume and (workdir / "attempts.jsonl").exists() else []
    todo = [b for b in bundles if b.stem not in done]

    def work(bundle):
        return generate_until_pass(bundle, backend, gate, policy, global_seed, prompt_config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(b) for b in todo]

    rows, attempts = [], []
    for bundle, result in zip(todo, results):
        if result.accepted:
            _persist(result, workdir, [bundle.annotation])
        rows.append(_result_row(result, {"seed_id": bundle.seed_id, "image_index": bundle.image_index,
                                         "class_id": bundle.class_id}))
        attempts.extend(result.attempt_log)
    rows = _merge_write(workdir / "outpaint.jsonl", done.values(), rows, lambda r: r["stem"])
    _merge_write(workdir / "attempts.jsonl", old_attempts, attempts, lambda r: (r["key"], r["attempt"]))
    return rows


def background_stage(n_backgrounds, workdir, backend, gate, policy=None, global_seed=0, prompt_config=None,
                     size=512, workers=1, resume=False):
    workdir = Path(workdir)
    done = _existing(workdir / "backgrounds.jsonl", "stem") if resume else {}
    old_attempts = (read_jsonl(workdir / "background_attempts.jsonl")
                    if resume and (workdir / "background_attempts.jsonl").exists() else [])
    todo = [i for i in range(n_backgrounds) if background_stem(i) not in done]

    def work(i):
        return generate_background(backend, gate, None, policy, global_seed, i, size, prompt_config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(i) for i in todo]
    rows, attempts = [], []
    for i, result in zip(todo, results):
        if result.accepted:
            _persist(result, workdir, [])
        rows.append(_result_row(result, {"seed_id": result.key, "image_index": i, "class_id": None}))
        attempts.extend(result.attempt_log)
    rows = _merge_write(workdir / "backgrounds.jsonl", done.values(), rows, lambda r: r["stem"])
    _merge_write(workdir / "background_attempts.jsonl", old_attempts, attempts, lambda r: (r["key"], r["attempt"]))
    return rows


def _score_summary(rows):
    out = {}
    for name in ("brisque", "clip_iqa", "tv"):
        vals = [r["scores"][name] for r in rows if r.get("scores") and r["scores"].get(name) is not None]
        if vals:
            out[name] = {"n": len(vals), "mean": float(np.mean(vals)), "min": float(np.min(vals)),
                         "max": float(np.max(vals))}
    return out


def summarize(outpaint_rows, background_rows, compose_rejects=(), seed_rejects=()) -> dict:
    def block(rows):
        accepted = [r for r in rows if r["status"] == "accepted"]
        return {
            "requested": len(rows),
            "accepted": len(accepted),
            "acceptance_rate": (len(accepted) / len(rows)) if rows else None,
            "attempts": sum(r["attempts"] for r in rows),
            "scores": _score_summary(accepted),
            "rejects": [{"stem": r["stem"], "reason": r["reason"]} for r in rows if r["status"] != "accepted"],
        }

    return {
        "vehicles": block(list(outpaint_rows)),
        "backgrounds": block(list(background_rows)),
        "compose_rejects": list(compose_rejects),
        "seed_rejects": list(seed_rejects),
    }


def run_pipeline(seeds, workdir, backend, gate, composer=None, policy=None, global_seed=0, prompt_config=None,
                 background_fraction=0.1, workers=1, resume=False, invert=False) -> dict:
    """Compose, outpaint, gate and persist every seed, then fill the background quota.

    Writes manifests and ``run_report.json`` under ``workdir`` and returns the report.
    """
    workdir = Path(workdir)
    composer = composer if composer is not None else CanvasComposer(random_state=global_seed)
    bundles, compose_rejects = compose_stage(seeds, workdir, composer, invert)
    rows = outpaint_stage(bundles, workdir, backend, gate, policy, global_seed, prompt_config, workers, resume)
    n_accepted = sum(r["status"] == "accepted" for r in rows)
    n_bg = background_quota(n_accepted, background_fraction)
    bg_rows = background_stage(n_bg, workdir, backend, gate, policy, global_seed, prompt_config,
                               composer.canvas_size, workers, resume)
    report = summarize(rows, bg_rows, compose_rejects)
    report["background_quota"] = n_bg
    (workdir / "run_report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return report
