"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import _rng
from .backends import BackendError, HttpBackend, MockBackend
from .compose import CanvasComposer
from .config import ConfigError, PipelineConfig
from .dataset import DatasetItem, distribution_table, stratified_split, write_dataset
from .detectors import FixtureDetector, TorchvisionDetector
from .geometry import CLASS_NAMES, class_id_from_name
from .labels import LabelParseError
from .manifest import read_jsonl, write_jsonl
from .metrics import evaluate, load_samples, write_report
from .orchestrate import (
    REASON_BACKEND_DEAD, background_quota, background_stage, compose_stage, load_bundle,
    outpaint_stage, summarize,
)
from .prompts import PromptConfig, PromptConfigError
from .quality import PyiqaProvider, QualityGate
from .report import build_gallery
from .seeds import ConsensusDetectorSelector, SeedRecord

logger = logging.getLogger("outpaintsynth")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_UPSTREAM = 4
EXIT_IO = 5
EXIT_BACKEND = 6
EXIT_VALIDATION = 7


class MissingUpstreamError(FileNotFoundError):
    pass


class ValidationFailure(RuntimeError):
    pass


def _load_config(args) -> PipelineConfig:
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.max_attempts is not None:
        overrides["attempts"] = {"max_attempts": args.max_attempts, "on_exhaustion": cfg.attempts.on_exhaustion}
    if getattr(args, "workdir", None):
        overrides["workdir"] = args.workdir
    if getattr(args, "invert_mask", False):
        overrides["invert_mask"] = True
    if overrides:
        cfg = PipelineConfig.from_dict({**dataclasses.asdict(cfg), **overrides})
    return cfg


def _upstream(path):
    path = Path(path)
    if not path.exists():
        raise MissingUpstreamError(f"missing upstream manifest: {path}")
    return read_jsonl(path)


def _prompt_config(cfg):
    return PromptConfig.from_file(cfg.prompt_config) if cfg.prompt_config else PromptConfig()


def _backend(cfg):
    if cfg.backend == "mock":
        return MockBackend(cfg.mock_mode, cfg.mock_k, cfg.seed)
    return HttpBackend(cfg.backend_endpoint, invert_mask=cfg.invert_mask)


def _gate(cfg, backend):
    if cfg.iqa_provider == "mock":
        if not isinstance(backend, MockBackend):
            raise ConfigError("iqa_provider 'mock' only scores images from the mock backend")
        providers = backend.iqa_providers()
    elif cfg.iqa_provider == "pyiqa":
        providers = {"brisque": PyiqaProvider("brisque"), "clipiqa": PyiqaProvider("clipiqa")}
    else:
        providers = {}
    th = cfg.thresholds
    return QualityGate(th.brisque_max, th.clipiqa_min, th.tv_max, th.tv_resolution,
                       providers.get("brisque"), providers.get("clipiqa"), cfg.allow_skipped_scores).fit()


def _detectors(cfg):
    if cfg.detector_backend == "fixture":
        return [FixtureDetector(name, rank) for rank, name in enumerate(cfg.detectors)]
    return [TorchvisionDetector(name, rank) for rank, name in enumerate(cfg.detectors)]


def _parse_class(value):
    return class_id_from_name(value) if isinstance(value, str) and not value.isdigit() else int(value)


def cmd_extract_seeds(cfg, args):
    if not cfg.sources:
        raise ConfigError("config.sources (curated source manifest) is required")
    sources = _upstream(cfg.sources)
    base = Path(cfg.sources).parent
    entries = []
    for row in sources:
        path = Path(row["source_path"])
        path = path if path.is_absolute() else base / path
        entries.append((str(path), _parse_class(row["class_id"]), row.get("seed_id") or path.stem))
    calibration = [p for p, _, _ in entries][: cfg.calibration_limit]
    selector = ConsensusDetectorSelector(_detectors(cfg), cfg.vote_iou_threshold, cfg.min_dim, cfg.buffer_factor)
    selector.fit(calibration)
    workdir = Path(cfg.workdir)
    records = []
    for path, class_id, seed_id in entries:
        result = selector.extract(path, class_id, seed_id)
        if isinstance(result, SeedRecord):
            result.save(workdir / "seeds")
        records.append(result.to_record())
    write_jsonl(workdir / "seeds.jsonl", records)
    (workdir / "detector_ranking.json").write_text(
        json.dumps({"ranking": selector.ranking_, "votes": selector.votes_}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    n_ok = sum(r["status"] == "accepted" for r in records)
    print(f"seeds: {n_ok} accepted, {len(records) - n_ok} rejected; primary detector {selector.primary_}")


def _accepted_seeds(cfg):
    workdir = Path(cfg.workdir)
    rows = _upstream(workdir / "seeds.jsonl")
    return [SeedRecord.from_record(r, workdir / "seeds") for r in rows if r["status"] == "accepted"]


def _composer(cfg):
    return CanvasComposer(cfg.canvas_size, cfg.fill_value, cfg.blur_sigma_fraction, cfg.min_dim,
                          cfg.images_per_seed, cfg.seed)


def cmd_compose(cfg, args):
    seeds = _accepted_seeds(cfg)
    bundles, rejects = compose_stage(seeds, cfg.workdir, _composer(cfg), cfg.invert_mask)
    print(f"composed {len(bundles)} canvases, {len(rejects)} unplaceable")


def _check_backend_alive(rows):
    if rows and all(r["status"] != "accepted" and r["reason"] == REASON_BACKEND_DEAD for r in rows):
        raise BackendError("every item failed with backend errors")


def cmd_outpaint(cfg, args):
    workdir = Path(cfg.workdir)
    records = _upstream(workdir / "compose.jsonl")
    bundles = [load_bundle(r, workdir) for r in records]
    backend = _backend(cfg)
    rows = outpaint_stage(bundles, workdir, backend, _gate(cfg, backend), cfg.attempts, cfg.seed,
                          _prompt_config(cfg), cfg.workers, args.resume)
    _check_backend_alive(rows)
    n_ok = sum(r["status"] == "accepted" for r in rows)
    print(f"outpainted {n_ok}/{len(rows)} canvases")


def cmd_gen_backgrounds(cfg, args):
    workdir = Path(cfg.workdir)
    rows = _upstream(workdir / "outpaint.jsonl")
    n_vehicles = sum(r["status"] == "accepted" for r in rows)
    count = args.count if args.count is not None else background_quota(n_vehicles, cfg.background_fraction)
    backend = _backend(cfg)
    bg_rows = background_stage(count, workdir, backend, _gate(cfg, backend), cfg.attempts, cfg.seed,
                               _prompt_config(cfg), cfg.canvas_size, cfg.workers, args.resume)
    _check_backend_alive(bg_rows)
    compose_rejects = read_jsonl(workdir / "compose_rejects.jsonl") if (workdir / "compose_rejects.jsonl").exists() else []
    seed_rejects = [r for r in read_jsonl(workdir / "seeds.jsonl") if r["status"] != "accepted"] \
        if (workdir / "seeds.jsonl").exists() else []
    report = summarize(rows, bg_rows, compose_rejects, seed_rejects)
    report["background_quota"] = count
    (workdir / "run_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"backgrounds: {sum(r['status'] == 'accepted' for r in bg_rows)}/{count} accepted")


def cmd_assemble(cfg, args):
    workdir = Path(cfg.workdir)
    rows = [r for r in _upstream(workdir / "outpaint.jsonl") if r["status"] == "accepted"]
    bg_path = workdir / "backgrounds.jsonl"
    bg_rows = [r for r in read_jsonl(bg_path) if r["status"] == "accepted"] if bg_path.exists() else []
    gen = workdir / "generated"
    items, units = [], []
    for r in rows:
        items.append(DatasetItem(r["stem"], gen / "images" / f"{r['stem']}.png", gen / "labels" / f"{r['stem']}.txt",
                                 r["seed_id"]))
        units.append((r["seed_id"], r["class_id"]))
    for r in bg_rows:
        items.append(DatasetItem(r["stem"], gen / "images" / f"{r['stem']}.png", gen / "labels" / f"{r['stem']}.txt",
                                 r["stem"]))
        units.append((r["stem"], None))
    if not units:
        raise ValidationFailure("nothing to assemble: no accepted images")
    assignment = stratified_split(units, cfg.split, _rng.stream(cfg.seed, "split"))
    assignment.check_leak_free()
    root = Path(args.dataset_root or cfg.dataset_root)
    write_dataset(items, assignment, root, dataclasses.asdict(cfg.trainer))
    table = distribution_table(assignment, images=[it.seed_id for it in items])
    (workdir / "distribution.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    (workdir / "distribution.txt").write_text(table.format(), encoding="utf-8")
    write_jsonl(workdir / "splits.jsonl", [{"seed_id": s, "split": sp} for s, sp in sorted(assignment.split_of.items())])
    print(table.format(), end="")


def cmd_evaluate(cfg, args):
    for p in (args.labels, args.preds):
        if not Path(p).is_dir():
            raise MissingUpstreamError(f"not a directory: {p}")
    samples = load_samples(args.labels, args.preds, args.image_size)
    report = evaluate(samples, len(CLASS_NAMES), confidence_threshold=args.conf, iou_threshold=args.iou)
    write_report(report, args.out, CLASS_NAMES)
    d = report.to_dict()
    print(" ".join(f"{k}={d[k]:.4f}" for k in ("precision", "recall", "f1", "mAP50", "mAP50-95", "fitness")))


def cmd_report(cfg, args):
    workdir = Path(cfg.workdir)
    if not (workdir / "outpaint.jsonl").exists():
        raise MissingUpstreamError(f"missing upstream manifest: {workdir / 'outpaint.jsonl'}")
    page = build_gallery(workdir, args.out or workdir / "report", limit=args.limit)
    print(f"wrote {page}")


def cmd_run(cfg, args):
    cmd_extract_seeds(cfg, args)
    cmd_compose(cfg, args)
    cmd_outpaint(cfg, args)
    cmd_gen_backgrounds(cfg, args)
    cmd_assemble(cfg, args)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (YAML)")
    common.add_argument("--backend", choices=["mock", "http"], help="generative backend")
    common.add_argument("--seed", type=int, help="global RNG seed")
    common.add_argument("--workers", type=int, help="parallel outpainting workers")
    common.add_argument("--max-attempts", type=int, help="generation attempts per item")
    common.add_argument("--resume", action="store_true", help="skip items already in the stage manifest")
    common.add_argument("--workdir", help="override config.workdir")
    common.add_argument("--invert-mask", action="store_true", help="write masks with 255 on the region to keep")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="outpaintsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("extract-seeds", parents=[common], help="detect and crop seed vehicles").set_defaults(func=cmd_extract_seeds)
    sub.add_parser("compose", parents=[common], help="place seeds on blank canvases").set_defaults(func=cmd_compose)
    sub.add_parser("outpaint", parents=[common], help="outpaint canvases with quality gating").set_defaults(func=cmd_outpaint)
    p = sub.add_parser("gen-backgrounds", parents=[common], help="generate vehicle-free backgrounds")
    p.add_argument("--count", type=int, help="number of backgrounds (default: from background_fraction)")
    p.set_defaults(func=cmd_gen_backgrounds)
    p = sub.add_parser("assemble", parents=[common], help="split by seed and write the dataset")
    p.add_argument("--dataset-root", help="override config.dataset_root")
    p.set_defaults(func=cmd_assemble)
    p = sub.add_parser("evaluate", parents=[common], help="score prediction files against labels")
    p.add_argument("--labels", required=True, help="directory of ground-truth label files")
    p.add_argument("--preds", required=True, help="directory of prediction files (labels + confidence)")
    p.add_argument("--out", default="metrics", help="output directory")
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--conf", type=float, default=0.25, help="confusion-matrix confidence threshold")
    p.add_argument("--iou", type=float, default=0.5, help="confusion-matrix IoU threshold")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("report", parents=[common], help="write a static HTML gallery")
    p.add_argument("--out", help="output directory (default: <workdir>/report)")
    p.add_argument("--limit", type=int, help="maximum number of thumbnails")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("run", parents=[common], help="extract-seeds through assemble in one go")
    p.add_argument("--dataset-root", help="override config.dataset_root")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(cfg, args)
    except (ConfigError, PromptConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingUpstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_UPSTREAM
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationFailure, LabelParseError, AssertionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
