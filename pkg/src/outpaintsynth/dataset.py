"""Leak-free stratified splitting by seed and dataset layout emission."""

from __future__ import annotations

import math
import shutil
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from sklearn.base import BaseEstimator

from . import _rng
from .geometry import CLASS_NAMES

SPLITS = ("train", "val", "test")
# remainder and small-class priority
SPLIT_PRIORITY = ("test", "train", "val")
BACKGROUND = "background"


@dataclass(frozen=True)
class SplitConfig:
    train: float = 0.40
    val: float = 0.10
    test: float = 0.50

    def __post_init__(self):
        fr = self.fractions
        if any(not (math.isfinite(v) and v > 0) for v in fr.values()):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr.values()) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr.values())}")

    @property
    def fractions(self) -> dict[str, float]:
        return {"train": self.train, "val": self.val, "test": self.test}


def apportion(n, fractions):
    """Integer split counts for ``n`` units by largest-remainder rounding.

    With fewer than three units, units go to splits in priority order
    test, train, val.
    """
    if n < 3:
        counts = dict.fromkeys(SPLITS, 0)
        for name in SPLIT_PRIORITY[:n]:
            counts[name] = 1
        return counts
    exact = {s: n * fractions[s] for s in SPLITS}
    counts = {s: math.floor(exact[s] + 1e-9) for s in SPLITS}
    left = n - sum(counts.values())
    order = sorted(SPLITS, key=lambda s: (-(exact[s] - counts[s]), SPLIT_PRIORITY.index(s)))
    for s in order[:left]:
        counts[s] += 1
    return counts


def _stratum(class_id):
    if class_id is None or class_id == BACKGROUND or (isinstance(class_id, int) and class_id < 0):
        return BACKGROUND
    return int(class_id)


def _records(records):
    for r in records:
        if isinstance(r, dict):
            yield r["seed_id"], r.get("class_id")
        elif isinstance(r, (tuple, list)):
            yield r[0], r[1]
        else:
            yield r.seed_id, r.class_id


@dataclass
class SplitAssignment:
    split_of: dict[str, str]
    class_of: dict[str, object] = field(default_factory=dict)

    def seeds(self, split) -> set[str]:
        return {s for s, sp in self.split_of.items() if sp == split}

    def counts(self) -> dict[str, dict[object, int]]:
        out = {s: Counter() for s in SPLITS}
        for seed, split in self.split_of.items():
            out[split][self.class_of.get(seed)] += 1
        return {s: dict(c) for s, c in out.items()}

    def check_leak_free(self):
        sets = {s: self.seeds(s) for s in SPLITS}
        for i, a in enumerate(SPLITS):
            for b in SPLITS[i + 1:]:
                overlap = sets[a] & sets[b]
                if overlap:
                    raise AssertionError(f"seeds shared by {a} and {b}: {sorted(overlap)[:5]}")
        return True


def stratified_split(records, cfg=None, rng=None) -> SplitAssignment:
    """Assign every seed to train/val/test, stratified by class.

    ``records`` yield ``(seed_id, class_id)`` pairs, dicts or objects with
    those attributes; repeated seeds (several images of one seed) collapse to
    one unit. ``class_id`` of ``None`` or ``"background"`` forms its own stratum.
    """
    cfg = cfg or SplitConfig()
    rng = _rng.as_generator(rng)
    class_of = {}
    for seed_id, class_id in _records(records):
        stratum = _stratum(class_id)
        if class_of.setdefault(seed_id, stratum) != stratum:
            raise ValueError(f"seed {seed_id!r} carries two classes: {class_of[seed_id]!r} and {stratum!r}")
    if not class_of:
        raise ValueError("cannot split an empty record set")
    by_class = defaultdict(list)
    for seed_id, stratum in class_of.items():
        by_class[stratum].append(seed_id)
    split_of = {}
    for stratum in sorted(by_class, key=lambda k: (k == BACKGROUND, str(k) if k == BACKGROUND else k)):
        seeds = sorted(by_class[stratum])
        seeds = [seeds[i] for i in rng.permutation(len(seeds))]
        counts = apportion(len(seeds), cfg.fractions)
        pos = 0
        for split in SPLITS:
            for seed in seeds[pos:pos + counts[split]]:
                split_of[seed] = split
            pos += counts[split]
    return SplitAssignment(split_of, class_of)


class SeedStratifiedSplitter(BaseEstimator):
    """Single three-way split where ``groups`` (seed ids) never straddle splits.

    ``split(X, y, groups)`` yields one ``(train_idx, val_idx, test_idx)`` tuple
    of sample indices; ``y`` holds class ids (``None`` for background images).
    """

    def __init__(self, train_size=0.4, val_size=0.1, test_size=0.5, random_state=0):
        self.train_size = train_size
        self.val_size = val_size
        self.test_size = test_size
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None):
        return 1

    def assign(self, groups, y):
        cfg = SplitConfig(self.train_size, self.val_size, self.test_size)
        rng = _rng.stream(self.random_state, "split")
        return stratified_split(zip(groups, y), cfg, rng)

    def split(self, X, y=None, groups=None):
        if groups is None:
            raise ValueError("groups (seed ids) are required for a leak-free split")
        groups = list(groups)
        y = [None] * len(groups) if y is None else list(y)
        if len(groups) != len(y) or (X is not None and len(X) != len(groups)):
            raise ValueError("X, y and groups must have the same length")
        assignment = self.assign(groups, y)
        labels = np.array([assignment.split_of[g] for g in groups])
        yield tuple(np.flatnonzero(labels == s) for s in SPLITS)


@dataclass
class DistributionTable:
    sizes: dict[str, int]
    percent: dict[str, dict[str, float]]
    columns: tuple[str, ...]

    def format(self, decimals=0) -> str:
        header = ["Split", "Size", *self.columns]
        rows = [header]
        for split in SPLITS:
            pct = self.percent[split]
            rows.append([split.capitalize(), str(self.sizes[split])] + [f"{pct[c]:.{decimals}f}%" for c in self.columns])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [" | ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "sizes": self.sizes, "percent": self.percent}


def distribution_table(assignment, images=None) -> DistributionTable:
    """Per-split class percentages.

    Counts images when ``images`` (an iterable of seed ids, one per image) is
    given, otherwise seeds. Background is its own column.
    """
    units = list(assignment.split_of) if images is None else list(images)
    if not units:
        raise ValueError("empty assignment")
    columns = tuple(str(i) for i in range(len(CLASS_NAMES))) + (BACKGROUND,)
    counts = {s: Counter() for s in SPLITS}
    for seed in units:
        cls = assignment.class_of.get(seed)
        counts[assignment.split_of[seed]][BACKGROUND if cls == BACKGROUND else str(cls)] += 1
    sizes = {s: sum(counts[s].values()) for s in SPLITS}
    percent = {
        s: {c: (100.0 * counts[s][c] / sizes[s] if sizes[s] else 0.0) for c in columns} for s in SPLITS
    }
    return DistributionTable(sizes, percent, columns)


@dataclass
class DatasetItem:
    stem: str
    image_path: Path
    label_path: Path
    seed_id: str


def write_dataset(items, assignment, root, trainer=None) -> Path:
    """Copy images/labels into ``root/{images,labels}/{train,val,test}`` and write ``data.yaml``."""
    root = Path(root)
    items = list(items)
    stems = Counter(it.stem for it in items)
    dupes = [s for s, n in stems.items() if n > 1]
    if dupes:
        raise ValueError(f"stem collisions: {sorted(dupes)[:5]}")
    for it in items:
        if not Path(it.label_path).exists():
            raise FileNotFoundError(f"missing label for image {it.stem}: {it.label_path}")
        if it.seed_id not in assignment.split_of:
            raise KeyError(f"image {it.stem} references unassigned seed {it.seed_id!r}")
    assignment.check_leak_free()

    for sub in ("images", "labels"):
        if (root / sub).exists():
            shutil.rmtree(root / sub)
        for split in SPLITS:
            (root / sub / split).mkdir(parents=True, exist_ok=True)
    counts = dict.fromkeys(SPLITS, 0)
    for it in sorted(items, key=lambda it: it.stem):
        split = assignment.split_of[it.seed_id]
        suffix = Path(it.image_path).suffix or ".png"
        shutil.copyfile(it.image_path, root / "images" / split / f"{it.stem}{suffix}")
        shutil.copyfile(it.label_path, root / "labels" / split / f"{it.stem}.txt")
        counts[split] += 1
    descriptor = {
        "path": str(root.resolve()),
        "train": "images/train",
        "val": "images/val",
        "test": "images/test",
        "nc": len(CLASS_NAMES),
        "names": list(CLASS_NAMES),
        "counts": counts,
    }
    (root / "data.yaml").write_text(yaml.safe_dump(descriptor, sort_keys=False), encoding="utf-8")
    if trainer is not None:
        (root / "trainer.yaml").write_text(yaml.safe_dump(dict(trainer), sort_keys=False), encoding="utf-8")
    return root / "data.yaml"
