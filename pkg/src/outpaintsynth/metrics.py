"""Detection evaluation from scratch: matching, AP, mAP50/mAP50-95, F1, fitness, confusion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import NUM_CLASSES, PixelBox, iou
from .labels import parse_labels, parse_predictions

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# guards IoU == threshold against float round-off
_EPS = 1e-9


@dataclass
class DetectionSample:
    image_id: str
    ground_truth: list = field(default_factory=list)
    predictions: list = field(default_factory=list)

    def __post_init__(self):
        self.ground_truth = [(int(c), PixelBox.coerce(b)) for c, b in self.ground_truth]
        preds = []
        for c, b, conf in self.predictions:
            conf = float(conf)
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"confidence {conf} outside [0, 1] in {self.image_id}")
            preds.append((int(c), PixelBox.coerce(b), conf))
        self.predictions = preds


class MatchResult(NamedTuple):
    tp: np.ndarray
    confidence: np.ndarray
    n_fn: int


def _sorted_predictions(sample, class_id):
    preds = [(b, conf) for c, b, conf in sample.predictions if c == class_id]
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    return [preds[i] for i in order]


def match_detections(sample, class_id, iou_threshold=0.5) -> MatchResult:
    """Greedy one-to-one matching for one class in one image.

    Predictions are visited by descending confidence (stable); each claims the
    highest-IoU unmatched ground truth of the class with IoU at or above the
    threshold. Flags are returned in that visiting order.
    """
    gts = [b for c, b in sample.ground_truth if c == class_id]
    preds = _sorted_predictions(sample, class_id)
    taken = [False] * len(gts)
    tp = np.zeros(len(preds), dtype=bool)
    for i, (box, _) in enumerate(preds):
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(box, gt)
            if v >= iou_threshold - _EPS and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            tp[i] = True
    conf = np.array([c for _, c in preds], dtype=np.float64)
    return MatchResult(tp, conf, len(gts) - int(tp.sum()))


def average_precision(tp, confidence, total_gt):
    """All-points interpolated AP: area under the monotone precision envelope.

    Returns ``None`` when there is neither ground truth nor any prediction.
    """
    tp = np.asarray(tp, dtype=bool)
    confidence = np.asarray(confidence, dtype=np.float64)
    if total_gt == 0:
        return None if tp.size == 0 else 0.0
    if tp.size == 0:
        return 0.0
    order = np.argsort(-confidence, kind="stable")
    hits = tp[order]
    ctp = np.cumsum(hits)
    cfp = np.cumsum(~hits)
    recall = ctp / total_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


def _class_matches(samples, class_id, iou_threshold):
    tps, confs, n_gt = [], [], 0
    for s in samples:
        m = match_detections(s, class_id, iou_threshold)
        tps.append(m.tp)
        confs.append(m.confidence)
        n_gt += m.n_fn + int(m.tp.sum())
    return np.concatenate(tps) if tps else np.zeros(0, bool), np.concatenate(confs) if confs else np.zeros(0), n_gt


def _evaluable_classes(samples):
    return sorted({c for s in samples for c, _ in s.ground_truth})


class MapResult(NamedTuple):
    map50: float
    map50_95: float
    per_class: dict


def compute_map(samples, thresholds=IOU_THRESHOLDS) -> MapResult:
    """mAP at IoU 0.5 and averaged over ``thresholds``; classes without ground truth are left out."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    thresholds = tuple(float(t) for t in thresholds)
    if not any(abs(t - 0.5) < 1e-12 for t in thresholds):
        raise ValueError("thresholds must include 0.5")
    i50 = next(i for i, t in enumerate(thresholds) if abs(t - 0.5) < 1e-12)
    classes = _evaluable_classes(samples)
    if not classes:
        raise ValueError("no class has ground truth; mAP is undefined")
    per_class = {}
    for c in classes:
        aps = []
        for t in thresholds:
            tp, conf, n_gt = _class_matches(samples, c, t)
            aps.append(average_precision(tp, conf, n_gt))
        per_class[c] = aps
    table = np.array([per_class[c] for c in classes], dtype=np.float64)
    return MapResult(float(table[:, i50].mean()), float(table.mean()), per_class)


def f1(precision, recall) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def fitness(map50, map50_95) -> float:
    return 0.1 * map50 + 0.9 * map50_95


class OperatingPoint(NamedTuple):
    precision: float
    recall: float
    f1: float
    confidence: float | None


def best_f1_operating_point(samples, iou_threshold=0.5) -> OperatingPoint:
    """Class-mean precision and recall at the confidence threshold maximizing their F1."""
    samples = list(samples)
    classes = _evaluable_classes(samples)
    if not classes:
        raise ValueError("no class has ground truth")
    per_class = []
    all_conf = []
    for c in classes:
        tp, conf, n_gt = _class_matches(samples, c, iou_threshold)
        order = np.argsort(-conf, kind="stable")
        per_class.append((np.cumsum(tp[order]), -conf[order], n_gt))
        all_conf.append(conf)
    candidates = np.unique(np.concatenate(all_conf))[::-1]
    best = OperatingPoint(0.0, 0.0, 0.0, None)
    for t in candidates:
        ps, rs = [], []
        for ctp, neg_sorted, n_gt in per_class:
            k = int(np.searchsorted(neg_sorted, -t, side="right"))
            hits = int(ctp[k - 1]) if k else 0
            ps.append(hits / k if k else 0.0)
            rs.append(hits / n_gt)
        p, r = float(np.mean(ps)), float(np.mean(rs))
        score = f1(p, r)
        if score > best.f1:
            best = OperatingPoint(p, r, score, float(t))
    return best


def confusion_matrix(samples, num_classes=NUM_CLASSES, confidence_threshold=0.25, iou_threshold=0.5):
    """Counts indexed ``[predicted, true]``; index ``num_classes`` is background.

    Pairs are matched one-to-one across classes by descending IoU.
    """
    bg = num_classes
    m = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    for s in samples:
        preds = [(c, b) for c, b, conf in s.predictions if conf >= confidence_threshold]
        gts = s.ground_truth
        pairs = []
        for i, (_, pb) in enumerate(preds):
            for j, (_, gb) in enumerate(gts):
                v = iou(pb, gb)
                if v >= iou_threshold - _EPS:
                    pairs.append((-v, i, j))
        pairs.sort()
        used_p, used_g = set(), set()
        for _, i, j in pairs:
            if i in used_p or j in used_g:
                continue
            used_p.add(i)
            used_g.add(j)
            m[preds[i][0], gts[j][0]] += 1
        for i, (c, _) in enumerate(preds):
            if i not in used_p:
                m[c, bg] += 1
        for j, (c, _) in enumerate(gts):
            if j not in used_g:
                m[bg, c] += 1
    return m


def normalize_columns(matrix):
    m = np.asarray(matrix, dtype=np.float64)
    sums = m.sum(axis=0, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    map50: float
    map50_95: float
    fitness: float
    confusion: np.ndarray = field(repr=False)
    operating_confidence: float | None = None
    per_class_ap: dict = field(default_factory=dict, repr=False)

    @property
    def confusion_normalized(self):
        return normalize_columns(self.confusion)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mAP50": self.map50,
            "mAP50-95": self.map50_95,
            "fitness": self.fitness,
            "operating_point": "max-F1 confidence threshold",
            "operating_confidence": self.operating_confidence,
            "per_class_ap50": {str(c): aps[0] for c, aps in self.per_class_ap.items()},
            "confusion": self.confusion.tolist(),
        }


def evaluate(samples, num_classes=NUM_CLASSES, thresholds=IOU_THRESHOLDS, confidence_threshold=0.25,
             iou_threshold=0.5) -> MetricsReport:
    samples = list(samples)
    mp = compute_map(samples, thresholds)
    op = best_f1_operating_point(samples, 0.5)
    cm = confusion_matrix(samples, num_classes, confidence_threshold, iou_threshold)
    return MetricsReport(op.precision, op.recall, op.f1, mp.map50, mp.map50_95, fitness(mp.map50, mp.map50_95),
                         cm, op.confidence, mp.per_class)


def load_samples(label_dir, pred_dir, image_width=512, image_height=None):
    """Pair ``<stem>.txt`` label files with same-stem prediction files."""
    image_height = image_height or image_width
    label_dir, pred_dir = Path(label_dir), Path(pred_dir)
    stems = sorted({p.stem for p in label_dir.glob("*.txt")} | {p.stem for p in pred_dir.glob("*.txt")})
    samples = []
    for stem in stems:
        lp, pp = label_dir / f"{stem}.txt", pred_dir / f"{stem}.txt"
        gts = parse_labels(lp.read_text(encoding="utf-8")) if lp.exists() else []
        preds = parse_predictions(pp.read_text(encoding="utf-8")) if pp.exists() else []
        samples.append(DetectionSample(
            stem,
            [(a.class_id, a.to_box(image_width, image_height)) for a in gts],
            [(a.class_id, a.to_box(image_width, image_height), conf) for a, conf in preds],
        ))
    return samples


def write_report(report, out_dir, class_names=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    n = report.confusion.shape[0]
    names = list(class_names or [str(i) for i in range(n - 1)]) + ["background"]
    header = "predicted\\true," + ",".join(names)
    for fname, mat, fmt in (("confusion_counts.csv", report.confusion, "{:d}"),
                            ("confusion_normalized.csv", report.confusion_normalized, "{:.4f}")):
        lines = [header] + [names[i] + "," + ",".join(fmt.format(v) for v in row) for i, row in enumerate(mat.tolist())]
        (out_dir / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
