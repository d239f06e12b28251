"""Confusion matrices, accuracy, per-class counts and result tables."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    """``counts[t, p]`` = samples of true class ``t`` predicted as ``p``."""

    counts: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.shape != (k, k):
            raise ValueError("confusion matrix must be square")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(i) for i in range(k)]
        if len(self.class_names) != k:
            raise ValueError("need one class name per row")

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix"):
        return ConfusionMatrix(self.counts + other.counts, list(self.class_names))


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    @property
    def binary_accuracy(self):
        return (self.tp + self.tn) / self.total

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def confusion(preds, truths, num_classes, class_names=None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if preds.shape != truths.shape:
        raise ValueError(f"{preds.size} predictions vs {truths.size} truths")
    for name, ids in (("prediction", preds), ("truth", truths)):
        if ids.size and (ids.min() < 0 or ids.max() >= num_classes):
            raise ValueError(f"{name} id outside [0, {num_classes})")
    counts = np.bincount(truths * num_classes + preds, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes), list(class_names or []))


def accuracy(cm: ConfusionMatrix) -> float:
    """Correctly classified over all samples: trace / total."""
    total = cm.total
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def class_counts(cm: ConfusionMatrix, c: int) -> ClassCounts:
    """One-vs-rest TP/TN/FP/FN for class ``c``."""
    if not 0 <= c < cm.num_classes:
        raise ValueError(f"class {c} out of range")
    tp = int(cm.counts[c, c])
    fp = int(cm.counts[:, c].sum()) - tp
    fn = int(cm.counts[c, :].sum()) - tp
    return ClassCounts(tp, cm.total - tp - fp - fn, fp, fn)


def format_duration(seconds: float) -> str:
    """``"14 min 58s"`` style, as in the result tables."""
    minutes, secs = divmod(int(round(seconds)), 60)
    return f"{minutes} min {secs}s"


@dataclass
class EvalReport:
    model: str
    accuracy: float
    confusion: ConfusionMatrix
    duration_s: float = 0.0
    epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.accuracy <= 1:
            raise ValueError("accuracy must lie in [0, 1]")

    @classmethod
    def from_confusion(cls, model, cm, duration_s=0.0, epochs=0, seed=0):
        return cls(model, accuracy(cm), cm, duration_s, epochs, seed)

    @property
    def class_counts(self):
        return [class_counts(self.confusion, c) for c in range(self.confusion.num_classes)]

    def to_dict(self):
        per_class = {}
        for name, cc in zip(self.confusion.class_names, self.class_counts):
            per_class[name] = {"tp": cc.tp, "tn": cc.tn, "fp": cc.fp, "fn": cc.fn,
                               "precision": cc.precision, "recall": cc.recall, "f1": cc.f1}
        return {
            "model": self.model,
            "epochs": self.epochs,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "accuracy_pct": round(100 * self.accuracy, 2),
            "duration_s": self.duration_s,
            "wall_time": format_duration(self.duration_s),
            "class_names": list(self.confusion.class_names),
            "confusion_matrix": self.confusion.counts.tolist(),
            "per_class": per_class,
        }

    @classmethod
    def from_dict(cls, d):
        cm = ConfusionMatrix(np.array(d["confusion_matrix"]), list(d["class_names"]))
        return cls(d["model"], float(d["accuracy"]), cm, float(d.get("duration_s", 0.0)),
                   int(d.get("epochs", 0)), int(d.get("seed", 0)))


COLUMNS = ("model", "epochs", "accuracy", "wall_time", "wall_time_s")
_MD_HEADERS = ("Model", "Epochs", "Accuracy", "Wall time", "Wall time (s)")


def _row(r: EvalReport):
    return (r.model, str(r.epochs), f"{100 * r.accuracy:.2f}%", format_duration(r.duration_s),
            f"{r.duration_s:.2f}")


def emit_report(reports, fmt="markdown") -> str:
    """Render one row per report as ``json``, ``csv`` or ``markdown``/``md``."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "json":
        return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(_row(r) for r in reports)
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(_MD_HEADERS) + " |",
                 "|" + "|".join(["---"] * len(_MD_HEADERS)) + "|"]
        lines += ["| " + " | ".join(_row(r)) + " |" for r in reports]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unsupported report format {fmt!r}")


def _parse_fields(cells):
    model, epochs, acc, wall, wall_s = cells
    return {"model": model, "epochs": int(epochs), "accuracy_pct": float(acc.rstrip("%")),
            "wall_time": wall, "wall_time_s": float(wall_s)}


def parse_report(text: str, fmt="markdown") -> list:
    """Parse an emitted table back into row dicts (accuracy in percent)."""
    if fmt == "json":
        return [{"model": d["model"], "epochs": d["epochs"], "accuracy_pct": d["accuracy_pct"],
                 "wall_time": d["wall_time"], "wall_time_s": round(d["duration_s"], 2)}
                for d in json.loads(text)["reports"]]
    if fmt == "csv":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != COLUMNS:
            raise ValueError("unexpected csv header")
        return [_parse_fields(r) for r in rows[1:] if r]
    if fmt in ("markdown", "md"):
        lines = [l for l in text.splitlines() if l.startswith("|")][2:]
        return [_parse_fields([c.strip() for c in l.strip("|").split("|")]) for l in lines]
    raise ValueError(f"unsupported report format {fmt!r}")
