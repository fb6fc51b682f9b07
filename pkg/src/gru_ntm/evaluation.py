"""Confusion matrix, precision/recall/F1, one-vs-rest ROC/AUC and report files.

Report files written by :func:`emit_report`:

``report.json``
    confusion matrix, per-class metrics, macro averages, accuracy and AUCs.
``confusion.csv``
    rows = true class, columns = predicted class, with class-name headers.
``roc_<class>.csv``
    ``fpr,tpr`` rows from (0,0) to (1,1); omitted when the class AUC is undefined.
``curves.csv``
    the training epoch log, when one is supplied.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CLASS_NAMES


def confusion(preds, truths, n_classes: int = len(CLASS_NAMES)) -> np.ndarray:
    """``cm[true, predicted]`` counts."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions, {truths.shape[0]} truths")
    if preds.size == 0:
        raise ValueError("need at least one prediction")
    for ids in (preds, truths):
        if np.any((ids < 0) | (ids >= n_classes)):
            raise ValueError(f"class id outside 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tpr: float
    fpr: float


def metrics(cm) -> tuple[list[ClassMetrics], dict, float]:
    """Per-class metrics, macro averages and accuracy. Zero denominators give 0."""
    cm = np.asarray(cm)
    total = cm.sum()
    per_class = []
    for c in range(cm.shape[0]):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        tn = total - tp - fp - fn
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        f1 = _ratio(2 * p * r, p + r)
        per_class.append(ClassMetrics(p, r, f1, r, _ratio(fp, fp + tn)))
    macro = {
        "precision": float(np.mean([m.precision for m in per_class])),
        "recall": float(np.mean([m.recall for m in per_class])),
        "f1": float(np.mean([m.f1 for m in per_class])),
    }
    return per_class, macro, _ratio(np.trace(cm), total)


def roc_curve(scores, positives) -> list[tuple[float, float]] | None:
    """ROC points for one class, sweeping the threshold down through each unique score.

    Tied scores move together, giving a diagonal segment (half credit).
    Returns ``None`` when there is no positive or no negative example.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], positives[order]
    tps = np.cumsum(pos)
    fps = np.cumsum(~pos)
    last_of_group = np.r_[s[1:] != s[:-1], True]
    points = [(0.0, 0.0)]
    points += [(fps[i] / n_neg, tps[i] / n_pos) for i in np.flatnonzero(last_of_group)]
    return [(float(f), float(t)) for f, t in points]


def auc_trapezoid(points) -> float:
    fpr, tpr = np.array(points).T
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(scores, truths, n_classes: int = len(CLASS_NAMES)) -> list[tuple[list | None, float | None]]:
    """One-vs-rest ``(points, auc)`` per class; the score for class c is column c."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    out = []
    for c in range(n_classes):
        pts = roc_curve(scores[:, c], truths == c)
        out.append((pts, None if pts is None else auc_trapezoid(pts)))
    return out


@dataclass
class EvalReport:
    confusion: list[list[int]]
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    accuracy: float
    auc: dict[str, float | None]
    roc: dict[str, list | None] = field(default_factory=dict)
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "confusion": self.confusion,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "macro": self.macro,
            "auc": self.auc,
            "roc": {k: (None if v is None else [list(p) for p in v]) for k, v in self.roc.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        roc = {k: (None if v is None else [tuple(p) for p in v]) for k, v in d["roc"].items()}
        return cls(d["confusion"], d["per_class"], d["macro"], d["accuracy"], d["auc"], roc,
                   d["class_names"])

    def summary(self) -> str:
        aucs = " ".join(
            f"{name}={'n/a' if a is None else f'{a:.4f}'}" for name, a in self.auc.items()
        )
        return f"accuracy={self.accuracy:.4f} macro_f1={self.macro['f1']:.4f} auc: {aucs}"


def evaluate_predictions(probs, truths, class_names: Sequence[str] = CLASS_NAMES) -> EvalReport:
    """Build a report from per-window probability rows and true class ids."""
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    n = len(class_names)
    cm = confusion(np.argmax(probs, axis=1), truths, n)
    per, macro, acc = metrics(cm)
    curves = roc_auc(probs, truths, n)
    return EvalReport(
        confusion=cm.tolist(),
        per_class={name: vars(m) for name, m in zip(class_names, per)},
        macro=macro,
        accuracy=acc,
        auc={name: a for name, (_, a) in zip(class_names, curves)},
        roc={name: pts for name, (pts, _) in zip(class_names, curves)},
        class_names=list(class_names),
    )


def emit_report(report: EvalReport, out_dir, epoch_logs=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(path)

    path = out / "confusion.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *report.class_names])
        for name, row in zip(report.class_names, report.confusion):
            w.writerow([name, *row])
    written.append(path)

    for name, pts in report.roc.items():
        if pts is None:
            continue
        path = out / f"roc_{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            w.writerows([repr(f), repr(t)] for f, t in pts)
        written.append(path)

    if epoch_logs is not None:
        from .training import write_epoch_log

        path = out / "curves.csv"
        write_epoch_log(epoch_logs, path)
        written.append(path)
    return written


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
