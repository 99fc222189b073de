"""Accuracy and macro-F1 under the 3-class and 2-class protocols.

Confusion matrices are always 3x3 (rows gold, columns predicted).  Under
``"2class"`` samples whose *gold* label is Unclear are dropped; an Unclear
prediction on a retained sample stays in the Unclear column and counts as
an error.  Unparseable predictions (``None``) never enter the confusion
matrix; they are tallied per gold class in ``unparseable`` and are errors
under both protocols.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .data import PceLabel
from .prediction import Prediction

PROTOCOLS = ("3class", "2class")


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    n_total: int
    n_evaluated: int
    confusion: np.ndarray
    unparseable: np.ndarray
    accuracy: float
    macro_f1: float
    per_class: Mapping[str, Mapping[str, float]]

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "n_total": self.n_total,
            "n_evaluated": self.n_evaluated,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {k: dict(v) for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
            "unparseable": self.unparseable.tolist(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalReport":
        return cls(
            protocol=obj["protocol"],
            n_total=int(obj["n_total"]),
            n_evaluated=int(obj["n_evaluated"]),
            confusion=np.asarray(obj["confusion"], dtype=np.int64),
            unparseable=np.asarray(obj.get("unparseable", [0, 0, 0]), dtype=np.int64),
            accuracy=float(obj["accuracy"]),
            macro_f1=float(obj["macro_f1"]),
            per_class={k: dict(v) for k, v in obj["per_class"].items()},
        )

    def __eq__(self, other):
        return (
            isinstance(other, EvalReport)
            and self.to_json() == other.to_json()
        )


def _pred_code(p, *, remap: bool) -> int:
    if p is None:
        return -1
    if isinstance(p, Prediction):
        lab = p.label
        if remap and lab == PceLabel.UNCLEAR:
            lab = p.runner_up(PceLabel.UNCLEAR)
        return int(lab)
    code = int(p)
    if code not in (0, 1, 2):
        raise ValueError(f"invalid predicted class {p!r}")
    return code


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def evaluate(preds: Sequence, golds: Sequence, protocol: str = "3class", *, twoclass_remap: bool = False) -> EvalReport:
    """Score predictions against gold labels.

    ``preds`` items may be :class:`Prediction`, :class:`PceLabel`/int codes,
    or ``None`` for an unparseable answer.  With ``twoclass_remap`` a
    retained Unclear prediction is replaced by the runner-up class (only
    possible for :class:`Prediction` inputs).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} gold labels")
    remap = twoclass_remap and protocol == "2class"
    gold = np.array([int(g) for g in golds], dtype=np.int64)
    pred = np.array([_pred_code(p, remap=remap) for p in preds], dtype=np.int64)
    classes = (0, 1, 2) if protocol == "3class" else (0, 1)
    keep = np.isin(gold, classes)
    gold, pred = gold[keep], pred[keep]
    n = int(gold.size)
    if n == 0:
        raise ValueError(f"no samples left to evaluate under protocol {protocol}")

    conf = kernels.confusion_counts(gold, pred, 3)
    unparse = np.bincount(gold[pred < 0], minlength=3).astype(np.int64)
    support = np.bincount(gold, minlength=3)
    per_class = {}
    f1s = []
    for c in classes:
        tp = int(conf[c, c])
        predicted = int(conf[list(classes), c].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support[c] if support[c] else 0.0
        f1 = _f1(precision, recall)
        f1s.append(f1)
        per_class[PceLabel(c).text] = {
            "precision": precision, "recall": recall, "f1": f1, "support": int(support[c]),
        }
    return EvalReport(
        protocol=protocol,
        n_total=len(golds),
        n_evaluated=n,
        confusion=conf,
        unparseable=unparse,
        accuracy=float(np.trace(conf)) / n,
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
    )


def constant_macro_f1(modal_share: float) -> float:
    """3-class macro-F1 of a constant predictor of the modal class."""
    return (2 * modal_share / (1 + modal_share)) / 3


@dataclass(frozen=True)
class ConstantPredictor:
    label: PceLabel

    def predict(self, n: int) -> list[Prediction]:
        return [Prediction.certain(self.label)] * n

    def __call__(self, *_args, **_kwargs) -> Prediction:
        return Prediction.certain(self.label)


def naive_baseline(train_golds: Sequence) -> ConstantPredictor:
    """Predictor of the most frequent training class (ties go to the lowest code)."""
    if len(train_golds) == 0:
        raise ValueError("naive baseline needs at least one training label")
    counts = np.bincount([int(g) for g in train_golds], minlength=3)
    return ConstantPredictor(PceLabel(int(np.argmax(counts))))


# Rows of the signal ablation: (model, eyetrack, user, stimulus).
ABLATION_VARIANTS = (
    ("Naive", False, False, False),
    ("LSTM", True, False, False),
    ("LSTM", True, True, False),
    ("Transformer", False, False, True),
    ("Transformer", False, True, True),
    ("Ensemble", True, True, True),
)


@dataclass(frozen=True)
class AblationRow:
    model: str
    eyetrack: bool
    user: bool
    stimulus: bool
    present: bool
    f1_3: float = float("nan")
    acc_3: float = float("nan")
    f1_2: float = float("nan")
    acc_2: float = float("nan")

    @property
    def key(self):
        return (self.model, self.eyetrack, self.user, self.stimulus)


class AblationTable:
    def __init__(self, rows: Sequence[AblationRow]):
        self.rows = list(rows)

    def row(self, model, eyetrack, user, stimulus) -> AblationRow:
        for r in self.rows:
            if r.key == (model, eyetrack, user, stimulus):
                return r
        raise KeyError((model, eyetrack, user, stimulus))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "eyetrack", "user", "stimulus", "f1_3class", "acc_3class", "f1_2class", "acc_2class", "status"])
        for r in self.rows:
            vals = [f"{v:.4f}" if r.present else "" for v in (r.f1_3, r.acc_3, r.f1_2, r.acc_2)]
            w.writerow([r.model, _flag(r.eyetrack), _flag(r.user), _flag(r.stimulus), *vals,
                        "ok" if r.present else "absent"])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ("Model", "Eyetrack", "User", "Stimulus", "F1 (3)", "Acc (3)", "F1 (2)", "Acc (2)")
        body = []
        for r in self.rows:
            vals = [f"{v:.4f}" if r.present else "absent" for v in (r.f1_3, r.acc_3, r.f1_2, r.acc_2)]
            body.append((r.model, _flag(r.eyetrack), _flag(r.user), _flag(r.stimulus), *vals))
        widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
        lines = [" | ".join(str(x).ljust(w) for x, w in zip(line, widths)) for line in (head, *body)]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _flag(b: bool) -> str:
    return "+" if b else ""


def ablation_table(predictions: Mapping[tuple, Sequence | None], golds: Sequence, train_golds: Sequence,
                   variants=ABLATION_VARIANTS) -> AblationTable:
    """Score stored test predictions for each signal variant.

    ``predictions`` maps a variant key ``(model, eyetrack, user, stimulus)``
    to its test-set predictions.  The naive row is always computed from
    ``train_golds``; any other variant that is missing (or maps to None) is
    marked absent.
    """
    rows = []
    for key in variants:
        preds = predictions.get(key)
        if key[0] == "Naive" and preds is None:
            preds = naive_baseline(train_golds).predict(len(golds))
        if preds is None:
            rows.append(AblationRow(*key, present=False))
            continue
        r3 = evaluate(preds, golds, "3class")
        r2 = evaluate(preds, golds, "2class")
        rows.append(AblationRow(*key, present=True, f1_3=r3.macro_f1, acc_3=r3.accuracy,
                                f1_2=r2.macro_f1, acc_2=r2.accuracy))
    return AblationTable(rows)
