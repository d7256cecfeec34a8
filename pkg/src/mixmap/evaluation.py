"""Classifier evaluation: confusion metrics, ROC/AUC, chi-square model
comparison, and the split / cross-validation protocols.

Partitions operate on sample_ids so one split applies identically across
networks and encoders. All computations are pure and seed-deterministic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class EvaluationError(Exception):
    """Protocol precondition violated (class balance, sizes, marginals)."""


# ---------------------------------------------------------------------------
# confusion counts and threshold metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    """Percentages; None marks a ratio whose denominator was zero."""

    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    precision: float | None


def compute_metrics(c: ConfusionCounts) -> Metrics:
    """Accuracy (TP+TN)/N, sensitivity TP/(TP+FN), specificity TN/(TN+FP),
    precision TP/(TP+FP), each scaled to percent.

    Undefined ratios come back as None, never silently 0.
    """
    if c.n == 0:
        raise EvaluationError("metrics need at least one counted sample")

    def pct(num, den):
        return None if den == 0 else 100.0 * num / den

    return Metrics(
        accuracy=pct(c.tp + c.tn, c.n),
        sensitivity=pct(c.tp, c.tp + c.fn),
        specificity=pct(c.tn, c.tn + c.fp),
        precision=pct(c.tp, c.tp + c.fp),
    )


def confusion_from_scores(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


# ---------------------------------------------------------------------------
# ROC / AUC


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Points (false positive rate, true positive rate) from (0,0) to (1,1)."""

    points: np.ndarray
    auc: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


def roc_auc(scores, labels) -> RocCurve:
    """ROC over descending unique score thresholds; AUC by trapezoid.

    Tied scores collapse into one curve point, so the trapezoidal area
    equals the Mann-Whitney statistic (half credit per tied pair).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError("scores and labels must be matching 1-D arrays")
    p = int(np.sum(y == 1))
    q = int(np.sum(y == 0))
    if p == 0 or q == 0:
        raise EvaluationError("ROC needs both classes present")

    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    boundary = np.flatnonzero(ss[1:] != ss[:-1])
    ends = np.concatenate([boundary, [s.size - 1]])
    cum_tp = np.cumsum(ys == 1)[ends]
    cum_fp = np.cumsum(ys == 0)[ends]
    tpr = np.concatenate([[0.0], cum_tp / p])
    fpr = np.concatenate([[0.0], cum_fp / q])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(np.column_stack([fpr, tpr]), auc)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["false_positive_rate", "true_positive_rate"])
        for fpr, tpr in curve.points:
            writer.writerow([f"{fpr:.17g}", f"{tpr:.17g}"])


# ---------------------------------------------------------------------------
# chi-square model comparison


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float


def _chi2_sf_1df(stat: float) -> float:
    # Survival function of chi-square with 1 dof.
    return math.erfc(math.sqrt(stat / 2.0))


def chi_square_compare(
    correct_a: tuple[int, int],
    correct_b: tuple[int, int],
    *,
    yates: bool = False,
) -> ChiSquareResult:
    """Pearson chi-square on the 2x2 (model x correctness) table, 1 dof.

    Both models must be evaluated on the same number of samples. The
    optional Yates flag applies the standard continuity correction.
    """
    a, b = correct_a
    c, d = correct_b
    if min(a, b, c, d) < 0:
        raise EvaluationError("cell counts must be non-negative")
    if a + b != c + d:
        raise EvaluationError(
            f"models were evaluated on different sample counts: {a + b} vs {c + d}"
        )
    n = a + b + c + d
    marginals = ((a + b), (c + d), (a + c), (b + d))
    if 0 in marginals:
        raise EvaluationError(f"zero marginal in contingency table {((a, b), (c, d))}")
    diff = abs(a * d - b * c)
    if yates:
        diff = max(diff - n / 2.0, 0.0)
    stat = n * diff * diff / (marginals[0] * marginals[1] * marginals[2] * marginals[3])
    return ChiSquareResult(float(stat), _chi2_sf_1df(float(stat)))


def mcnemar_compare(only_a_correct: int, only_b_correct: int) -> ChiSquareResult:
    """Paired-alternative test on the discordant counts (flagged variant)."""
    if min(only_a_correct, only_b_correct) < 0:
        raise EvaluationError("discordant counts must be non-negative")
    disc = only_a_correct + only_b_correct
    if disc == 0:
        return ChiSquareResult(0.0, 1.0)
    stat = (only_a_correct - only_b_correct) ** 2 / disc
    return ChiSquareResult(float(stat), _chi2_sf_1df(float(stat)))


# ---------------------------------------------------------------------------
# partitions


def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * total for f in fractions]
    base = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(base)
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - base[i]), i)
    )
    for i in remainders[:leftover]:
        base[i] += 1
    return base


@dataclass(frozen=True)
class SplitSets:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def split_train_val_test(sample_ids: Sequence[str], seed: int) -> SplitSets:
    """Disjoint, exhaustive 64/16/20 partition by seeded permutation.

    Sizes are rounded by largest remainder so they always sum exactly.
    """
    ids = list(sample_ids)
    if len(ids) < 5:
        raise EvaluationError(f"need at least 5 samples to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise EvaluationError("duplicate sample_ids in split input")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_train, n_val, n_test = _largest_remainder(len(ids), (0.64, 0.16, 0.20))
    return SplitSets(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def kfold_splits(
    sample_ids: Sequence[str],
    folds: int = 5,
    seed: int = 0,
    validation_fraction: float = 0.2,
) -> list[FoldSplit]:
    """Random even-sized test folds; per fold, a slice of the remaining
    training ids is set aside for validation (hyper-parameter hook)."""
    ids = list(sample_ids)
    if folds < 2:
        raise EvaluationError("folds must be >= 2")
    if len(ids) < folds:
        raise EvaluationError(f"cannot make {folds} folds from {len(ids)} samples")
    if len(set(ids)) != len(ids):
        raise EvaluationError("duplicate sample_ids in fold input")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    sizes = _largest_remainder(len(ids), [1.0 / folds] * folds)
    out = []
    start = 0
    for f in range(folds):
        test = tuple(shuffled[start : start + sizes[f]])
        start += sizes[f]
        in_test = set(test)
        rest = [sid for sid in shuffled if sid not in in_test]
        n_core, n_val = _largest_remainder(
            len(rest), (1.0 - validation_fraction, validation_fraction)
        )
        sub = np.random.Generator(
            np.random.Philox(key=np.array([seed, f + 1], dtype=np.uint64))
        ).permutation(len(rest))
        rest = [rest[i] for i in sub]
        out.append(
            FoldSplit(
                fold_id=f + 1,
                train=tuple(rest[:n_core]),
                validation=tuple(rest[n_core:]),
                test=test,
            )
        )
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionCounts
    metrics: Metrics
    roc: RocCurve
    fold_id: int | None = None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold_id,
            "confusion": {
                "tp": self.confusion.tp,
                "tn": self.confusion.tn,
                "fp": self.confusion.fp,
                "fn": self.confusion.fn,
            },
            "accuracy": self.metrics.accuracy,
            "sensitivity": self.metrics.sensitivity,
            "specificity": self.metrics.specificity,
            "precision": self.metrics.precision,
            "auc": 100.0 * self.roc.auc,
        }


@dataclass(frozen=True)
class CvResult:
    folds: tuple[EvalReport, ...]
    averages: dict

    def to_dict(self) -> dict:
        return {"folds": [r.to_dict() for r in self.folds], "averages": self.averages}


def evaluate_scores(scores, labels, fold_id: int | None = None) -> EvalReport:
    counts = confusion_from_scores(scores, labels)
    return EvalReport(counts, compute_metrics(counts), roc_auc(scores, labels), fold_id)


def average_reports(reports: Sequence[EvalReport]) -> dict:
    """Unweighted arithmetic means of the per-fold percentage metrics."""
    keys = ("accuracy", "sensitivity", "specificity", "precision", "auc")
    out = {}
    for key in keys:
        vals = [r.to_dict()[key] for r in reports]
        out[key] = None if any(v is None for v in vals) else float(np.mean(vals))
    return out


ScoreFn = Callable[
    [np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray
]


def kfold_cv(
    matrix,
    labels,
    sample_ids: Sequence[str],
    score_fn: ScoreFn,
    folds: int = 5,
    seed: int = 0,
    validation_fraction: float = 0.2,
) -> CvResult:
    """Run score_fn per fold and aggregate reports plus unweighted averages.

    score_fn(train_X, train_y, val_X, val_y, test_X) returns positive-class
    scores for the test rows. Every sample lands in exactly one test fold.
    """
    x = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    ids = list(sample_ids)
    index = {sid: i for i, sid in enumerate(ids)}
    reports = []
    for fold in kfold_splits(ids, folds, seed, validation_fraction):
        tr = np.array([index[s] for s in fold.train], dtype=np.int64)
        va = np.array([index[s] for s in fold.validation], dtype=np.int64)
        te = np.array([index[s] for s in fold.test], dtype=np.int64)
        if y[tr].min() == y[tr].max():
            raise EvaluationError(
                f"fold {fold.fold_id}: training portion has a single class"
            )
        scores = score_fn(x[tr], y[tr], x[va], y[va], x[te])
        reports.append(evaluate_scores(scores, y[te], fold.fold_id))
    return CvResult(tuple(reports), average_reports(reports))


def write_report_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# text tables


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def format_cv_table(results: dict[str, CvResult]) -> str:
    """Fold-by-fold accuracy/AUC per model, with a closing Avg. row."""
    lines = []
    names = list(results)
    header = ["Fold"]
    for name in names:
        header.extend([f"{name} Accuracy", f"{name} AUC"])
    widths = [max(6, len(h)) for h in header]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    n_folds = len(next(iter(results.values())).folds)
    for i in range(n_folds):
        row = [str(i + 1)]
        for name in names:
            rep = results[name].folds[i].to_dict()
            row.extend([_fmt(rep["accuracy"]), _fmt(rep["auc"])])
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    row = ["Avg."]
    for name in names:
        avg = results[name].averages
        row.extend([_fmt(avg["accuracy"]), _fmt(avg["auc"])])
    lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def format_model_table(reports: dict[str, EvalReport]) -> str:
    """One row per model: accuracy, AUC, sensitivity, precision."""
    header = ["Model", "Accuracy", "AUC", "Sensitivity", "Precision"]
    width = max(12, max(len(n) for n in reports) + 2)
    lines = [header[0].ljust(width) + "".join(h.ljust(12) for h in header[1:])]
    for name, rep in reports.items():
        d = rep.to_dict()
        cells = [_fmt(d[k]) for k in ("accuracy", "auc", "sensitivity", "precision")]
        lines.append(name.ljust(width) + "".join(c.ljust(12) for c in cells))
    return "\n".join(lines) + "\n"


def format_comparison_table(
    names: Sequence[str], cells: dict[tuple[str, str], ChiSquareResult | None]
) -> str:
    """Pairwise p-value matrix between the listed models; n/a marks
    degenerate tables where the test is undefined."""
    width = max(10, max(len(n) for n in names) + 2)
    lines = ["".ljust(width) + "".join(n.ljust(width) for n in names)]
    for a in names:
        row = [a.ljust(width)]
        for b in names:
            if a == b:
                row.append("--".ljust(width))
            else:
                res = cells.get((a, b), cells.get((b, a)))
                cell = "n/a" if res is None else f"{res.p_value:.4g}"
                row.append(cell.ljust(width))
        lines.append("".join(row))
    return "\n".join(lines) + "\n"
