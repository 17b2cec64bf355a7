"""Multi-label evaluation: macro/micro P/R/F1, Hamming loss, macro AUC,
macro average precision and one-error."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

METRIC_NAMES = (
    "macro_precision", "macro_recall", "macro_f1",
    "micro_precision", "micro_recall", "micro_f1",
    "hamming_loss", "auc_macro", "average_precision", "one_error",
)


@dataclass
class LabelMatrix:
    """N items x L tags, binary."""

    values: np.ndarray
    tag_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError("label matrix must be 2-D")
        if not np.isin(self.values, (0, 1)).all():
            raise ConfigError("label matrix entries must be 0 or 1")
        self.values = self.values.astype(np.int64)
        if self.tag_names and len(self.tag_names) != self.values.shape[1]:
            raise ShapeError("tag_names length must match column count")


def _check_pair(truth, other, name="pred"):
    t = np.asarray(truth.values if isinstance(truth, LabelMatrix) else truth)
    o = np.asarray(other.values if isinstance(other, LabelMatrix) else other)
    if t.shape != o.shape:
        raise ShapeError(f"truth shape {t.shape} != {name} shape {o.shape}")
    return t, o


def _safe_div(num, den):
    return num / den if den > 0 else 0.0


def prf_macro(truth, pred):
    """Unweighted mean over tags of per-tag precision/recall/F1; any
    zero-denominator term counts as 0."""
    t, p = _check_pair(truth, pred)
    ps, rs, fs = [], [], []
    for j in range(t.shape[1]):
        tp = int(((t[:, j] == 1) & (p[:, j] == 1)).sum())
        fp = int(((t[:, j] == 0) & (p[:, j] == 1)).sum())
        fn = int(((t[:, j] == 1) & (p[:, j] == 0)).sum())
        prec = _safe_div(tp, tp + fp)
        rec = _safe_div(tp, tp + fn)
        ps.append(prec)
        rs.append(rec)
        fs.append(_safe_div(2 * prec * rec, prec + rec))
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def prf_micro(truth, pred):
    """Precision/recall/F1 from confusion counts pooled over all tags."""
    t, p = _check_pair(truth, pred)
    tp = int(((t == 1) & (p == 1)).sum())
    fp = int(((t == 0) & (p == 1)).sum())
    fn = int(((t == 1) & (p == 0)).sum())
    prec = _safe_div(tp, tp + fp)
    rec = _safe_div(tp, tp + fn)
    return prec, rec, _safe_div(2 * prec * rec, prec + rec)


def hamming_loss(truth, pred) -> float:
    t, p = _check_pair(truth, pred)
    return float((t != p).mean())


def _auc_one_tag(y, s):
    """Mann-Whitney AUC with ties counted 1/2; None if degenerate."""
    pos = s[y == 1]
    neg = s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def auc_macro(truth, scores) -> float:
    """Mean per-tag ROC AUC; tags lacking a positive or a negative skipped."""
    t, s = _check_pair(truth, scores, name="scores")
    aucs = [a for j in range(t.shape[1])
            if (a := _auc_one_tag(t[:, j], s[:, j])) is not None]
    if not aucs:
        raise ConfigError("every tag is degenerate; AUC undefined")
    return float(np.mean(aucs))


def _ap_one_tag(y, s):
    order = np.lexsort((np.arange(len(s)), -s))  # score desc, index asc
    y_sorted = y[order]
    n_pos = int(y_sorted.sum())
    if n_pos == 0:
        return None
    hits = np.cumsum(y_sorted)
    ranks = np.arange(1, len(y_sorted) + 1)
    precision_at_hit = hits[y_sorted == 1] / ranks[y_sorted == 1]
    return float(precision_at_hit.sum() / n_pos)


def average_precision(truth, scores) -> float:
    """Mean per-tag average precision over tags with at least one positive."""
    t, s = _check_pair(truth, scores, name="scores")
    aps = [a for j in range(t.shape[1])
           if (a := _ap_one_tag(t[:, j], s[:, j])) is not None]
    if not aps:
        raise ConfigError("no tag has a positive item; AP undefined")
    return float(np.mean(aps))


def one_error(truth, scores) -> float:
    """Fraction of items whose top-scoring tag (ties: lowest index) is not
    a true tag."""
    t, s = _check_pair(truth, scores, name="scores")
    top = s.argmax(axis=1)
    return float(np.mean(t[np.arange(t.shape[0]), top] == 0))


def evaluate_all(truth, pred, scores) -> dict[str, float]:
    """The full suite as a flat name -> value dict."""
    map_, mar, maf = prf_macro(truth, pred)
    mip, mir, mif = prf_micro(truth, pred)
    return {
        "macro_precision": map_, "macro_recall": mar, "macro_f1": maf,
        "micro_precision": mip, "micro_recall": mir, "micro_f1": mif,
        "hamming_loss": hamming_loss(truth, pred),
        "auc_macro": auc_macro(truth, scores),
        "average_precision": average_precision(truth, scores),
        "one_error": one_error(truth, scores),
    }


def per_tag_table(truth, pred, tag_names=None):
    """Per-tag precision/recall/F1 rows for report output."""
    t, p = _check_pair(truth, pred)
    names = tag_names or (truth.tag_names if isinstance(truth, LabelMatrix) else None)
    names = names or [f"tag{j}" for j in range(t.shape[1])]
    rows = []
    for j in range(t.shape[1]):
        sub_t, sub_p = t[:, j:j + 1], p[:, j:j + 1]
        prec, rec, f1 = prf_micro(sub_t, sub_p)
        rows.append({"tag": names[j], "precision": prec, "recall": rec, "f1": f1})
    return rows


def write_report_json(path, truth, pred, scores, tag_names=None) -> None:
    report = {
        "aggregate": evaluate_all(truth, pred, scores),
        "per_tag": per_tag_table(truth, pred, tag_names),
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, truth, pred, scores, tag_names=None) -> None:
    aggregate = evaluate_all(truth, pred, scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Description", "P", "R", "F"])
        writer.writerow(["Macro average", aggregate["macro_precision"],
                         aggregate["macro_recall"], aggregate["macro_f1"]])
        writer.writerow(["Micro average", aggregate["micro_precision"],
                         aggregate["micro_recall"], aggregate["micro_f1"]])
        writer.writerow([])
        writer.writerow(["Hamloss", "AUC", "AP", "One-error"])
        writer.writerow([aggregate["hamming_loss"], aggregate["auc_macro"],
                         aggregate["average_precision"], aggregate["one_error"]])
