"""Label agreement and ROC statistics.

``auc`` is the Mann-Whitney estimate computed from midranks. ``delong_ci``
uses DeLong's structural components for the variance; ``bootstrap_ci`` is a
stratified percentile bootstrap. Both return a :class:`RocResult`.
"""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from bodyct.systems import all_label_ids

DELONG = "delong"
BOOTSTRAP = "bootstrap"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class LabelAgreement:
    label_id: str
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool = False

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def n_positive_reference(self) -> int:
        return self.tp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else float("nan")

    @property
    def f_score(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        # no positives anywhere: perfect agreement on absence, by convention
        return 1.0 if denom == 0 else 2 * self.tp / denom


def confusion(predicted: Sequence[int], reference: Sequence[int], label_id: str = "") -> LabelAgreement:
    p = np.asarray(predicted, dtype=bool)
    r = np.asarray(reference, dtype=bool)
    if p.shape != r.shape:
        raise MetricsError("predicted and reference lengths differ")
    tp = int(np.sum(p & r))
    fp = int(np.sum(p & ~r))
    fn = int(np.sum(~p & r))
    tn = int(np.sum(~p & ~r))
    return LabelAgreement(label_id, tp, fp, fn, tn, degenerate=(tp + fp + fn == 0))


def agreement(
    predicted: Mapping[str, Mapping[str, int]],
    reference: Mapping[str, Mapping[str, int]],
    label_ids: Sequence[str] | None = None,
) -> list[LabelAgreement]:
    """Per-label confusion counts of rule labels against reference labels.

    Both arguments map an item id to ``{label_id: 0/1}``; a label missing from
    an item's mapping counts as 0. Items must match exactly.
    """
    pk, rk = set(predicted), set(reference)
    if pk != rk:
        diff = sorted(pk ^ rk)
        raise MetricsError(
            f"item ids differ between predicted and reference ({len(diff)}): "
            + ", ".join(diff[:20]) + (" ..." if len(diff) > 20 else "")
        )
    if label_ids is None:
        present = {lab for m in list(predicted.values()) + list(reference.values()) for lab in m}
        label_ids = [lab for lab in all_label_ids() if lab in present]
    items = sorted(pk)
    out = []
    for lab in label_ids:
        p = [int(bool(predicted[i].get(lab, 0))) for i in items]
        r = [int(bool(reference[i].get(lab, 0))) for i in items]
        out.append(confusion(p, r, lab))
    return out


def _split_classes(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricsError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise MetricsError("labels must be 0 or 1")
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricsError("AUC undefined: need at least one positive and one negative")
    return pos, neg


def _auc_from(pos: np.ndarray, neg: np.ndarray) -> float:
    m, n = len(pos), len(neg)
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[:m].sum() - m * (m + 1) / 2.0) / (m * n))


def auc(scores, labels) -> float:
    pos, neg = _split_classes(scores, labels)
    return _auc_from(pos, neg)


@dataclass(frozen=True)
class RocResult:
    label_id: str
    auc: float
    variance: float
    ci_low: float
    ci_high: float
    n_pos: int
    n_neg: int
    method: str
    flag: str = ""  # "", "degenerate", "undefined", "insufficient"


def delong_components(pos: np.ndarray, neg: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """AUC and the structural components V10 (per positive) and V01 (per negative).

    V10_i is the fraction of negatives beaten by positive i (ties count a half);
    V01_j the fraction of positives beating negative j.
    """
    m, n = len(pos), len(neg)
    r_all = rankdata(np.concatenate([pos, neg]))
    r_pos = rankdata(pos)
    r_neg = rankdata(neg)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    return float(v10.mean()), v10, v01


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def delong_ci(scores, labels, alpha: float = 0.05, label_id: str = "") -> RocResult:
    pos, neg = _split_classes(scores, labels)
    m, n = len(pos), len(neg)
    if m < 2 or n < 2:
        raise MetricsError("DeLong variance needs at least two positives and two negatives")
    a, v10, v01 = delong_components(pos, neg)
    var = float(np.var(v10, ddof=1) / m + np.var(v01, ddof=1) / n)
    var = max(var, 0.0)
    half = norm.ppf(1.0 - alpha / 2.0) * math.sqrt(var)
    flag = "degenerate" if var == 0.0 else ""
    return RocResult(label_id, a, var, _clamp(a - half), _clamp(a + half), m, n, DELONG, flag)


def _bootstrap_aucs(pos: np.ndarray, neg: np.ndarray, resamples: int, rng: np.random.Generator,
                    chunk: int = 200) -> np.ndarray:
    m, n = len(pos), len(neg)
    out = np.empty(resamples)
    done = 0
    while done < resamples:
        k = min(chunk, resamples - done)
        # stratified: each class is resampled within itself, so both classes are always present
        bp = pos[rng.integers(0, m, size=(k, m))]
        bn = neg[rng.integers(0, n, size=(k, n))]
        ranks = rankdata(np.concatenate([bp, bn], axis=1), axis=1)
        out[done:done + k] = (ranks[:, :m].sum(axis=1) - m * (m + 1) / 2.0) / (m * n)
        done += k
    return out


def bootstrap_ci(
    scores,
    labels,
    resamples: int = 2000,
    alpha: float = 0.05,
    seed: int | np.random.Generator = 0,
    label_id: str = "",
) -> RocResult:
    """Stratified percentile bootstrap CI for the AUC.

    The interval is widened if needed so it always contains the point estimate.
    """
    pos, neg = _split_classes(scores, labels)
    if resamples < 1:
        raise MetricsError("resamples must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = _auc_from(pos, neg)
    boots = _bootstrap_aucs(pos, neg, resamples, rng)
    lo, hi = np.quantile(boots, [alpha / 2.0, 1.0 - alpha / 2.0])
    var = float(np.var(boots, ddof=1)) if resamples > 1 else 0.0
    lo, hi = min(float(lo), a), max(float(hi), a)
    flag = "degenerate" if var == 0.0 else ""
    return RocResult(label_id, a, var, _clamp(lo), _clamp(hi), len(pos), len(neg), BOOTSTRAP, flag)


@dataclass(frozen=True)
class PredictionRecord:
    volume_id: str
    label_id: str
    score: float


def label_seed(seed: int, label_id: str) -> np.random.Generator:
    """Generator for one label, independent of which other labels are evaluated."""
    return np.random.default_rng([seed % 2**64, zlib.crc32(label_id.encode("utf-8"))])


def _undefined(label_id: str, n_pos: int, n_neg: int, method: str, flag: str, a: float = float("nan")):
    nan = float("nan")
    return RocResult(label_id, a, nan, nan, nan, n_pos, n_neg, method, flag)


def evaluate_predictions(
    predictions: Iterable[PredictionRecord],
    reference: Mapping[tuple[str, str], int],
    method: str = DELONG,
    alpha: float = 0.05,
    seed: int = 0,
    resamples: int = 2000,
    jobs: int = 1,
) -> list[RocResult]:
    """One RocResult per label present in ``reference``, in canonical label order.

    ``reference`` maps (volume_id, label_id) to 0/1. Every reference pair needs
    a prediction; extra predictions are ignored.
    """
    if method not in (DELONG, BOOTSTRAP):
        raise MetricsError(f"unknown method {method!r}")
    scores: dict[tuple[str, str], float] = {}
    for p in predictions:
        key = (p.volume_id, p.label_id)
        if key in scores:
            raise MetricsError(f"duplicate prediction for volume {p.volume_id} label {p.label_id}")
        if not math.isfinite(p.score) or not 0.0 <= p.score <= 1.0:
            raise MetricsError(f"score out of [0,1] for volume {p.volume_id} label {p.label_id}: {p.score}")
        scores[key] = p.score
    missing = sorted(k for k in reference if k not in scores)
    if missing:
        shown = ", ".join(f"{v}/{lab}" for v, lab in missing[:20])
        raise MetricsError(f"{len(missing)} reference entries lack a prediction: {shown}"
                           + (" ..." if len(missing) > 20 else ""))

    by_label: dict[str, list[tuple[str, int]]] = {}
    for (vol, lab), y in reference.items():
        by_label.setdefault(lab, []).append((vol, int(y)))
    order = {lab: i for i, lab in enumerate(all_label_ids())}
    labels = sorted(by_label, key=lambda lab: (order.get(lab, len(order)), lab))

    def one(lab: str) -> RocResult:
        items = sorted(by_label[lab])
        y = np.array([v for _, v in items])
        s = np.array([scores[(vol, lab)] for vol, _ in items])
        n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
        if n_pos == 0 or n_neg == 0:
            return _undefined(lab, n_pos, n_neg, method, "undefined")
        if method == DELONG:
            if n_pos < 2 or n_neg < 2:
                return _undefined(lab, n_pos, n_neg, method, "insufficient", auc(s, y))
            return delong_ci(s, y, alpha, label_id=lab)
        return bootstrap_ci(s, y, resamples, alpha, label_seed(seed, lab), label_id=lab)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, labels))
    return [one(lab) for lab in labels]


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6f}"


def write_roc(path, results: Iterable[RocResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "n_pos", "n_neg", "auc", "ci_low", "ci_high", "variance", "method", "flag"])
        for r in results:
            w.writerow([r.label_id, r.n_pos, r.n_neg, _fmt(r.auc), _fmt(r.ci_low), _fmt(r.ci_high),
                        "" if math.isnan(r.variance) else f"{r.variance:.8g}", r.method, r.flag])


def write_agreement(path, rows: Iterable[LabelAgreement]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "no_positive", "accuracy", "f_score", "tp", "fp", "fn", "tn", "flag"])
        for a in rows:
            w.writerow([a.label_id, a.n_positive_reference, f"{a.accuracy:.4f}", f"{a.f_score:.4f}",
                        a.tp, a.fp, a.fn, a.tn, "degenerate" if a.degenerate else ""])


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"volume_id", "label_id", "score"}
        if not need <= set(reader.fieldnames or ()):
            raise MetricsError(f"{path}: predictions need columns {sorted(need)}")
        for rec in reader:
            try:
                score = float(rec["score"])
            except ValueError as exc:
                raise MetricsError(f"{path}:{reader.line_num}: bad score {rec['score']!r}") from exc
            out.append(PredictionRecord(rec["volume_id"], rec["label_id"], score))
    return out
