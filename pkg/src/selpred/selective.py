"""Confidence-threshold abstention and metrics on the retained set.

Every metric goes through a K x K confusion matrix (rows = true label,
columns = prediction) restricted to the retained samples. A metric that is
undefined on that set (nothing retained, or a degenerate QWK) is ``None``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .calibration import LogitsSet, fit_temperature, softmax_probs
from .errors import UsageError
from .numeric_core import as_matrix

DEFAULT_TARGET_COVERAGE = 0.70
DEFAULT_GRID_STEP = 0.01
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class AbstainDecision:
    predictions: np.ndarray
    p_max: np.ndarray
    retained: np.ndarray
    threshold: float

    @property
    def coverage(self) -> float:
        return float(self.retained.mean()) if self.retained.size else 0.0


@dataclass(frozen=True)
class RiskCoveragePoint:
    threshold: float
    coverage: float
    n_retained: int
    sel_accuracy: Optional[float]
    sel_macro_f1: Optional[float]
    sel_qwk: Optional[float]


@dataclass(frozen=True)
class OperatingPoint:
    point: RiskCoveragePoint
    target_coverage: float

    def __getattr__(self, name):
        # expose the point's fields directly (op.coverage, op.threshold, ...)
        if name in RiskCoveragePoint.__dataclass_fields__:
            return getattr(self.point, name)
        raise AttributeError(name)


@dataclass(frozen=True)
class ClasswiseAcceptance:
    n_total: np.ndarray
    n_retained: np.ndarray
    acceptance_rate: list
    retained_recall: list

    def rows(self):
        for k in range(len(self.n_total)):
            yield k, int(self.n_total[k]), int(self.n_retained[k]), \
                self.acceptance_rate[k], self.retained_recall[k]


def make_grid(step=DEFAULT_GRID_STEP) -> np.ndarray:
    """Thresholds ``0, step, ..., 1``; ``1/step`` must be a whole number.

    Values are formed as ``i / n`` so that e.g. 0.51 is the same double as
    the literal ``0.51``.
    """
    if not 0 < step <= 1:
        raise UsageError("grid step must lie in (0, 1]")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise UsageError(f"grid step {step} does not divide 1 evenly")
    return np.arange(n + 1) / n


def decide(probs, threshold) -> AbstainDecision:
    """Predict the argmax class; retain iff its probability is >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold must lie in [0, 1], got {threshold}")
    p = as_matrix(probs, "probs")
    preds = np.argmax(p, axis=1).astype(np.int64)  # first max wins ties
    p_max = p[np.arange(p.shape[0]), preds]
    return AbstainDecision(preds, p_max, p_max >= threshold, float(threshold))


def _mask(mask, n):
    if mask is None:
        return np.ones(n, dtype=bool)
    return np.asarray(mask, dtype=bool)


# ------------------------------------------------- metrics from a confusion

def accuracy_from_confusion(cm) -> Optional[float]:
    n = cm.sum()
    if n == 0:
        return None
    return float(np.trace(cm) / n)


def macro_f1_from_confusion(cm, exclude_absent=True) -> Optional[float]:
    if cm.sum() == 0:
        return None
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    if exclude_absent:
        present = denom > 0
        return float(f1[present].mean())
    return float(f1.mean())


def qwk_from_confusion(cm) -> Optional[float]:
    """Quadratic weighted kappa, correctly rounded.

    With integer counts, ``1 - sum(W*O) / sum(W*E)`` reduces to
    ``(b - a) / b`` over integers (the ``1/(K-1)^2`` weight scale cancels and
    ``E = outer(rows, cols) / n`` is scaled by ``n``), so a single final
    division gives the nearest double to the exact value.
    """
    k = cm.shape[0]
    n = int(cm.sum())
    if n == 0:
        return None
    idx = np.arange(k)
    w = (idx[:, None] - idx[None, :]) ** 2
    obs = np.asarray(cm, dtype=np.int64)
    a = n * int(np.sum(w * obs))
    b = int(np.sum(w * np.outer(obs.sum(axis=1), obs.sum(axis=0))))
    if b == 0:
        return 1.0 if a == 0 else None
    return (b - a) / b


# --------------------------------------------------------- public metrics

def _confusion(preds, labels, n_classes, mask):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    return kernels.confusion_matrix(labels, preds, _mask(mask, labels.shape[0]), n_classes)


def accuracy(preds, labels, mask=None) -> Optional[float]:
    """Fraction correct among retained samples; ``None`` if none retained."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    m = _mask(mask, labels.shape[0])
    if not m.any():
        return None
    return float(np.mean(preds[m] == labels[m]))


def macro_f1(preds, labels, n_classes, mask=None, exclude_absent=True) -> Optional[float]:
    """Unweighted mean of per-class F1 over the retained set.

    With ``exclude_absent`` (default) a class that is neither a true label
    nor a prediction among retained samples is left out of the mean;
    otherwise it counts as F1 = 0.
    """
    return macro_f1_from_confusion(_confusion(preds, labels, n_classes, mask), exclude_absent)


def qwk(preds, labels, n_classes, mask=None) -> Optional[float]:
    """Quadratic weighted kappa on the retained set."""
    if n_classes < 2:
        raise UsageError("qwk needs at least two classes")
    return qwk_from_confusion(_confusion(preds, labels, n_classes, mask))


# ------------------------------------------------------------- sweeping

def _point(threshold, cm, n_total, exclude_absent):
    n_ret = int(cm.sum())
    return RiskCoveragePoint(
        threshold=float(threshold),
        coverage=n_ret / n_total if n_total else 0.0,
        n_retained=n_ret,
        sel_accuracy=accuracy_from_confusion(cm),
        sel_macro_f1=macro_f1_from_confusion(cm, exclude_absent),
        sel_qwk=qwk_from_confusion(cm),
    )


def threshold_sweep(probs, labels, n_classes, grid=None, exclude_absent=True):
    """One :class:`RiskCoveragePoint` per threshold of an ascending grid."""
    grid = make_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise UsageError("threshold grid is empty")
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > 1:
        raise UsageError("threshold grid must be ascending within [0, 1]")
    d = decide(probs, 0.0)
    labels = np.asarray(labels, dtype=np.int64)
    cms = kernels.sweep_confusion(d.p_max, labels, d.predictions, grid, n_classes)
    n = labels.shape[0]
    return [_point(t, cm, n, exclude_absent) for t, cm in zip(grid, cms)]


def select_operating_point(curve: Sequence[RiskCoveragePoint],
                           target=DEFAULT_TARGET_COVERAGE) -> OperatingPoint:
    """Point with coverage closest to ``target``.

    Distances within 1e-12 count as ties, resolved toward higher coverage and
    then toward the lower threshold.
    """
    if not curve:
        raise UsageError("empty risk-coverage curve")
    best = None
    for p in curve:
        dist = abs(p.coverage - target)
        if best is None:
            best, best_dist = p, dist
            continue
        if dist < best_dist - _TIE_EPS:
            best, best_dist = p, dist
        elif abs(dist - best_dist) <= _TIE_EPS:
            if p.coverage > best.coverage or (
                p.coverage == best.coverage and p.threshold < best.threshold
            ):
                best, best_dist = p, min(dist, best_dist)
    return OperatingPoint(best, float(target))


def classwise_acceptance(labels, decision: AbstainDecision, n_classes) -> ClasswiseAcceptance:
    labels = np.asarray(labels, dtype=np.int64)
    kept = decision.retained
    n_total = np.bincount(labels, minlength=n_classes)
    n_ret = np.bincount(labels[kept], minlength=n_classes)
    correct = np.bincount(
        labels[kept & (decision.predictions == labels)], minlength=n_classes
    )
    rate = [float(r / t) if t else None for r, t in zip(n_ret, n_total)]
    recall = [float(c / r) if r else None for c, r in zip(correct, n_ret)]
    assert n_ret.sum() == kept.sum()
    return ClasswiseAcceptance(n_total, n_ret, rate, recall)


# ------------------------------------------------------------- ranking

@dataclass(frozen=True)
class CheckpointEval:
    checkpoint_id: str
    pretrain_epoch: int
    temperature: float
    curve: list
    operating_point: OperatingPoint


@dataclass
class Ranking:
    entries: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # (CheckpointEval, reason)


def evaluate_checkpoint(checkpoint_id, pretrain_epoch, cal: LogitsSet, ev: LogitsSet,
                        target=DEFAULT_TARGET_COVERAGE, grid=None,
                        exclude_absent=True) -> CheckpointEval:
    """Fit T on ``cal``, sweep thresholds on calibrated ``ev`` probabilities."""
    fit = fit_temperature(cal)
    probs = softmax_probs(ev.logits, fit.temperature)
    curve = threshold_sweep(probs, ev.labels, ev.n_classes, grid, exclude_absent)
    return CheckpointEval(str(checkpoint_id), int(pretrain_epoch), fit.temperature,
                          curve, select_operating_point(curve, target))


def rank_evaluations(evals: Sequence[CheckpointEval]) -> Ranking:
    """Sort by selective macro-F1 desc, then selective accuracy desc, then epoch asc."""
    ranking = Ranking()
    ok = []
    for e in evals:
        op = e.operating_point
        if op.sel_macro_f1 is None or op.sel_accuracy is None:
            ranking.excluded.append((e, "no retained samples at the operating point"))
        else:
            ok.append(e)
    ranking.entries = sorted(
        ok,
        key=lambda e: (-e.operating_point.sel_macro_f1,
                       -e.operating_point.sel_accuracy,
                       e.pretrain_epoch),
    )
    return ranking


def rank_checkpoints(records, target_coverage=DEFAULT_TARGET_COVERAGE, grid=None,
                     exclude_absent=True) -> Ranking:
    """Calibrate each record on its own calibration split, then rank.

    ``records`` are objects with ``checkpoint_id``, ``pretrain_epoch`` and a
    ``splits`` mapping holding ``"cal"`` and ``"eval"`` :class:`LogitsSet`.
    """
    evals = [
        evaluate_checkpoint(r.checkpoint_id, r.pretrain_epoch, r.splits["cal"],
                            r.splits["eval"], target_coverage, grid, exclude_absent)
        for r in records
    ]
    return rank_evaluations(evals)
