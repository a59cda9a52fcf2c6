"""Temperature scaling: fit one scalar T on a calibration split by NLL."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError, ValidationError
from .numeric_core import as_matrix

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LogitsSet:
    logits: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        logits = as_matrix(self.logits, "logits")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
            raise DimensionError(
                f"labels length {labels.shape} does not match {logits.shape[0]} logit rows"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            if labels.size and not np.all(labels == np.round(labels)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.int64)
        if logits.shape[1] != self.n_classes:
            raise DimensionError(
                f"logits have {logits.shape[1]} columns but n_classes={self.n_classes}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.logits.shape[0]


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll: float
    clamped: bool
    n: int

    def as_record(self) -> dict:
        return {
            "temperature": self.temperature,
            "nll": self.nll,
            "clamped": self.clamped,
            "n": self.n,
        }


def softmax_probs(logits, temperature=1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / T`` with max subtraction."""
    if not temperature > 0:
        raise UsageError(f"temperature must be positive, got {temperature}")
    x = as_matrix(logits, "logits") / temperature
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits, temperature):
    x = logits / temperature
    x = x - x.max(axis=1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def nll(ls: LogitsSet, temperature=1.0) -> float:
    if not temperature > 0:
        raise UsageError(f"temperature must be positive, got {temperature}")
    if len(ls) == 0:
        raise UsageError("nll of an empty logits set")
    logp = _log_softmax(ls.logits, temperature)
    return float(-np.mean(logp[np.arange(len(ls)), ls.labels]))


def fit_temperature(ls: LogitsSet, t_min=0.05, t_max=10.0, tol=1e-4) -> TemperatureFit:
    """Golden-section search for the NLL-minimizing temperature in log space.

    The returned point is the best of the golden-section estimate and the two
    bounds; ``clamped`` is set when that point is a bound. A flat objective
    (e.g. every row uniform) returns ``T = 1``.
    """
    if not 0 < t_min < t_max:
        raise UsageError("need 0 < t_min < t_max")
    if not tol > 0:
        raise UsageError("tol must be positive")
    if len(ls) == 0:
        raise UsageError("cannot fit a temperature on an empty set")

    def f(log_t):
        return nll(ls, math.exp(log_t))

    lo, hi = math.log(t_min), math.log(t_max)
    f_lo, f_hi = f(lo), f(hi)
    if 1.0 >= t_min and 1.0 <= t_max:
        f_one = f(0.0)
        if max(f_lo, f_hi, f_one) - min(f_lo, f_hi, f_one) <= 1e-12 * max(1.0, abs(f_one)):
            return TemperatureFit(1.0, f_one, False, len(ls))

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    log_t = 0.5 * (a + b)
    best = (f(log_t), log_t, False)
    for edge, f_edge in ((lo, f_lo), (hi, f_hi)):
        if f_edge <= best[0]:
            best = (f_edge, edge, True)
    f_best, log_t, clamped = best
    t = t_min if log_t == lo else t_max if log_t == hi else math.exp(log_t)
    return TemperatureFit(t, f_best, clamped, len(ls))


def ece(probs, labels, n_bins=15) -> float:
    """Expected calibration error over equal-width bins of the top probability.

    Bins are right-closed, ``(i/n, (i+1)/n]``, with confidence 0 placed in
    the first bin; empty bins contribute nothing.
    """
    if n_bins < 1:
        raise UsageError("n_bins must be >= 1")
    p = as_matrix(probs, "probs")
    labels = np.asarray(labels, dtype=np.int64)
    if p.shape[0] == 0:
        return 0.0
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == labels).astype(np.float64)
    bins = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = bins == b
        cnt = int(sel.sum())
        if cnt:
            total += cnt * abs(correct[sel].mean() - conf[sel].mean())
    return float(total / p.shape[0])
