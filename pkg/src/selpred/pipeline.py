"""Synthetic end-to-end run: SSL pretraining, per-checkpoint heads, selective evaluation.

A linear encoder ``W`` (input_dim x embed_dim) is pretrained on paired
augmented views of ordinal Gaussian clusters. Every saved checkpoint gets a
softmax head trained under the same protocol; its calibration-split logits
fit a temperature and its evaluation-split logits are scored with and
without abstention.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import LogitsSet, ece, fit_temperature, softmax_probs
from .errors import DivergenceError, UsageError, ValidationError
from .ingest import (Manifest, ManifestEntry, fmt_metric, format_float, write_csv,
                     write_curve, write_labels, write_logits, write_manifest, write_rank,
                     write_weights)
from .losses import LOSS_IDS, SicovaWeights, TripletParams, loss_and_gradient
from .numeric_core import Rng
from .report import PlotSpec, emit_risk_coverage_plot, emit_summary_table, series_from_evals
from .selective import (CheckpointEval, accuracy, classwise_acceptance, decide, macro_f1,
                        make_grid, qwk, rank_evaluations, select_operating_point,
                        threshold_sweep)

log = logging.getLogger(__name__)

SPLITS = ("train", "cal", "eval")
_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 5
    samples_per_class: int = 200
    input_dim: int = 32
    class_center_spacing: float = 1.5
    cluster_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise UsageError("n_classes must be >= 2")
        if self.samples_per_class < 5:
            raise UsageError("samples_per_class must be >= 5 for a 60/20/20 split")
        if self.input_dim < 1:
            raise UsageError("input_dim must be >= 1")
        if not self.class_center_spacing > 0:
            raise UsageError("class_center_spacing must be positive")
        if not self.cluster_std > 0:
            raise UsageError("cluster_std must be positive")


@dataclass(frozen=True)
class AugmentSpec:
    noise_std: float = 0.2
    mask_prob: float = 0.1
    shuffle_blocks: int = 1

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise UsageError("noise_std must be >= 0")
        if not 0 <= self.mask_prob < 1:
            raise UsageError("mask_prob must lie in [0, 1)")
        if self.shuffle_blocks < 1:
            raise UsageError("shuffle_blocks must be >= 1")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    splits: dict  # split name -> sorted row indices


@dataclass(frozen=True)
class Checkpoint:
    pretrain_epoch: int
    encoder_weights: np.ndarray
    pretrain_loss: float

    @property
    def checkpoint_id(self):
        return f"ep-{self.pretrain_epoch}"


@dataclass(frozen=True)
class CheckpointRecord:
    checkpoint_id: str
    pretrain_epoch: int
    splits: dict  # "train" / "cal" / "eval" -> LogitsSet


# ------------------------------------------------------------------ data

def generate_dataset(spec: SynthSpec) -> Dataset:
    """Ordinal Gaussian clusters with centers ``k * spacing * u`` on a random line.

    Each class is split 60/20/20 into train/cal/eval after a seeded shuffle.
    """
    rng = Rng(spec.seed)
    direction = rng.split(1).normal(spec.input_dim)
    direction /= np.linalg.norm(direction)
    centers = np.outer(np.arange(spec.n_classes) * spec.class_center_spacing, direction)
    centers -= centers.mean(axis=0)
    n = spec.samples_per_class
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), n)
    noise = rng.split(2).normal((labels.shape[0], spec.input_dim), scale=spec.cluster_std)
    features = centers[labels] + noise

    n_train = int(round(_SPLIT_FRACTIONS[0] * n))
    n_cal = int(round(_SPLIT_FRACTIONS[1] * n))
    parts = {s: [] for s in SPLITS}
    for k in range(spec.n_classes):
        idx = k * n + rng.split(3, k).permutation(n)
        parts["train"].append(idx[:n_train])
        parts["cal"].append(idx[n_train:n_train + n_cal])
        parts["eval"].append(idx[n_train + n_cal:])
    splits = {s: np.sort(np.concatenate(v)) for s, v in parts.items()}
    return Dataset(features, labels, splits)


def make_views_batch(x, aug: AugmentSpec, rng: Rng):
    """Two independent augmentations of every row of ``x``.

    Per view: permute ``shuffle_blocks`` equal coordinate blocks, zero each
    coordinate with probability ``mask_prob``, add Gaussian noise.
    """
    x = np.asarray(x, dtype=np.float64)
    n, dim = x.shape
    if dim % aug.shuffle_blocks:
        raise UsageError(f"input_dim {dim} is not divisible by shuffle_blocks={aug.shuffle_blocks}")
    views = []
    for v in range(2):
        r = rng.split(v).generator
        out = x
        if aug.shuffle_blocks > 1:
            b = aug.shuffle_blocks
            perm = np.argsort(r.random((n, b)), axis=1)
            blocks = x.reshape(n, b, dim // b)
            out = np.take_along_axis(blocks, perm[:, :, None], axis=1).reshape(n, dim)
        if aug.mask_prob > 0:
            out = out * (r.random((n, dim)) >= aug.mask_prob)
        if aug.noise_std > 0:
            out = out + r.normal(0.0, aug.noise_std, (n, dim))
        views.append(np.array(out, dtype=np.float64))
    return views[0], views[1]


def make_views(x, aug: AugmentSpec, rng: Rng):
    v1, v2 = make_views_batch(np.asarray(x, dtype=np.float64)[None, :], aug, rng)
    return v1[0], v2[0]


# ------------------------------------------------------------ pretraining

def encoder_loss_and_grad(w, v1, v2, loss_id, params):
    """Loss of ``(v1 @ w, v2 @ w)`` and its gradient w.r.t. ``w``."""
    z, zp = v1 @ w, v2 @ w
    value, g = loss_and_gradient(loss_id, z, zp, params)
    return value, v1.T @ g.d_z + v2.T @ g.d_zp


def checkpoint_epochs(epochs, checkpoint_every):
    eps = list(range(checkpoint_every, epochs + 1, checkpoint_every))
    if not eps or eps[-1] != epochs:
        eps.append(epochs)
    return eps


def pretrain(features, loss_id, params, aug: AugmentSpec, epochs, checkpoint_every,
             lr, batch, seed, embed_dim=8):
    """Mini-batch gradient descent on the encoder; returns saved checkpoints.

    The loss stored with a checkpoint is the mean mini-batch loss of that
    epoch, measured before each batch's update.
    """
    if loss_id not in LOSS_IDS:
        raise UsageError(f"unknown loss {loss_id!r}")
    if not epochs >= checkpoint_every >= 1:
        raise UsageError("need epochs >= checkpoint_every >= 1")
    if lr < 0:
        raise UsageError("lr must be >= 0")
    if batch < 2:
        raise UsageError("batch must be >= 2")
    x = np.asarray(features, dtype=np.float64)
    n, dim = x.shape
    root = Rng(seed)
    w = root.split(0).normal((dim, embed_dim), scale=1.0 / np.sqrt(dim))
    save = set(checkpoint_epochs(epochs, checkpoint_every))
    out = []
    for epoch in range(1, epochs + 1):
        erng = root.split(1, epoch)
        order = erng.split(0).permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, batch)):
            idx = order[start:start + batch]
            if idx.shape[0] < 2:
                continue
            v1, v2 = make_views_batch(x[idx], aug, erng.split(1, bi))
            with np.errstate(over="ignore", invalid="ignore"):
                value, dw = encoder_loss_and_grad(w, v1, v2, loss_id, params)
            if not np.isfinite(value) or not np.all(np.isfinite(dw)):
                raise DivergenceError("pretraining", epoch, value)
            losses.append(value)
            w = w - lr * dw
        if not np.all(np.isfinite(w)):
            raise DivergenceError("pretraining", epoch)
        if epoch in save:
            out.append(Checkpoint(epoch, w.copy(), float(np.mean(losses))))
    return out


# -------------------------------------------------------------- fine-tune

def _head_inputs(w, features, train_idx):
    e = features @ w
    mu = e[train_idx].mean(axis=0)
    sd = e[train_idx].std(axis=0)
    return (e - mu) / np.where(sd > 1e-12, sd, 1.0)


def finetune_head(ckpt: Checkpoint, features, labels, splits, n_classes, head_epochs=300,
                  lr=0.5, seed=0) -> CheckpointRecord:
    """Softmax-regression head on frozen, train-standardized embeddings.

    The head starts at zero and takes full-batch gradient steps on the mean
    cross-entropy of the train split, so the result depends only on the
    encoder weights and hyperparameters; ``seed`` is accepted for interface
    symmetry with the pretrainer.
    """
    del seed
    if head_epochs < 0 or lr < 0:
        raise UsageError("head_epochs and lr must be >= 0")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    tr = splits["train"]
    h = _head_inputs(ckpt.encoder_weights, features, tr)
    ht, yt = h[tr], labels[tr]
    onehot = np.eye(n_classes)[yt]
    a = np.zeros((h.shape[1], n_classes))
    b = np.zeros(n_classes)
    m = ht.shape[0]
    for epoch in range(1, head_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            z = ht @ a + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / m
        a = a - lr * (ht.T @ g)
        b = b - lr * g.sum(axis=0)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DivergenceError("fine-tuning", epoch)
    logits = h @ a + b
    sets = {s: LogitsSet(logits[splits[s]], labels[splits[s]], n_classes) for s in SPLITS}
    return CheckpointRecord(ckpt.checkpoint_id, ckpt.pretrain_epoch, sets)


# ------------------------------------------------------------- experiment

@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthSpec = SynthSpec()
    augment: AugmentSpec = AugmentSpec()
    loss: str = "sicova"
    sicova: SicovaWeights = SicovaWeights()
    triplet: TripletParams = TripletParams()
    embed_dim: int = 8
    epochs: int = 200
    checkpoint_every: int = 20
    lr: float = 0.002
    batch: int = 200
    head_epochs: int = 300
    head_lr: float = 0.5
    target_coverage: float = 0.70
    grid_step: float = 0.01
    thresholds: Optional[tuple] = None  # explicit grid, overrides grid_step
    seed: int = 0
    output_dir: str = "runs/default"
    run_id: str = "synth"

    def __post_init__(self):
        if self.loss not in LOSS_IDS:
            raise UsageError(f"loss must be one of {LOSS_IDS}")
        if not 0 < self.target_coverage <= 1:
            raise UsageError("target_coverage must lie in (0, 1]")
        if self.embed_dim < 1:
            raise UsageError("embed_dim must be >= 1")

    @property
    def loss_params(self):
        return self.sicova if self.loss == "sicova" else self.triplet

    def grid(self):
        if self.thresholds is not None:
            return np.asarray(self.thresholds, dtype=np.float64)
        return make_grid(self.grid_step)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        nested = {"synth": SynthSpec, "augment": AugmentSpec,
                  "sicova": SicovaWeights, "triplet": TripletParams}
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                log.warning("ignoring unknown config key %r", key)
                continue
            if key in nested:
                if not isinstance(value, dict):
                    raise ValidationError(f"config section {key!r} must be an object")
                sub = {f.name for f in fields(nested[key])}
                unknown = set(value) - sub
                if unknown:
                    raise ValidationError(f"unknown keys in {key!r}: {sorted(unknown)}")
                value = nested[key](**value)
            elif key == "thresholds" and value is not None:
                value = tuple(float(t) for t in value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["thresholds"] is not None:
            d["thresholds"] = list(d["thresholds"])
        return d


def load_config(path=None) -> ExperimentConfig:
    """Read a JSON experiment config; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("selpred").joinpath("data/default_config.json").read_text()
        source = "<bundled default>"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ValidationError(f"config not found: {path}") from None
        source = str(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{source}: config must be a JSON object")
    return ExperimentConfig.from_dict(raw)


@dataclass
class CheckpointResult:
    checkpoint: Checkpoint
    record: CheckpointRecord
    evaluation: CheckpointEval
    nll_cal: float
    ece_raw: float
    ece_cal: float
    accuracy: float
    macro_f1: float
    qwk: Optional[float]
    classwise: object = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: list = field(default_factory=list)
    ranking: object = None
    output_dir: Optional[Path] = None


def evaluate_record(ckpt, record, cfg: ExperimentConfig) -> CheckpointResult:
    cal, ev = record.splits["cal"], record.splits["eval"]
    fit = fit_temperature(cal)
    probs = softmax_probs(ev.logits, fit.temperature)
    curve = threshold_sweep(probs, ev.labels, ev.n_classes, cfg.grid())
    op = select_operating_point(curve, cfg.target_coverage)
    full = decide(probs, 0.0)
    evaluation = CheckpointEval(record.checkpoint_id, record.pretrain_epoch,
                                fit.temperature, curve, op)
    return CheckpointResult(
        checkpoint=ckpt,
        record=record,
        evaluation=evaluation,
        nll_cal=fit.nll,
        ece_raw=ece(softmax_probs(ev.logits, 1.0), ev.labels),
        ece_cal=ece(probs, ev.labels),
        accuracy=accuracy(full.predictions, ev.labels),
        macro_f1=macro_f1(full.predictions, ev.labels, ev.n_classes),
        qwk=qwk(full.predictions, ev.labels, ev.n_classes),
        classwise=classwise_acceptance(ev.labels, decide(probs, op.threshold), ev.n_classes),
    )


def run_experiment(cfg: ExperimentConfig, output_dir=None, jobs=1) -> ExperimentResult:
    """Pretrain, fine-tune and evaluate every checkpoint; write the run directory.

    Layout under the output directory::

        checkpoints/ep-<n>.ckpt
        records/ep-<n>/{train,cal,eval}-{logits,labels}.csv
        manifest.json
        results/{summary,rank,checkpoints,classwise}.csv
        results/curves/ep-<n>.csv
        results/risk_coverage.svg
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    data = generate_dataset(cfg.synth)
    train_x = data.features[data.splits["train"]]
    log.info("pretraining %s for %d epochs", cfg.loss, cfg.epochs)
    ckpts = pretrain(train_x, cfg.loss, cfg.loss_params, cfg.augment, cfg.epochs,
                     cfg.checkpoint_every, cfg.lr, cfg.batch, cfg.seed, cfg.embed_dim)

    def task(ckpt):
        rec = finetune_head(ckpt, data.features, data.labels, data.splits,
                            cfg.synth.n_classes, cfg.head_epochs, cfg.head_lr,
                            seed=cfg.seed + ckpt.pretrain_epoch)
        return evaluate_record(ckpt, rec, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(task, ckpts))
    else:
        results = [task(c) for c in ckpts]

    ranking = rank_evaluations([r.evaluation for r in results])
    result = ExperimentResult(cfg, results, ranking, out)
    write_run(result)
    return result


def write_run(result: ExperimentResult) -> None:
    out = result.output_dir
    cfg = result.config
    for sub in ("checkpoints", "records", "results/curves"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    # output_dir is left out so that reruns into different directories match
    snapshot = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8", newline="\n")
    entries = []
    for r in result.results:
        cid = r.record.checkpoint_id
        write_weights(out / "checkpoints" / f"{cid}.ckpt", r.checkpoint.encoder_weights)
        rdir = out / "records" / cid
        rdir.mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            ls = r.record.splits[split]
            write_logits(rdir / f"{split}-logits.csv", ls.logits)
            write_labels(rdir / f"{split}-labels.csv", ls.labels)
        entries.append(ManifestEntry(cid, r.record.pretrain_epoch,
                                     rdir / "cal-logits.csv", rdir / "cal-labels.csv",
                                     rdir / "eval-logits.csv", rdir / "eval-labels.csv"))
        write_curve(out / "results" / "curves" / f"{cid}.csv", r.evaluation.curve)
    write_manifest(out / "manifest.json",
                   Manifest(cfg.run_id, cfg.synth.n_classes, cfg.target_coverage, entries))

    res = out / "results"
    write_rank(res / "rank.csv", result.ranking)
    emit_summary_table(result.ranking, res / "summary.csv", method=cfg.loss)
    evals = [r.evaluation for r in result.results]
    if all(len(e.curve) >= 2 for e in evals):
        emit_risk_coverage_plot(series_from_evals(evals), res / "risk_coverage.svg",
                                PlotSpec(title=f"{cfg.loss}: selective macro-F1 vs coverage"))
    else:
        log.warning("threshold grid has a single value; skipping risk_coverage.svg")

    rows = []
    for r in result.results:
        op = r.evaluation.operating_point
        rows.append([r.record.checkpoint_id, str(r.record.pretrain_epoch),
                     format_float(r.checkpoint.pretrain_loss),
                     format_float(r.evaluation.temperature), format_float(r.nll_cal),
                     format_float(r.ece_raw), format_float(r.ece_cal),
                     fmt_metric(r.accuracy), fmt_metric(r.macro_f1), fmt_metric(r.qwk),
                     format_float(op.threshold), format_float(op.coverage),
                     fmt_metric(op.sel_accuracy), fmt_metric(op.sel_macro_f1),
                     fmt_metric(op.sel_qwk)])
    write_csv(res / "checkpoints.csv",
              ("checkpoint_id", "pretrain_epoch", "pretrain_loss", "temperature", "nll_cal",
               "ece_raw", "ece_cal", "accuracy", "macro_f1", "qwk", "threshold", "coverage",
               "sel_accuracy", "sel_macro_f1", "sel_qwk"), rows)

    cw_rows = []
    for r in result.results:
        for k, n_tot, n_ret, rate, rec in r.classwise.rows():
            cw_rows.append([r.record.checkpoint_id, str(k), str(n_tot), str(n_ret),
                            fmt_metric(rate), fmt_metric(rec)])
    write_csv(res / "classwise.csv",
              ("checkpoint_id", "class", "n_total", "n_retained", "acceptance_rate",
               "retained_recall"), cw_rows)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
