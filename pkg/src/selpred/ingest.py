"""Readers and writers for logits/labels CSV, manifests, weight files and result CSVs.

Text outputs always use LF newlines; readers accept LF and CRLF. Floats are
written with ``repr`` (shortest round-trip form), so a write/read/write cycle
is byte-stable.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

CKPT_MAGIC = b"SPCK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIII")

CURVE_HEADER = ("threshold", "coverage", "n_retained", "sel_accuracy", "sel_macro_f1", "sel_qwk")
RANK_HEADER = ("rank", "checkpoint_id", "pretrain_epoch", "threshold", "coverage",
               "sel_accuracy", "sel_macro_f1", "sel_qwk")


def _lines(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln[:-1] if ln.endswith("\r") else ln for ln in lines]


def _parse_float(tok, path, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(path, lineno, f"cannot parse number {tok.strip()!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, lineno, f"non-finite value {tok.strip()!r}")
    return v


def format_float(v) -> str:
    return repr(float(v))


def read_logits(path) -> np.ndarray:
    """Read an N x K logits CSV with header ``l0,...,l{K-1}``."""
    lines = _lines(path)
    if not lines:
        raise ParseError(path, 1, "empty file; expected header l0,...,l{K-1}")
    header = [h.strip() for h in lines[0].split(",")]
    k = len(header)
    if header != [f"l{i}" for i in range(k)]:
        raise ParseError(path, 1, f"bad header {lines[0]!r}; expected l0,...,l{k - 1}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ParseError(path, lineno, "blank line")
        toks = line.split(",")
        if len(toks) != k:
            raise ParseError(path, lineno, f"expected {k} values, found {len(toks)}")
        rows.append([_parse_float(t, path, lineno) for t in toks])
    if not rows:
        raise ParseError(path, 2, "no data rows")
    return np.array(rows, dtype=np.float64)


def write_logits(path, logits) -> None:
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[1]
    out = [",".join(f"l{i}" for i in range(k))]
    out.extend(",".join(format_float(v) for v in row) for row in logits)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")


def read_labels(path, n_classes) -> np.ndarray:
    """Single-column integer labels in ``[0, n_classes)``, no header."""
    lines = _lines(path)
    labels = []
    for lineno, line in enumerate(lines, start=1):
        tok = line.strip()
        try:
            v = int(tok, 10)
        except ValueError:
            raise ParseError(path, lineno, f"cannot parse integer label {tok!r}") from None
        if not 0 <= v < n_classes:
            raise ParseError(path, lineno, f"label {v} outside [0, {n_classes})")
        labels.append(v)
    if not labels:
        raise ParseError(path, 1, "empty labels file")
    return np.array(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    body = "".join(f"{int(v)}\n" for v in labels)
    Path(path).write_text(body, encoding="utf-8", newline="\n")


# ------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    checkpoint_id: str
    pretrain_epoch: int
    cal_logits: Path
    cal_labels: Path
    eval_logits: Path
    eval_labels: Path


@dataclass
class Manifest:
    run_id: str
    n_classes: int
    target_coverage: float = 0.70
    checkpoints: list = field(default_factory=list)

    def load_split(self, entry: ManifestEntry, split: str):
        from .calibration import LogitsSet

        logits = read_logits(getattr(entry, f"{split}_logits"))
        labels = read_labels(getattr(entry, f"{split}_labels"), self.n_classes)
        return LogitsSet(logits, labels, self.n_classes)


_ENTRY_KEYS = ("id", "pretrain_epoch", "cal_logits", "cal_labels", "eval_logits", "eval_labels")


def _count_rows(path, kind):
    return len(_lines(path)) - (1 if kind == "logits" else 0)


def read_manifest(path) -> Manifest:
    """Load and validate a JSON manifest; relative paths resolve against its directory.

    Unknown keys are ignored.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    for key in ("run_id", "n_classes", "checkpoints"):
        if key not in raw:
            raise ValidationError(f"{path}: missing key {key!r}")
    k = raw["n_classes"]
    if not isinstance(k, int) or k < 2:
        raise ValidationError(f"{path}: n_classes must be an integer >= 2")
    target = float(raw.get("target_coverage", 0.70))
    if not 0 < target <= 1:
        raise ValidationError(f"{path}: target_coverage must lie in (0, 1]")
    if not isinstance(raw["checkpoints"], list) or not raw["checkpoints"]:
        raise ValidationError(f"{path}: checkpoints must be a non-empty list")

    base = path.parent
    entries, seen = [], set()
    for i, ck in enumerate(raw["checkpoints"]):
        for key in _ENTRY_KEYS:
            if key not in ck:
                raise ValidationError(f"{path}: checkpoints[{i}] missing key {key!r}")
        files = {}
        for key in _ENTRY_KEYS[2:]:
            p = (base / ck[key]).resolve()
            if not p.is_file():
                raise ValidationError(f"{path}: checkpoints[{i}].{key} not found: {p}")
            if p in seen:
                raise ValidationError(f"{path}: checkpoints[{i}].{key} reuses file {p}")
            seen.add(p)
            files[key] = p
        for split in ("cal", "eval"):
            n_logits = _count_rows(files[f"{split}_logits"], "logits")
            n_labels = _count_rows(files[f"{split}_labels"], "labels")
            if n_logits != n_labels:
                raise ValidationError(
                    f"{path}: checkpoints[{i}] {split} split has {n_logits} logit rows "
                    f"but {n_labels} labels"
                )
            with open(files[f"{split}_logits"], encoding="utf-8") as fh:
                n_cols = len(fh.readline().rstrip("\r\n").split(","))
            if n_cols != k:
                raise ValidationError(
                    f"{path}: checkpoints[{i}] {split} logits have {n_cols} columns, "
                    f"n_classes={k}"
                )
        entries.append(ManifestEntry(str(ck["id"]), int(ck["pretrain_epoch"]), **files))
    return Manifest(str(raw["run_id"]), k, target, entries)


def write_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    data = {
        "run_id": manifest.run_id,
        "n_classes": manifest.n_classes,
        "target_coverage": manifest.target_coverage,
        "checkpoints": [
            {
                "id": e.checkpoint_id,
                "pretrain_epoch": e.pretrain_epoch,
                "cal_logits": rel(e.cal_logits),
                "cal_labels": rel(e.cal_labels),
                "eval_logits": rel(e.eval_logits),
                "eval_labels": rel(e.eval_labels),
            }
            for e in manifest.checkpoints
        ],
    }
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8", newline="\n")


# ------------------------------------------------------ checkpoint weights

def write_weights(path, weights) -> None:
    """Binary weights: ``SPCK``, u32 version, u32 rows, u32 cols, f64 LE data."""
    w = np.ascontiguousarray(weights, dtype="<f8")
    if w.ndim != 2:
        raise ValidationError("weights must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, *w.shape))
        fh.write(w.tobytes(order="C"))


def read_weights(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise ValidationError(f"{path}: truncated checkpoint header")
    magic, version, rows, cols = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    payload = data[_CKPT_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise ValidationError(f"{path}: expected {rows * cols} values, found {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


# ------------------------------------------------------------ result CSVs

def fmt_metric(v, digits=None) -> str:
    """Undefined metrics become empty cells."""
    if v is None:
        return ""
    return f"{v:.{digits}f}" if digits is not None else format_float(v)


def write_csv(path, header, rows) -> None:
    out = [",".join(header)]
    out.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")


def write_curve(path, curve) -> None:
    write_csv(path, CURVE_HEADER, (
        [format_float(p.threshold), format_float(p.coverage), str(p.n_retained),
         fmt_metric(p.sel_accuracy), fmt_metric(p.sel_macro_f1), fmt_metric(p.sel_qwk)]
        for p in curve
    ))


def write_rank(path, ranking) -> None:
    rows = []
    for i, e in enumerate(ranking.entries, start=1):
        op = e.operating_point
        rows.append([str(i), e.checkpoint_id, str(e.pretrain_epoch), format_float(op.threshold),
                     format_float(op.coverage), fmt_metric(op.sel_accuracy),
                     fmt_metric(op.sel_macro_f1), fmt_metric(op.sel_qwk)])
    write_csv(path, RANK_HEADER, rows)
