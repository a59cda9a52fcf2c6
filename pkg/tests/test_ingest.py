import json

import numpy as np
import pytest

from selpred.errors import ParseError, ValidationError
from selpred.ingest import (CURVE_HEADER, RANK_HEADER, read_labels, read_logits,
                            read_manifest, read_weights, write_curve, write_labels,
                            write_logits, write_weights)
from selpred.numeric_core import Rng
from selpred.selective import threshold_sweep

from conftest import probs_from_pmax


def test_logits_roundtrip_bytes(tmp_path):
    m = Rng(3).normal((7, 5)) * 1e3
    m[0, 0] = 0.1 + 0.2  # needs all 17 digits
    m[1, 1] = -0.0
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_logits(a, m)
    back = read_logits(a)
    assert back.shape == (7, 5)
    assert back.tobytes() == m.tobytes()
    write_logits(b, back)
    assert a.read_bytes() == b.read_bytes()


def test_logits_crlf_accepted(tmp_path):
    p = tmp_path / "x.csv"
    p.write_bytes(b"l0,l1,l2\r\n1,2,3\r\n4,5,6\r\n")
    np.testing.assert_array_equal(read_logits(p), [[1, 2, 3], [4, 5, 6]])


@pytest.mark.parametrize("body, line", [
    ("l0,l1\n1,2\n1,2,3\n", 3),
    ("l0,l1\n1,2\nNaN,1\n", 3),
    ("l0,l1\n1,inf\n", 2),
    ("l0,l1\n1,abc\n", 2),
    ("a,b\n1,2\n", 1),
    ("", 1),
])
def test_logits_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ParseError) as exc:
        read_logits(p)
    assert exc.value.line == line
    assert f":{line}:" in str(exc.value)


def test_labels(tmp_path):
    p = tmp_path / "y.csv"
    write_labels(p, [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(read_labels(p, 5), [0, 1, 2, 3, 4])
    p.write_text("0\n5\n")
    with pytest.raises(ParseError) as exc:
        read_labels(p, 5)
    assert exc.value.line == 2
    p.write_text("")
    with pytest.raises(ParseError):
        read_labels(p, 5)
    p.write_text("1\nx\n")
    with pytest.raises(ParseError):
        read_labels(p, 5)


def _write_split(d, name, n, k=3):
    write_logits(d / f"{name}-logits.csv", np.zeros((n, k)))
    write_labels(d / f"{name}-labels.csv", [0] * n)


def _manifest(tmp_path, n_cal_labels=10, extra=None):
    ckpts = []
    for ep in (10, 20):
        d = tmp_path / f"ep{ep}"
        d.mkdir()
        _write_split(d, "cal", 10)
        _write_split(d, "eval", 8)
        write_labels(d / "cal-labels.csv", [1] * n_cal_labels)
        ckpts.append({"id": f"ep-{ep}", "pretrain_epoch": ep,
                      "cal_logits": f"ep{ep}/cal-logits.csv", "cal_labels": f"ep{ep}/cal-labels.csv",
                      "eval_logits": f"ep{ep}/eval-logits.csv",
                      "eval_labels": f"ep{ep}/eval-labels.csv", **(extra or {})})
    doc = {"run_id": "r", "n_classes": 3, "target_coverage": 0.7, "checkpoints": ckpts,
           **(extra or {})}
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(doc))
    return p


def test_manifest_loads(tmp_path):
    m = read_manifest(_manifest(tmp_path, extra={"future_key": 1}))
    assert m.run_id == "r" and m.n_classes == 3 and len(m.checkpoints) == 2
    ls = m.load_split(m.checkpoints[1], "eval")
    assert len(ls) == 8


def test_manifest_rejects_n_mismatch(tmp_path):
    with pytest.raises(ValidationError, match="10 logit rows but 9 labels"):
        read_manifest(_manifest(tmp_path, n_cal_labels=9))


def test_manifest_rejects_missing(tmp_path):
    p = _manifest(tmp_path)
    doc = json.loads(p.read_text())
    del doc["checkpoints"][0]["eval_labels"]
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="eval_labels"):
        read_manifest(p)
    doc = json.loads(p.read_text())
    doc.pop("run_id")
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="run_id"):
        read_manifest(p)
    with pytest.raises(ValidationError):
        read_manifest(tmp_path / "nope.json")


def test_manifest_rejects_class_mismatch(tmp_path):
    p = _manifest(tmp_path)
    doc = json.loads(p.read_text())
    doc["n_classes"] = 4
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="columns"):
        read_manifest(p)


def test_weights_roundtrip(tmp_path):
    w = Rng(1).normal((32, 8))
    p = tmp_path / "ep-1.ckpt"
    write_weights(p, w)
    raw = p.read_bytes()
    assert raw[:4] == b"SPCK"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 32
    assert int.from_bytes(raw[12:16], "little") == 8
    assert len(raw) == 16 + 32 * 8 * 8
    np.testing.assert_array_equal(read_weights(p), w)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValidationError):
        read_weights(p)


def test_curve_header_and_undefined(tmp_path):
    p = tmp_path / "curve.csv"
    write_curve(p, threshold_sweep(probs_from_pmax([0.9, 0.6]), [0, 0], 2, [0.0, 1.0]))
    lines = p.read_text().splitlines()
    assert lines[0] == "threshold,coverage,n_retained,sel_accuracy,sel_macro_f1,sel_qwk"
    assert tuple(lines[0].split(",")) == CURVE_HEADER
    assert lines[2] == "1.0,0.0,0,,,"
    assert RANK_HEADER == ("rank", "checkpoint_id", "pretrain_epoch", "threshold", "coverage",
                           "sel_accuracy", "sel_macro_f1", "sel_qwk")
