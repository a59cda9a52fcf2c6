"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line (visible with ``pytest -s``
or ``-rA``) and then asserts the same condition.
"""
import csv
import math
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from selpred.calibration import LogitsSet, fit_temperature, softmax_probs
from selpred.gradcheck import gradcheck_suite
from selpred.ingest import CURVE_HEADER, RANK_HEADER, read_logits, write_logits
from selpred.errors import ParseError
from selpred.losses import (covariance_loss, cross_correlation,
                            invariance_loss, triplet_loss, variance_loss)
from selpred.numeric_core import Rng
from selpred.selective import (accuracy, macro_f1, make_grid, qwk, select_operating_point,
                               threshold_sweep)

from conftest import probs_from_pmax
from oracles import qwk_brute
from test_selective import divergence_instance


def verdict(number, name, checks):
    """Print one line for the criterion and return whether every check held."""
    failed = [label for label, ok in checks if not ok]
    status = "PASS" if not failed else "FAIL"
    detail = "" if not failed else "  failed: " + "; ".join(failed)
    print(f"\n{status} criterion {number}: {name}{detail}")
    return not failed


def test_criterion_1_gradient_oracle():
    t0 = time.perf_counter()
    err_sicova = gradcheck_suite("sicova", n_pairs=100, n=8, d=4, seed=0, h=1e-5)
    err_triplet = gradcheck_suite("triplet", n_pairs=100, n=8, d=4, seed=0, h=1e-5)
    elapsed = time.perf_counter() - t0
    ok = verdict(1, "gradient oracle", [
        (f"sicova max rel err {err_sicova:.3g} < 1e-6", err_sicova < 1e-6),
        (f"triplet max rel err {err_triplet:.3g} < 1e-6", err_triplet < 1e-6),
        (f"runtime {elapsed:.2f}s < 10s", elapsed < 10),
    ])
    assert ok


def test_criterion_2_loss_identities():
    z = Rng(2).normal((16, 6))
    c = cross_correlation(z, z)
    diag = float(np.sum((1.0 - np.diag(c)) ** 2))
    var0 = variance_loss(np.zeros((2, 2)), gamma=1.0, eps_var=1e-4)
    cov = covariance_loss(np.array([[1.0, 1.0], [-1.0, -1.0]]))
    trip = triplet_loss(np.array([[0.0, 0.0], [1.0, 0.0]]),
                        np.array([[0.0, 0.0], [0.5, 0.0]]), margin=1.0)
    ok = verdict(2, "loss identities", [
        ("invariance_loss(z, z) == 0", invariance_loss(z, z) == 0.0),
        (f"correlation diagonal {diag:.3g} < 1e-10", diag < 1e-10),
        (f"variance_loss(zeros) {var0!r} == 0.99", abs(var0 - 0.99) <= 1e-12),
        (f"covariance_loss {cov!r} == 1.0", abs(cov - 1.0) <= 1e-12),
        (f"triplet example {trip!r} == 0.5", abs(trip - 0.5) <= 1e-12),
    ])
    assert ok


def test_criterion_3_calibration_closed_form():
    fit = fit_temperature(LogitsSet(np.array([[1.0, 0.0]] * 3), np.array([0, 0, 1]), 2))
    target = 1.0 / math.log(2.0)
    r = Rng(3).generator
    logits = r.normal(size=(1000, 5)) * 3
    labels = r.integers(0, 5, 1000)
    t = fit_temperature(LogitsSet(logits, labels, 5)).temperature
    same = np.array_equal(np.argmax(logits, axis=1), np.argmax(softmax_probs(logits, t), axis=1))
    ok = verdict(3, "calibration closed form", [
        (f"T {fit.temperature:.6f} == 1/ln2 +- 1e-3", abs(fit.temperature - target) <= 1e-3),
        ("argmax unchanged on 1000 rows", same),
    ])
    assert ok


def test_criterion_4_metric_oracles():
    root = Rng(4)
    mismatches = 0
    for trial in range(200):
        r = root.split(trial).generator
        k = int(r.integers(2, 8))
        n = int(r.integers(1, 51))
        y, p = r.integers(0, k, n), r.integers(0, k, n)
        if qwk(p, y, k) != qwk_brute(y.tolist(), p.tolist(), k):
            mismatches += 1
    hand_qwk = qwk([0, 1, 1], [0, 1, 2], 3)
    hand_f1 = macro_f1([0, 1, 1], [0, 1, 2], 3)
    ok = verdict(4, "metric oracles", [
        (f"QWK == brute force on 200 instances ({mismatches} mismatches)", mismatches == 0),
        (f"QWK hand case {hand_qwk!r} == 8/9", abs(hand_qwk - 8 / 9) <= 1e-12),
        (f"macro-F1 hand case {hand_f1!r} == 5/9", abs(hand_f1 - 5 / 9) <= 1e-12),
    ])
    assert ok


def test_criterion_5_selective_semantics():
    root = Rng(5)
    tau0_ok = monotone = True
    grid = make_grid(0.01)
    for trial in range(50):
        r = root.split(trial).generator
        k = int(r.integers(2, 6))
        logits = r.normal(size=(60, k)) * 2
        labels = r.integers(0, k, 60)
        probs = softmax_probs(logits)
        preds = np.argmax(probs, axis=1)
        curve = threshold_sweep(probs, labels, k, grid)
        first = curve[0]
        tau0_ok &= (first.threshold == 0.0 and first.coverage == 1.0
                    and first.sel_accuracy == accuracy(preds, labels)
                    and first.sel_macro_f1 == macro_f1(preds, labels, k)
                    and first.sel_qwk == qwk(preds, labels, k))
        cov = [p.coverage for p in curve]
        monotone &= len(cov) == 101 and all(a >= b for a, b in zip(cov, cov[1:]))
    four = threshold_sweep(probs_from_pmax([0.9, 0.8, 0.6, 0.5]), [0, 0, 0, 0], 2, grid)
    op = select_operating_point(four, 0.70)
    ok = verdict(5, "selective-prediction semantics", [
        ("tau=0 equals unmasked metrics", tau0_ok),
        ("coverage non-increasing on the 101-point grid", monotone),
        (f"operating point coverage {op.coverage} at tau {op.threshold}",
         op.coverage == 0.75 and op.threshold == 0.51),
    ])
    assert ok


def test_criterion_6_accuracy_vs_macro_f1():
    probs, labels = divergence_instance()
    full, sel = threshold_sweep(probs, labels, 3, [0.0, 0.9])
    ok = verdict(6, "accuracy rises under rejection while macro-F1 does not", [
        (f"accuracy {sel.sel_accuracy:.4f} > {full.sel_accuracy:.4f}",
         sel.sel_accuracy > full.sel_accuracy),
        (f"macro-F1 {sel.sel_macro_f1:.4f} <= {full.sel_macro_f1:.4f}",
         sel.sel_macro_f1 <= full.sel_macro_f1),
    ])
    assert ok


def _synth_cmd():
    exe = shutil.which("selpred")
    return [exe] if exe else [sys.executable, "-m", "selpred.cli"]


def test_criterion_7_end_to_end(tmp_path):
    runs, times = [], []
    for name in ("a", "b"):
        out = tmp_path / name
        t0 = time.perf_counter()
        res = subprocess.run(_synth_cmd() + ["synth", "--out", str(out)],
                             capture_output=True, text=True)
        times.append(time.perf_counter() - t0)
        assert res.returncode == 0, res.stderr
        runs.append(out)
    files_a = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    identical = files_a == files_b and all(
        (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes() for f in files_a)

    with open(runs[0] / "results" / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    with open(runs[0] / "results" / "rank.csv", newline="") as fh:
        rank = list(csv.DictReader(fh))
    keys = [(-float(r["sel_macro_f1"]), -float(r["sel_accuracy"]), int(r["pretrain_epoch"]))
            for r in rank]
    curves_ok = True
    for r in rank:
        with open(runs[0] / "results" / "curves" / f"{r['checkpoint_id']}.csv", newline="") as fh:
            cov = [float(c["coverage"]) for c in csv.DictReader(fh)]
        best = min(abs(c - 0.70) for c in cov)
        curves_ok &= abs(abs(float(r["coverage"]) - 0.70) - best) <= 1e-12

    ok = verdict(7, "end-to-end synth protocol", [
        (f"runtime {max(times):.1f}s < 120s", max(times) < 120),
        ("byte-identical reruns", identical),
        (f"{len(summary)} summary rows == 10 checkpoints", len(summary) == 10),
        ("rank sorted by macro-F1, accuracy, epoch", keys == sorted(keys) and len(rank) == 10),
        ("operating points nearest 0.70 coverage", curves_ok),
    ])
    assert ok


def test_criterion_8_format_round_trips(tmp_path):
    logits = Rng(8).normal((25, 4)) * 10
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_logits(first, logits)
    write_logits(second, read_logits(first))
    stable = first.read_bytes() == second.read_bytes()

    bad = tmp_path / "bad.csv"
    bad.write_text("l0,l1\n0.1,0.2\n0.3,abc\n")
    try:
        read_logits(bad)
        located = False
    except ParseError as exc:
        located = exc.line == 3 and str(exc).startswith(f"{bad}:3:")
    ok = verdict(8, "format round-trips", [
        ("logits write-read-write byte-identical", stable),
        ("malformed input rejected with line number", located),
        ("curve.csv header", ",".join(CURVE_HEADER)
         == "threshold,coverage,n_retained,sel_accuracy,sel_macro_f1,sel_qwk"),
        ("rank.csv header", ",".join(RANK_HEADER) == "rank,checkpoint_id,pretrain_epoch,"
         "threshold,coverage,sel_accuracy,sel_macro_f1,sel_qwk"),
    ])
    assert ok
