"""``selpred`` command line entry point.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .calibration import LogitsSet, fit_temperature, softmax_probs
from .errors import SelpredError, SelpredRuntimeError
from .gradcheck import gradcheck_suite
from .ingest import read_labels, read_logits, read_manifest, write_curve, write_rank
from .losses import LOSS_IDS, SicovaWeights, TripletParams, sicova_loss, triplet_loss
from .numeric_core import Rng
from .pipeline import load_config, run_experiment, with_overrides
from .report import PlotSpec, emit_risk_coverage_plot, emit_summary_table, series_from_evals
from .selective import (evaluate_checkpoint, make_grid, rank_evaluations,
                        select_operating_point, threshold_sweep)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _style(text, code):
    if os.environ.get("SELPRED_NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _sicova_weights(args):
    return SicovaWeights(args.lambda_intra, args.lambda_inv, args.lambda_corr,
                         args.gamma, args.eps_var, args.eps_norm)


def _add_weight_flags(p):
    d = SicovaWeights()
    p.add_argument("--lambda-intra", type=float, default=d.lambda_intra)
    p.add_argument("--lambda-inv", type=float, default=d.lambda_inv)
    p.add_argument("--lambda-corr", type=float, default=d.lambda_corr)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--eps-var", type=float, default=d.eps_var)
    p.add_argument("--eps-norm", type=float, default=d.eps_norm)
    p.add_argument("--margin", type=float, default=TripletParams().margin,
                   help="triplet margin")
    p.add_argument("--symmetric", action="store_true",
                   help="triplet: average with the view-2-anchored loss")


def _params(args):
    if args.loss == "sicova":
        return _sicova_weights(args)
    return TripletParams(args.margin, args.symmetric)


# --------------------------------------------------------------- commands

def cmd_losscheck(args, parser):
    if args.n < 2 or args.d < 1:
        parser.error("need --n >= 2 and --d >= 1")
    rng = Rng(args.seed)
    z = rng.normal((args.n, args.d))
    zp = z + 0.5 * rng.normal((args.n, args.d))
    if args.loss == "sicova":
        br = sicova_loss(z, zp, _sicova_weights(args))
        for name, value in br.as_dict().items():
            print(f"{name:>7s} {value!r}")
    else:
        print(f"triplet {triplet_loss(z, zp, args.margin, args.symmetric)!r}")
    return EXIT_OK


def cmd_gradcheck(args, parser):
    if not args.tol > 0:
        parser.error("--tol must be positive")
    err = gradcheck_suite(args.loss, _params(args), n_pairs=args.pairs, seed=args.seed,
                          h=args.h)
    ok = err < args.tol
    verdict = _style("PASS", "32") if ok else _style("FAIL", "31")
    print(f"{verdict} {args.loss}: max relative error {err:.3e} (tol {args.tol:.1e}, "
          f"{args.pairs} pairs)")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_synth(args, parser):
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, loss=args.loss, output_dir=args.out,
                         target_coverage=args.coverage)
    result = run_experiment(cfg, jobs=args.jobs)
    print(f"wrote {len(result.results)} checkpoints to {result.output_dir}")
    for i, e in enumerate(result.ranking.entries, start=1):
        op = e.operating_point
        print(f"{i:2d}. {e.checkpoint_id:>8s} coverage={op.coverage:.3f} "
              f"sel_f1={op.sel_macro_f1:.4f} sel_acc={op.sel_accuracy:.4f}")
    return EXIT_OK


def _load_logits_set(args):
    logits = read_logits(args.logits)
    k = args.n_classes or logits.shape[1]
    return LogitsSet(logits, read_labels(args.labels, k), k)


def cmd_calibrate(args, parser):
    ls = _load_logits_set(args)
    fit = fit_temperature(ls, args.t_min, args.t_max, args.tol)
    text = json.dumps(fit.as_record())
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8", newline="\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args, parser):
    ls = _load_logits_set(args)
    probs = softmax_probs(ls.logits, args.temperature)
    curve = threshold_sweep(probs, ls.labels, ls.n_classes, make_grid(args.grid_step))
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "curve.csv"
    write_curve(out, curve)
    op = select_operating_point(curve, args.coverage)
    print(f"wrote {len(curve)} points to {out}; operating point threshold={op.threshold} "
          f"coverage={op.coverage}")
    return EXIT_OK


def _evaluate_manifest(args):
    manifest = read_manifest(args.manifest)
    target = args.coverage if args.coverage is not None else manifest.target_coverage
    grid = make_grid(args.grid_step)

    def task(entry):
        return evaluate_checkpoint(entry.checkpoint_id, entry.pretrain_epoch,
                                   manifest.load_split(entry, "cal"),
                                   manifest.load_split(entry, "eval"), target, grid)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            evals = list(pool.map(task, manifest.checkpoints))
    else:
        evals = [task(e) for e in manifest.checkpoints]
    ranking = rank_evaluations(evals)
    for e, reason in ranking.excluded:
        print(f"excluded {e.checkpoint_id}: {reason}", file=sys.stderr)
    return manifest, evals, ranking


def cmd_rank(args, parser):
    _, _, ranking = _evaluate_manifest(args)
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "rank.csv"
    write_rank(out, ranking)
    for i, e in enumerate(ranking.entries, start=1):
        op = e.operating_point
        print(f"{i:2d}. {e.checkpoint_id} (epoch {e.pretrain_epoch}) T={e.temperature:.4f} "
              f"coverage={op.coverage:.4f} sel_f1={op.sel_macro_f1:.4f}")
    return EXIT_OK


def cmd_report(args, parser):
    manifest, evals, ranking = _evaluate_manifest(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_summary_table(ranking, out / "summary.csv", method=args.method or manifest.run_id)
    emit_risk_coverage_plot(series_from_evals(evals), out / "risk_coverage.svg",
                            PlotSpec(metric=args.metric))
    print(f"wrote {out / 'summary.csv'} and {out / 'risk_coverage.svg'}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="selpred", description="Selective prediction and checkpoint reliability tools.",
        formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("losscheck", help="print SSL loss values on seeded random embeddings",
                       formatter_class=fmt)
    p.add_argument("--loss", choices=LOSS_IDS, default="sicova")
    p.add_argument("--n", type=int, default=8, help="batch size")
    p.add_argument("--d", type=int, default=4, help="embedding dimension")
    p.add_argument("--seed", type=int, default=0)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients",
                       formatter_class=fmt)
    p.add_argument("--loss", choices=LOSS_IDS, default="sicova")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=100, help="random (8x4) pairs to check")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    _add_weight_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="run the synthetic checkpoint-reliability experiment",
                       formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config (default: bundled)")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--loss", choices=LOSS_IDS, default=None, help="override config loss")
    p.add_argument("--coverage", type=float, default=None, help="override target coverage")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    def add_logit_flags(p):
        p.add_argument("--logits", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--n-classes", type=int, default=None,
                       help="class count (default: logits column count)")

    p = sub.add_parser("calibrate", help="fit a temperature on a calibration split",
                       formatter_class=fmt)
    add_logit_flags(p)
    p.add_argument("--t-min", type=float, default=0.05)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=1e-4, help="tolerance in log T")
    p.add_argument("--out", default=None, help="write the JSON record here")
    p.add_argument("--seed", type=int, default=0, help="unused; calibration is deterministic")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="risk-coverage sweep over confidence thresholds",
                       formatter_class=fmt)
    add_logit_flags(p)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--coverage", type=float, default=0.70, help="target coverage")
    p.add_argument("--out", default="curve.csv", help="curve.csv path or directory")
    p.add_argument("--seed", type=int, default=0, help="unused; the sweep is deterministic")
    p.set_defaults(func=cmd_sweep)

    for name, func, default_out, help_ in (
        ("rank", cmd_rank, "rank.csv", "rank manifest checkpoints by selective macro-F1"),
        ("report", cmd_report, "results", "write summary table and risk-coverage plot"),
    ):
        p = sub.add_parser(name, help=help_, formatter_class=fmt)
        p.add_argument("--manifest", required=True)
        p.add_argument("--coverage", type=float, default=None,
                       help="target coverage (default: manifest value)")
        p.add_argument("--grid-step", type=float, default=0.01)
        p.add_argument("--out", default=default_out)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=0, help="unused; ranking is deterministic")
        if name == "report":
            p.add_argument("--metric", choices=("sel_macro_f1", "sel_accuracy"),
                           default="sel_macro_f1")
            p.add_argument("--method", default=None, help="method column (default: run_id)")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    coverage = getattr(args, "coverage", None)
    if coverage is not None and not 0 < coverage <= 1:
        parser.error("--coverage must lie in (0, 1]")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args, parser)
    except SelpredRuntimeError as exc:
        print(f"selpred: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SelpredError as exc:
        print(f"selpred: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
