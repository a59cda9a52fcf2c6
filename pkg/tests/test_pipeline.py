import filecmp

import numpy as np
import pytest

from selpred.calibration import softmax_probs
from selpred.errors import DivergenceError, UsageError
from selpred.gradcheck import max_relative_error, numeric_gradient
from selpred.losses import SicovaWeights, TripletParams
from selpred.numeric_core import Rng
from selpred.pipeline import (AugmentSpec, Checkpoint, ExperimentConfig, SynthSpec,
                              checkpoint_epochs, encoder_loss_and_grad, finetune_head,
                              generate_dataset, load_config, make_views, make_views_batch,
                              pretrain, run_experiment, with_overrides)
from selpred.selective import accuracy, macro_f1, qwk

SMALL = ExperimentConfig(
    synth=SynthSpec(n_classes=3, samples_per_class=30, input_dim=8),
    augment=AugmentSpec(shuffle_blocks=2),
    embed_dim=4, epochs=20, checkpoint_every=5, batch=32, head_epochs=100,
)


def test_dataset_shape_and_determinism():
    spec = SynthSpec()
    a, b = generate_dataset(spec), generate_dataset(spec)
    assert a.features.shape == (1000, 32)
    assert [len(a.splits[s]) for s in ("train", "cal", "eval")] == [600, 200, 200]
    assert a.features.tobytes() == b.features.tobytes()
    for s in a.splits:
        np.testing.assert_array_equal(a.splits[s], b.splits[s])
        assert np.bincount(a.labels[a.splits[s]]).tolist() == [len(a.splits[s]) // 5] * 5
    all_idx = np.concatenate(list(a.splits.values()))
    assert sorted(all_idx.tolist()) == list(range(1000))


def test_dataset_separable_limit():
    spec = SynthSpec(cluster_std=1e-6)
    d = generate_dataset(spec)
    centers = np.array([d.features[d.labels == k].mean(axis=0) for k in range(5)])
    dist = ((d.features[:, None, :] - centers[None]) ** 2).sum(axis=2)
    assert np.mean(np.argmin(dist, axis=1) == d.labels) == 1.0


def test_views_identity():
    x = Rng(0).normal(8)
    v1, v2 = make_views(x, AugmentSpec(0.0, 0.0, 1), Rng(1))
    np.testing.assert_array_equal(v1, x)
    np.testing.assert_array_equal(v2, x)


def test_views_differ_with_noise():
    x = Rng(0).normal(8)
    v1, v2 = make_views(x, AugmentSpec(0.1, 0.0, 1), Rng(1))
    assert not np.array_equal(v1, v2)


def test_views_mask_expectation():
    x = np.linspace(-2, 3, 6)
    aug = AugmentSpec(noise_std=0.3, mask_prob=0.25, shuffle_blocks=1)
    n = 20_000
    v1, v2 = make_views_batch(np.tile(x, (n, 1)), aug, Rng(5))
    draws = np.vstack([v1, v2])
    mean = draws.mean(axis=0)
    # per-coordinate variance of one draw: p(1-p) x^2 + noise^2
    sigma = np.sqrt((0.25 * 0.75 * x**2 + 0.09) / draws.shape[0])
    assert np.all(np.abs(mean - 0.75 * x) <= 3 * sigma)


def test_views_block_permutation():
    x = np.arange(8.0)
    for seed in range(10):
        v1, v2 = make_views(x, AugmentSpec(0.0, 0.0, 4), Rng(seed))
        for v in (v1, v2):
            assert sorted(v.tolist()) == x.tolist()
            blocks = {tuple(v[i:i + 2]) for i in range(0, 8, 2)}
            assert blocks == {(0, 1), (2, 3), (4, 5), (6, 7)}
    with pytest.raises(UsageError):
        make_views(np.arange(7.0), AugmentSpec(0, 0, 2), Rng(0))


def test_augment_validation():
    with pytest.raises(UsageError):
        AugmentSpec(mask_prob=1.0)
    with pytest.raises(UsageError):
        AugmentSpec(noise_std=-1.0)


def test_checkpoint_schedule():
    assert checkpoint_epochs(100, 10) == list(range(10, 101, 10))
    assert checkpoint_epochs(25, 10) == [10, 20, 25]
    x = Rng(0).normal((40, 8))
    ck = pretrain(x, "sicova", SicovaWeights(), AugmentSpec(), 100, 10, 0.001, 20, 0, 4)
    assert [c.pretrain_epoch for c in ck] == list(range(10, 101, 10))
    with pytest.raises(UsageError):
        pretrain(x, "sicova", SicovaWeights(), AugmentSpec(), 5, 10, 0.001, 20, 0, 4)


@pytest.mark.parametrize("loss, params", [("sicova", SicovaWeights()),
                                          ("triplet", TripletParams())])
def test_lr_zero_freezes_weights(loss, params):
    x = Rng(0).normal((40, 8))
    ck = pretrain(x, loss, params, AugmentSpec(), 6, 2, 0.0, 16, 0, 4)
    for c in ck[1:]:
        np.testing.assert_array_equal(c.encoder_weights, ck[0].encoder_weights)


def test_pretrain_descends_on_default_data():
    cfg = load_config()
    d = generate_dataset(cfg.synth)
    ck = pretrain(d.features[d.splits["train"]], "sicova", cfg.sicova, cfg.augment, 100, 1,
                  cfg.lr, cfg.batch, cfg.seed, cfg.embed_dim)
    assert ck[99].pretrain_loss < ck[0].pretrain_loss


def test_pretrain_deterministic():
    x = Rng(0).normal((40, 8))
    a = pretrain(x, "triplet", TripletParams(), AugmentSpec(), 4, 2, 0.01, 16, 3, 4)
    b = pretrain(x, "triplet", TripletParams(), AugmentSpec(), 4, 2, 0.01, 16, 3, 4)
    for ca, cb in zip(a, b):
        assert ca.encoder_weights.tobytes() == cb.encoder_weights.tobytes()


def test_pretrain_divergence_names_epoch():
    x = Rng(0).normal((40, 8)) * 10
    with pytest.raises(DivergenceError) as exc:
        pretrain(x, "sicova", SicovaWeights(), AugmentSpec(), 50, 10, 10.0, 40, 0, 4)
    assert exc.value.epoch >= 1 and f"epoch {exc.value.epoch}" in str(exc.value)


@pytest.mark.parametrize("loss, params", [("sicova", SicovaWeights()),
                                          ("triplet", TripletParams())])
def test_encoder_gradient_matches_fd(loss, params):
    r = Rng(11)
    v1 = r.normal((16, 6))
    v2 = v1 + 0.3 * r.normal((16, 6))
    w = r.normal((6, 3)) / np.sqrt(6)
    _, dw = encoder_loss_and_grad(w, v1, v2, loss, params)
    num = numeric_gradient(lambda: encoder_loss_and_grad(w, v1, v2, loss, params)[0], w, 1e-5)
    assert max_relative_error(dw, num) < 1e-5


def _head_setup():
    d = generate_dataset(SMALL.synth)
    w = Rng(2).normal((8, 4))
    return d, w


def test_finetune_same_weights_same_record():
    d, w = _head_setup()
    a = finetune_head(Checkpoint(5, w, 0.0), d.features, d.labels, d.splits, 3, 50, 0.5)
    b = finetune_head(Checkpoint(10, w.copy(), 1.0), d.features, d.labels, d.splits, 3, 50, 0.5)
    for s in ("train", "cal", "eval"):
        assert a.splits[s].logits.tobytes() == b.splits[s].logits.tobytes()


def test_finetune_lr_zero_uniform():
    d, w = _head_setup()
    rec = finetune_head(Checkpoint(1, w, 0.0), d.features, d.labels, d.splits, 3, 50, 0.0)
    for ls in rec.splits.values():
        assert np.all(ls.logits == ls.logits[:, :1])


def test_finetune_separable_reaches_full_train_accuracy():
    spec = SynthSpec(cluster_std=1e-3)
    d = generate_dataset(spec)
    w = Rng(4).normal((32, 8))
    rec = finetune_head(Checkpoint(1, w, 0.0), d.features, d.labels, d.splits, 5, 500, 0.5)
    tr = rec.splits["train"]
    assert np.mean(np.argmax(tr.logits, axis=1) == tr.labels) == 1.0


def test_run_experiment_files_and_determinism(tmp_path):
    a = run_experiment(SMALL, tmp_path / "a")
    b = run_experiment(SMALL, tmp_path / "b", jobs=3)
    n = len(checkpoint_epochs(SMALL.epochs, SMALL.checkpoint_every))
    assert len(a.results) == n
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    stack = [cmp]
    while stack:
        c = stack.pop()
        assert not c.left_only and not c.right_only
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        assert not mismatch and not errors
        stack.extend(c.subdirs.values())
    for rel in ("checkpoints/ep-5.ckpt", "records/ep-5/eval-logits.csv", "results/summary.csv",
                "results/rank.csv", "results/risk_coverage.svg", "manifest.json"):
        assert (tmp_path / "a" / rel).is_file()
    assert len((tmp_path / "a/results/summary.csv").read_text().splitlines()) == n + 1


def test_protocol_isolation(tmp_path):
    res = run_experiment(SMALL, tmp_path)
    sizes = {tuple(len(r.record.splits[s]) for s in ("train", "cal", "eval")) for r in res.results}
    labels = {r.record.splits["eval"].labels.tobytes() for r in res.results}
    grids = {tuple(p.threshold for p in r.evaluation.curve) for r in res.results}
    assert len(sizes) == len(labels) == len(grids) == 1


def test_no_abstention_grid_reproduces_standard_metrics(tmp_path):
    cfg = with_overrides(SMALL, thresholds=(0.0,))
    res = run_experiment(cfg, tmp_path)
    for r in res.results:
        op = r.evaluation.operating_point
        assert op.coverage == 1.0
        assert op.sel_accuracy == r.accuracy
        assert op.sel_macro_f1 == r.macro_f1
        assert op.sel_qwk == r.qwk
        # accuracy does not change under temperature scaling
        ev = r.record.splits["eval"]
        raw = np.argmax(ev.logits, axis=1)
        assert accuracy(raw, ev.labels) == r.accuracy


def test_config_roundtrip():
    cfg = load_config()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.synth.n_classes == 5 and cfg.epochs == 200 and cfg.checkpoint_every == 20
