import numpy as np
import pytest

from genrenet.data import EmbeddingDataset, LabelEntry, make_cluster_dataset, \
    stratified_split
from genrenet.errors import ConfigError, NumericalError
from genrenet.losses import MultitaskConfig
from genrenet.network import Network, NetworkConfig
from genrenet.tensor import Rng
from genrenet.trainer import (AdamMoments, DataSplits, Optimizer, TrainConfig,
                              adam_step, grad_check, heads_for_multitask,
                              run_gradcheck_battery, sgd_step, train)


def blob_dataset(per_class=60, dim=8, num_classes=2, sep=10.0, seed=0):
    """Linearly separable Gaussian blobs; far enough apart that a linear
    classifier through the centroid midpoint scores 100%."""
    rng = Rng(seed)
    centers = np.zeros((num_classes, dim))
    for c in range(num_classes):
        centers[c, c % dim] = sep * c
    emb = np.vstack([centers[c] + rng.normal(per_class, dim)
                     for c in range(num_classes)])
    labels = np.repeat(np.arange(num_classes), per_class)
    label_map = tuple(LabelEntry(c, f"blob{c}", "synth")
                      for c in range(num_classes))
    return EmbeddingDataset(emb, labels, label_map, source="synth")


def make_splits(ds, seed=1):
    tr, va, te = stratified_split(ds, (0.8, 0.1, 0.1), seed=seed)
    return DataSplits(tr, va, te)


def tiny_net(num_classes, mt=None, **kwargs):
    mt = mt or MultitaskConfig.single_ce()
    defaults = dict(input_dim=8, hidden_sizes=(16, 8), dropout_rate=0.0,
                    batch_norm=True,
                    heads=heads_for_multitask(mt, num_classes, projection_dim=6))
    defaults.update(kwargs)
    return NetworkConfig(**defaults)


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    params = {"w": Rng(0).normal(3, 3)}
    snapshot = {k: v.copy() for k, v in params.items()}
    moments = AdamMoments(m={"w": np.zeros((3, 3))}, v={"w": np.zeros((3, 3))})
    adam_step(params, {"w": np.zeros((3, 3))}, moments, lr=0.1, t=1)
    assert np.array_equal(params["w"], snapshot["w"])


def test_adam_first_step_is_signed_learning_rate():
    g = np.array([[0.5, -2.0, 1e-3]])
    params = {"w": np.zeros((1, 3))}
    moments = AdamMoments(m={"w": np.zeros((1, 3))}, v={"w": np.zeros((1, 3))})
    adam_step(params, {"w": g}, moments, lr=0.01, t=1)
    # bias-corrected first step: -lr * g / (|g| + eps) ~ -lr * sign(g)
    assert params["w"] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)


def test_adam_trajectories_are_reproducible():
    def run():
        params = {"w": Rng(5).normal(2, 2)}
        moments = AdamMoments(m={"w": np.zeros((2, 2))},
                              v={"w": np.zeros((2, 2))})
        rng = Rng(6)
        for t in range(1, 20):
            adam_step(params, {"w": rng.normal(2, 2)}, moments, lr=1e-3, t=t)
        return params["w"]

    assert np.array_equal(run(), run())


def test_sgd_step():
    params = {"w": np.ones((2, 2))}
    sgd_step(params, {"w": np.full((2, 2), 0.5)}, lr=0.1)
    assert np.allclose(params["w"], 0.95)


# --------------------------------------------------------------------------
# training runs
# --------------------------------------------------------------------------

def test_training_solves_linearly_separable_data():
    ds = blob_dataset()
    # oracle: the midpoint hyperplane between centroids classifies perfectly
    c0 = ds.embeddings[ds.labels == 0].mean(0)
    c1 = ds.embeddings[ds.labels == 1].mean(0)
    w, mid = c1 - c0, (c0 + c1) / 2
    oracle = np.mean(((ds.embeddings - mid) @ w > 0) == ds.labels)
    assert oracle == 1.0

    splits = make_splits(ds)
    cfg = TrainConfig(seed=3, epochs=20, batch_size=32, learning_rate=3e-3)
    net, state, rep = train(splits, tiny_net(2), cfg)
    assert state.history[-1].train_acc >= 0.99
    assert rep.accuracy >= 0.9


def test_degenerate_multitask_equals_plain_ce():
    ds = blob_dataset(per_class=40)
    splits = make_splits(ds)
    cfg_plain = TrainConfig(seed=11, epochs=5, batch_size=32)
    cfg_alpha1 = TrainConfig(seed=11, epochs=5, batch_size=32,
                             multitask=MultitaskConfig(head_weights=(("ce", 1.0),)))
    net_a, state_a, _ = train(splits, tiny_net(2), cfg_plain)
    net_b, state_b, _ = train(splits, tiny_net(2), cfg_alpha1)
    for sa, sb in zip(state_a.history, state_b.history):
        assert sa.total_loss == sb.total_loss
        assert sa.head_losses == sb.head_losses
        assert sa.train_acc == sb.train_acc
    for (ka, va), (kb, vb) in zip(net_a.state_items(), net_b.state_items()):
        assert ka == kb and va.tobytes() == vb.tobytes()


def test_total_loss_equals_weighted_sum_each_step():
    ds = blob_dataset(per_class=40, num_classes=3)
    splits = make_splits(ds)
    mt = MultitaskConfig(head_weights=(("ce", 0.35), ("ce", 0.35),
                                       ("contrastive", 0.3)))
    seen = []
    cfg = TrainConfig(seed=2, epochs=2, batch_size=24, multitask=mt)
    train(splits, tiny_net(3, mt), cfg,
          on_step=lambda e, s, heads, total: seen.append((heads, total)))
    assert seen
    for heads, total in seen:
        manual = 0.35 * heads[0] + 0.35 * heads[1] + 0.3 * heads[2]
        assert total == pytest.approx(manual, abs=1e-12)


def test_training_never_mutates_the_dataset():
    from genrenet.sampler import NoiseConfig
    ds = blob_dataset(per_class=30)
    splits = make_splits(ds)
    before_full = ds.embeddings.copy()
    before_train = splits.train.embeddings.copy()
    cfg = TrainConfig(seed=1, epochs=3, batch_size=16,
                      noise=NoiseConfig(snr_db=20.0, active_fraction=1.0))
    train(splits, tiny_net(2), cfg)
    assert np.array_equal(ds.embeddings, before_full)
    assert np.array_equal(splits.train.embeddings, before_train)


def test_nan_loss_aborts_with_diagnostic():
    # an absurd SGD rate overflows the logits to inf, making the loss NaN
    ds = blob_dataset(per_class=30)
    splits = make_splits(ds)
    cfg = TrainConfig(seed=1, epochs=5, batch_size=16, learning_rate=1e154,
                      optimizer=Optimizer.SGD)
    with np.errstate(invalid="ignore", over="ignore"):
        with pytest.raises(NumericalError, match="epoch"):
            train(splits, tiny_net(2, batch_norm=False), cfg)


def test_best_validation_checkpoint_is_returned():
    ds = make_cluster_dataset(num_classes=3, dim=8, per_class=40, seed=9)
    splits = make_splits(ds)
    cfg = TrainConfig(seed=4, epochs=12, batch_size=16)
    net, state, rep = train(splits, tiny_net(3), cfg)
    evaluated = [s.val_acc for s in state.history if s.val_acc is not None]
    assert state.best_val_acc == max(evaluated)
    from genrenet.trainer import accuracy
    assert accuracy(net, splits.val) == state.best_val_acc


def test_plateau_epoch_marks_first_near_best_epoch():
    ds = make_cluster_dataset(num_classes=3, dim=8, per_class=60, seed=2)
    splits = make_splits(ds)
    cfg = TrainConfig(seed=6, epochs=15, batch_size=16)
    _, state, _ = train(splits, tiny_net(3), cfg)
    expected = next(s.epoch for s in state.history
                    if s.val_acc is not None
                    and s.val_acc >= state.best_val_acc - 0.005)
    assert state.plateau_epoch == expected
    assert state.plateau_epoch <= state.best_epoch


def test_eval_every_skips_epochs():
    ds = blob_dataset(per_class=30)
    splits = make_splits(ds)
    cfg = TrainConfig(seed=1, epochs=5, batch_size=32, eval_every=2)
    _, state, _ = train(splits, tiny_net(2), cfg)
    val_pattern = [s.val_acc is not None for s in state.history]
    assert val_pattern == [False, True, False, True, True]   # last always runs


def test_training_log_format(tmp_path):
    ds = blob_dataset(per_class=30)
    splits = make_splits(ds)
    cfg = TrainConfig(seed=1, epochs=3, batch_size=32)
    log = tmp_path / "log.tsv"
    train(splits, tiny_net(2), cfg, log_path=log)
    lines = log.read_text().strip().split("\n")
    assert lines[0].startswith("#epoch")
    assert len(lines) == 1 + 3
    for i, line in enumerate(lines[1:]):
        cells = line.split("\t")
        assert int(cells[0]) == i
        assert len(cells) == 5   # epoch, 1 head, total, train, val
        float(cells[1]), float(cells[2]), float(cells[3]), float(cells[4])


def test_head_and_loss_wiring_validation():
    ds = blob_dataset(per_class=30)
    splits = make_splits(ds)
    mt = MultitaskConfig(head_weights=(("ce", 0.5), ("contrastive", 0.5)))
    # network heads do not match the multitask layout
    with pytest.raises(ConfigError, match="heads"):
        train(splits, tiny_net(2), TrainConfig(seed=0, epochs=1, multitask=mt))
    # three CE roles are not available for pair losses
    bad = MultitaskConfig(head_weights=(("ce", 0.2), ("ce", 0.2), ("ce", 0.2),
                                        ("contrastive", 0.4)))
    with pytest.raises(ConfigError, match="roles"):
        train(splits, tiny_net(2, bad), TrainConfig(seed=0, epochs=1, multitask=bad))
    # no CE head at all cannot train a classifier
    metric_only = MultitaskConfig(head_weights=(("contrastive", 1.0),))
    with pytest.raises(ConfigError, match="cross-entropy"):
        train(splits, tiny_net(2, metric_only),
              TrainConfig(seed=0, epochs=1, multitask=metric_only))
    with pytest.raises(ConfigError, match="batch_size"):
        train(splits, tiny_net(2), TrainConfig(seed=0, epochs=1, batch_size=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    assert TrainConfig(optimizer="sgd").optimizer is Optimizer.SGD


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def test_gradcheck_linear_ce_is_tight():
    mt = MultitaskConfig.single_ce()
    cfg = NetworkConfig(input_dim=5, hidden_sizes=(4,), dropout_rate=0.0,
                        batch_norm=False,
                        heads=heads_for_multitask(mt, 3))
    rep = grad_check(cfg, mt, Rng(2))
    assert rep.max_rel_err < 1e-6


def test_gradcheck_full_stack_with_contrastive():
    mt = MultitaskConfig(head_weights=(("ce", 0.35), ("ce", 0.35),
                                       ("contrastive", 0.3)))
    cfg = NetworkConfig(input_dim=6, hidden_sizes=(7, 6, 5), dropout_rate=0.0,
                        batch_norm=True,
                        heads=heads_for_multitask(mt, 3, projection_dim=4))
    rep = grad_check(cfg, mt, Rng(3))
    assert rep.passed and rep.max_rel_err < 1e-4


def test_gradcheck_detects_corrupted_gradients(monkeypatch):
    mt = MultitaskConfig.single_ce()
    cfg = NetworkConfig(input_dim=5, hidden_sizes=(4,), dropout_rate=0.0,
                        batch_norm=False, heads=heads_for_multitask(mt, 3))
    original = Network.backward

    def corrupted(self, cache, head_grads):
        grads = original(self, cache, head_grads)
        grads.params = {k: v * 1.01 for k, v in grads.params.items()}
        return grads

    monkeypatch.setattr(Network, "backward", corrupted)
    rep = grad_check(cfg, mt, Rng(2))
    assert not rep.passed


def test_gradcheck_requires_dropout_off():
    mt = MultitaskConfig.single_ce()
    cfg = NetworkConfig(input_dim=5, hidden_sizes=(4,), dropout_rate=0.5,
                        batch_norm=False, heads=heads_for_multitask(mt, 3))
    with pytest.raises(ConfigError, match="dropout"):
        grad_check(cfg, mt, Rng(0))


def test_gradcheck_battery_quick():
    passed, results = run_gradcheck_battery(quick=True)
    assert passed
    assert len(results) == 2 * 2 * 2 * 2
    labels = [label for label, _ in results]
    assert any("bn=on" in l for l in labels)
    assert any("loss=multitask" in l for l in labels)
