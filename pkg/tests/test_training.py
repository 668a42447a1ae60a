import csv
import itertools
import math

import numpy as np
import pytest

from mbanet.data import AugmentationConfig, make_split, make_synthetic_dataset, scan_dataset
from mbanet.errors import ConfigError, ShapeError, TrainingDivergedError
from mbanet.network import Network, NetworkConfig, read_tensors
from mbanet.tensor_core import Parameter, Tensor, check_gradients
from mbanet.training import (
    METRIC_COLUMNS,
    Adam,
    TrainConfig,
    lr_at,
    smoothed_cross_entropy,
    smoothed_targets,
    total_loss,
    train_loop,
)


def plain_ce(logits, labels):
    """Cross-entropy written directly with logsumexp in float64."""
    z = np.asarray(logits, dtype=np.float64)
    top = z.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(z - top).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def f64(a, grad=False):
    return Tensor(a, requires_grad=grad, dtype=np.float64)


# ----------------------------------------------------------------- loss
def test_zero_smoothing_is_plain_ce():
    rng = np.random.default_rng(0)
    z, y = rng.normal(size=(6, 5)) * 3, rng.integers(0, 5, 6)
    assert smoothed_cross_entropy(f64(z), y, 0.0).item() == pytest.approx(plain_ce(z, y), rel=1e-12)


def test_two_class_uniform_prediction_is_log2():
    assert smoothed_cross_entropy(f64([[0.0, 0.0]]), [1], 0.1).item() == pytest.approx(math.log(2), abs=1e-15)


def test_huge_aligned_logits_zero_loss():
    z = np.full((2, 4), -1e3)
    z[0, 1] = z[1, 3] = 1e3
    assert smoothed_cross_entropy(f64(z), [1, 3], 0.0).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("variant", ["uniform", "others"])
def test_loss_bounded_below_by_target_entropy(variant):
    rng = np.random.default_rng(1)
    y = rng.integers(0, 6, 4)
    t = smoothed_targets(y, 6, 0.1, variant, np.float64)
    entropy = float(-(t * np.log(t)).sum(axis=1).mean())
    for _ in range(20):
        assert smoothed_cross_entropy(f64(rng.normal(size=(4, 6)) * 4), y, 0.1, variant).item() >= entropy
    # logits equal to log-target reach the bound
    assert smoothed_cross_entropy(f64(np.log(t)), y, 0.1, variant).item() == pytest.approx(entropy, rel=1e-12)


def test_target_variants():
    u = smoothed_targets([0], 4, 0.2, "uniform", np.float64)[0]
    o = smoothed_targets([0], 4, 0.2, "others", np.float64)[0]
    np.testing.assert_allclose(u, [0.85, 0.05, 0.05, 0.05])
    np.testing.assert_allclose(o, [0.8, 0.2 / 3, 0.2 / 3, 0.2 / 3])
    assert u.sum() == pytest.approx(1.0) and o.sum() == pytest.approx(1.0)


def test_loss_gradient_is_softmax_minus_target():
    rng = np.random.default_rng(2)
    z = f64(rng.normal(size=(3, 4)), grad=True)
    y = np.array([0, 3, 1])
    smoothed_cross_entropy(z, y, 0.1).backward()
    p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(z.grad, (p - smoothed_targets(y, 4, 0.1, dtype=np.float64)) / 3, atol=1e-14)
    z.grad = None
    assert max(check_gradients(lambda: smoothed_cross_entropy(z, y, 0.1), [z]).values()) < 1e-6


def test_label_out_of_range():
    with pytest.raises(ShapeError):
        smoothed_cross_entropy(f64(np.zeros((2, 3))), [0, 3], 0.1)
    with pytest.raises(ShapeError):
        smoothed_cross_entropy(f64(np.zeros((2, 3))), [0, -1], 0.1)


def test_total_loss_identical_sets_triple():
    z = np.random.default_rng(3).normal(size=(4, 5))
    single = smoothed_cross_entropy(f64(z), [0, 1, 2, 3], 0.1).item()
    assert total_loss([f64(z)] * 3, [0, 1, 2, 3], 0.1).item() == pytest.approx(3 * single, rel=1e-12)


def test_total_loss_one_perfect_two_uniform():
    n = 7
    perfect = np.full((1, n), -1e4)
    perfect[0, 2] = 1e4
    loss = total_loss([f64(perfect), f64(np.zeros((1, n))), f64(np.zeros((1, n)))], [2], 0.0)
    assert loss.item() == pytest.approx(2 * math.log(n), rel=1e-12)


def test_total_loss_random_vs_oracle_and_symmetric():
    rng = np.random.default_rng(4)
    sets = [rng.normal(size=(5, 6)) for _ in range(3)]
    y = rng.integers(0, 6, 5)
    oracle = sum(plain_ce(z, y) for z in sets)
    for perm in itertools.permutations(range(3)):
        assert total_loss([f64(sets[i]) for i in perm], y, 0.0).item() == pytest.approx(oracle, rel=1e-12)


def test_total_loss_batch_mismatch():
    with pytest.raises(ShapeError):
        total_loss([f64(np.zeros((2, 3))), f64(np.zeros((3, 3)))], [0, 1])


# -------------------------------------------------------------- schedule
def test_schedule_checkpoints_exact():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == {"new": 8e-6, "backbone": 8e-6 * 0.1}
    assert lr_at(0, cfg)["backbone"] == pytest.approx(8e-7, rel=1e-15)
    assert lr_at(9, cfg)["new"] == 8e-4
    assert lr_at(10, cfg)["new"] == 8e-4
    assert lr_at(39, cfg)["new"] == 8e-4
    assert lr_at(40, cfg)["new"] == 4e-4 and lr_at(59, cfg)["new"] == 4e-4
    assert lr_at(60, cfg)["new"] == 2e-4 and lr_at(69, cfg)["new"] == 2e-4


def test_warmup_linear_and_ratio_everywhere():
    cfg = TrainConfig()
    warm = [lr_at(e, cfg)["new"] for e in range(10)]
    np.testing.assert_allclose(np.diff(warm), (8e-4 - 8e-6) / 9, rtol=1e-9)
    assert all(lr_at(e, cfg)["backbone"] / lr_at(e, cfg)["new"] == 0.1 for e in range(70))


def test_schedule_domain():
    cfg = TrainConfig()
    for bad in (-1, 70):
        with pytest.raises(ValueError):
            lr_at(bad, cfg)


def test_per_iteration_warmup():
    cfg = TrainConfig(warmup_per_iteration=True)
    mid = lr_at(0, cfg, progress=0.5)["new"]
    assert lr_at(0, cfg)["new"] < mid < lr_at(1, cfg)["new"]
    assert lr_at(20, cfg, progress=0.5)["new"] == 8e-4
    assert lr_at(0, TrainConfig(), progress=0.5)["new"] == 8e-6


@pytest.mark.parametrize("kwargs", [dict(decay_epochs=(60, 40)), dict(label_smoothing=1.0),
                                    dict(decay_epochs=(40,)), dict(smoothing_variant="x"),
                                    dict(decay_epochs=(5, 60))])
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_short_run_warmup_is_a_warning(caplog):
    TrainConfig(epochs=1)
    assert any("warmup" in m for m in caplog.messages)


# ------------------------------------------------------------------- adam
def adam_oracle(w, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, start=1):
        g = g + wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_matches_oracle():
    rng = np.random.default_rng(5)
    w0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    p = Parameter(w0, dtype=np.float64)
    opt = Adam({"g": [p]}, lr=0.01, weight_decay=5e-4)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    np.testing.assert_allclose(p.data, adam_oracle(w0, grads, 0.01, 5e-4), rtol=1e-12)
    assert opt.state.first[id(p)].shape == p.shape


def test_zero_lr_with_decay_leaves_parameters():
    p = Parameter(np.ones(4), dtype=np.float64)
    opt = Adam([p], lr=0.0, weight_decay=5e-4)
    p.grad = np.full(4, 3.0)
    opt.step()
    assert np.array_equal(p.data, np.ones(4))


def test_group_learning_rates():
    a, b = Parameter(np.zeros(1), dtype=np.float64), Parameter(np.zeros(1), dtype=np.float64)
    opt = Adam({"backbone": [a], "new": [b]}, lr={"backbone": 1e-3, "new": 1e-2})
    a.grad, b.grad = np.ones(1), np.ones(1)
    opt.step()
    # the first Adam step moves each parameter by almost exactly its lr
    assert a.data[0] == pytest.approx(-1e-3, rel=1e-6) and b.data[0] == pytest.approx(-1e-2, rel=1e-6)
    with pytest.raises(KeyError):
        opt.set_lr({"new": 1.0})


def test_frozen_parameter_not_updated():
    p = Parameter(np.ones(2), dtype=np.float64)
    p.requires_grad = False
    p.grad = np.ones(2)
    Adam([p], lr=1.0).step()
    assert np.array_equal(p.data, np.ones(2))


# ------------------------------------------------------------------- loop
@pytest.fixture(scope="module")
def toy_split(tmp_path_factory):
    root = make_synthetic_dataset(tmp_path_factory.mktemp("toy") / "ds", num_identities=4,
                                  images_per_identity=5, size=40, seed=1)
    return make_split(scan_dataset(root), seed=0, closed_set=True)


TOY_AUG = AugmentationConfig(resize=36, crop=32)


def small_net(**kw):
    return Network(NetworkConfig(num_identities=4, stage_widths=(8, 16, 32, 32), stem_width=8, **kw))


def test_single_batch_loss_monotone():
    rng = np.random.default_rng(6)
    net = small_net(dropout=0.0)
    x = Tensor(rng.normal(size=(8, 3, 32, 32)))
    y = np.arange(8) % 4
    opt = Adam(net.param_groups(), lr=1e-3)
    losses = []
    for _ in range(10):
        loss = total_loss(net.forward_train(x, y).logits, y, 0.0)
        losses.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_loop_log_and_checkpoints(tmp_path, toy_split):
    cfg = TrainConfig.toy(epochs=4, warmup_epochs=2, decay_epochs=(3,), decay_lrs=(1e-3,), checkpoint_every=2)
    res = train_loop(small_net(), toy_split, cfg, TOY_AUG, out_dir=tmp_path)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3"]
    assert float(rows[4][3]) == 1e-3 and float(rows[4][4]) == pytest.approx(1e-4)
    assert float(rows[1][5]) != 0.0 or float(rows[4][5]) != 0.0  # gamma_s3 moves off zero
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["epoch_002.ckpt", "epoch_004.ckpt"]
    _, meta = read_tensors(tmp_path / "final.ckpt")
    assert meta["train"]["epochs"] == 4 and meta["network"]["num_identities"] == 4
    assert (tmp_path / "best.ckpt").exists() and res.best_checkpoint


def test_loop_is_deterministic(toy_split):
    cfg = TrainConfig.toy(epochs=2, warmup_epochs=1)
    a = train_loop(small_net(), toy_split, cfg, TOY_AUG)
    b = train_loop(small_net(), toy_split, cfg, TOY_AUG)
    assert a.final_loss == b.final_loss
    assert [r["train_loss"] for r in a.history] == [r["train_loss"] for r in b.history]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_context(toy_split):
    net = small_net()
    net.head_global.classifier.weight.data[:] = np.inf
    with pytest.raises(TrainingDivergedError) as err:
        train_loop(net, toy_split, TrainConfig.toy(epochs=1, warmup_epochs=1), TOY_AUG)
    e = err.value
    assert (e.epoch, e.batch) == (0, 0)
    assert set(e.gammas) == {"s3", "s4", "c3", "c4"} and e.lr["new"] == pytest.approx(3e-3)
    assert "epoch 0" in str(e)


def test_identity_count_mismatch(toy_split):
    net = Network(NetworkConfig(num_identities=7))
    with pytest.raises(ShapeError, match="training identities"):
        train_loop(net, toy_split, TrainConfig.toy(epochs=1), TOY_AUG)
