import numpy as np
import pytest
from oracles import block_relative_errors
from scipy.special import expit

from respsed.config import ConfigError, from_mapping, read_kv
from respsed.corpus import CLIP_SAMPLES
from respsed.detector import (
    Adam,
    BaselineConfig,
    EarlyStopping,
    Example,
    FoldData,
    ModelFormatError,
    ShapeError,
    TrainConfig,
    TrainScenario,
    baseline_detect,
    fine_tune,
    forward,
    forward_batch,
    init_model,
    load_model,
    loss_and_grad,
    param_shapes,
    save_model,
    train,
    train_model,
)
from respsed.detector.model_io import dumps_model, loads_model
from respsed.detector.training import dataset_loss
from respsed.features import ENERGY_OFFSET, FeatureTensor, extract


def _small_model(seed=0, in_dim=8, channels=6, hidden=4):
    return init_model(seed, in_dim, channels, hidden)


def _toy_examples(n, t=16, d=8, seed=0, zero_label_every=None):
    """Targets follow the sign of feature 0 so the task is learnable."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.standard_normal((t, d))
        target = (x[0::2, 0] + x[1::2, 0] > 0).astype(float)
        n_labels = 1
        if zero_label_every and i % zero_label_every == 0:
            x = np.full((t, d), np.nan)  # would poison any batch it entered
            n_labels = 0
        out.append(Example(f"c{i}", x, target, n_labels))
    return out


# ---------------------------------------------------------------- init and forward

def test_init_deterministic_and_seeded():
    a, b, c = init_model(3), init_model(3), init_model(4)
    for name in a.tensors:
        assert a[name].tobytes() == b[name].tobytes()
    assert any(not np.array_equal(a[n], c[n]) for n in a.tensors)


def test_init_shapes_and_biases():
    m = init_model(0)
    assert {n: a.shape for n, a in m.tensors.items()} == param_shapes(193, 64, 32)
    assert m["conv_w"].shape == (3, 193, 64) and m["head_w"].shape == (64,)
    for name, arr in m.tensors.items():
        if name.split("_")[-1].startswith("b"):
            assert not arr.any()


def test_forward_shape_and_range():
    m = init_model(1, channels=8, hidden=4)
    x = np.random.default_rng(0).standard_normal((938, 193))
    p = forward(m, FeatureTensor(x))
    assert len(p) == 469
    assert ((p.p > 0) & (p.p < 1)).all()


def test_zero_model_gives_half():
    m = init_model(0, channels=8, hidden=4)
    zero = m.replace({n: np.zeros_like(a) for n, a in m.tensors.items()})
    p = forward(zero, np.random.default_rng(0).standard_normal((938, 193)))
    assert (p.p == 0.5).all()


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        forward(init_model(0, in_dim=10, channels=4, hidden=2), np.zeros((938, 193)))


def test_reversal_symmetry():
    m = init_model(5, in_dim=12, channels=6, hidden=5)
    h = m.hidden
    swapped = {}
    for name, arr in m.tensors.items():
        if name.startswith("fwd_"):
            swapped[name] = m["bwd_" + name[4:]]
        elif name.startswith("bwd_"):
            swapped[name] = m["fwd_" + name[4:]]
        elif name == "conv_w":
            swapped[name] = arr[::-1]  # kernel taps mirror under time reversal
        elif name == "head_w":
            swapped[name] = np.concatenate([arr[h:], arr[:h]])
        else:
            swapped[name] = arr
    mirror = m.replace(swapped)
    x = np.random.default_rng(2).standard_normal((40, 12))
    original = forward_batch(m, x)[0]
    reversed_out = forward_batch(mirror, x[::-1])[0]
    np.testing.assert_allclose(reversed_out, original[::-1], rtol=1e-12, atol=1e-14)
    # plain time reversal of the input alone does not give this
    assert not np.allclose(forward_batch(m, x[::-1])[0], original[::-1])


# ---------------------------------------------------------------- loss and gradient

def test_loss_at_half_is_ln2():
    m = _small_model()
    zero = m.replace({n: np.zeros_like(a) for n, a in m.tensors.items()})
    loss, _ = loss_and_grad(zero, np.ones((16, 8)), np.r_[np.ones(4), np.zeros(4)])
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_confident_correct_prediction_has_vanishing_loss():
    m = _small_model()
    t = dict(m.tensors)
    t = {n: np.zeros_like(a) for n, a in t.items()}
    t["head_b"] = np.array([40.0])
    loss, _ = loss_and_grad(m.replace(t), np.ones((16, 8)), np.ones(8))
    assert loss < 1e-15


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    m = init_model(seed, in_dim=8, channels=5, hidden=4)
    rng = np.random.default_rng(seed + 10)
    x = rng.standard_normal((16, 8))
    target = rng.integers(0, 2, 8).astype(float)
    errors = block_relative_errors(m, x, target)
    assert max(errors.values()) < 1e-4, errors


def test_gradient_batched_and_odd_length():
    m = init_model(7, in_dim=8, channels=5, hidden=4)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 15, 8))
    target = rng.integers(0, 2, (2, 8)).astype(float)
    errors = block_relative_errors(m, x, target)
    assert max(errors.values()) < 1e-4, errors


def test_batch_gradient_is_mean_of_clip_gradients():
    m = init_model(2, in_dim=8, channels=5, hidden=4)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 16, 8))
    y = rng.integers(0, 2, (3, 8)).astype(float)
    loss, grads = loss_and_grad(m, x, y)
    singles = [loss_and_grad(m, x[i], y[i]) for i in range(3)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
    for name in grads:
        np.testing.assert_allclose(grads[name], np.mean([s[1][name] for s in singles], axis=0),
                                   rtol=1e-10, atol=1e-15)


# ---------------------------------------------------------------- optimizer and stopping

def test_adam_single_step_closed_form():
    for p0, target, lr in [(0.0, 3.0, 0.1), (5.0, -2.0, 1e-3), (1.0, 1.0 + 1e-6, 0.5)]:
        g = p0 - target  # gradient of (p - target)^2 / 2
        opt = Adam(lr, 0.9, 0.999, 1e-8)
        new = opt.step({"p": np.array([p0])}, {"p": np.array([g])})["p"][0]
        # bias-corrected first step: m_hat = g, v_hat = g^2
        expected = p0 - lr * g / (abs(g) + 1e-8)
        assert abs(new - expected) <= 1e-12


def test_adam_second_step_closed_form():
    b1, b2, lr, eps = 0.9, 0.999, 0.01, 1e-8
    opt = Adam(lr, b1, b2, eps)
    g1, g2 = 2.0, -1.0
    p1 = opt.step({"p": np.array([0.0])}, {"p": np.array([g1])})["p"]
    p2 = opt.step({"p": p1}, {"p": np.array([g2])})["p"][0]
    m = b1 * (1 - b1) * g1 + (1 - b1) * g2
    v = b2 * (1 - b2) * g1 ** 2 + (1 - b2) * g2 ** 2
    expected = p1[0] - lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)
    assert abs(p2 - expected) <= 1e-12


def test_early_stopping_patience_one():
    stop = EarlyStopping(1)
    assert stop.update(1, 0.7) is False
    assert stop.update(2, 0.7) is True  # no strict improvement
    assert stop.best_epoch == 1


def test_early_stopping_waits_for_patience():
    stop = EarlyStopping(3)
    decisions = [stop.update(e, v) for e, v in enumerate([5, 4, 4.5, 4.2, 3.9, 4, 4, 4], start=1)]
    assert decisions == [False] * 7 + [True]
    assert stop.best_epoch == 5


def test_training_stops_one_patience_after_best():
    data = _toy_examples(12, seed=1)
    cfg = TrainConfig(batch_size=4, max_epochs=400, patience=1, learning_rate=0.05, channels=5, hidden=4)
    res = train_model(data[:8], data[8:], cfg)
    assert res.epochs_run < 400
    assert res.epochs_run == res.best_epoch + 1
    assert res.val_loss[res.best_epoch - 1] == min(res.val_loss)


def test_training_reduces_loss_and_is_deterministic():
    data = _toy_examples(24, seed=2)
    cfg = TrainConfig(batch_size=8, max_epochs=30, patience=30, learning_rate=0.02, channels=6, hidden=4)
    a = train_model(data[:16], data[16:], cfg)
    b = train_model(data[:16], data[16:], cfg)
    assert a.train_loss[-1] < a.initial_train_loss
    assert a.train_loss == b.train_loss and a.val_loss == b.val_loss
    for name in a.params.tensors:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_zero_label_clips_never_batched():
    data = _toy_examples(20, seed=3, zero_label_every=3)
    cfg = TrainConfig(batch_size=4, max_epochs=5, patience=5, learning_rate=0.01, channels=5, hidden=4)
    res = train_model(data[:14], data[14:], cfg)
    assert all(np.isfinite(res.train_loss)) and all(np.isfinite(res.val_loss))
    assert all(np.isfinite(a).all() for a in res.params.tensors.values())


def test_empty_pool_errors():
    data = _toy_examples(4, seed=0, zero_label_every=1)
    cfg = TrainConfig(channels=4, hidden=2)
    with pytest.raises(ValueError, match="empty training pool"):
        train_model(data, _toy_examples(2), cfg)
    with pytest.raises(ValueError, match="empty validation pool"):
        train_model(_toy_examples(2), data, cfg)


def test_train_returns_one_model_per_fold_pair():
    data = _toy_examples(6, seed=4)
    folds = [{"A": FoldData(data[:4], data[4:]), "B": FoldData(data[2:], data[:2])} for _ in range(15)]
    cfg = TrainConfig(batch_size=4, max_epochs=1, patience=1, channels=4, hidden=2, fine_tune_epochs=1)
    full = train(TrainScenario("full", ("A",)), folds, cfg)
    assert len(full) == 15
    mixed = train(TrainScenario("mixed", ("A", "B")), folds, cfg)
    assert len(mixed) == 15
    adapted = train(TrainScenario("domain_adapt", ("A", "B")), folds, cfg, pretrained=[r.params for r in full])
    assert len(adapted) == 15
    with pytest.raises(ValueError):
        train(TrainScenario("domain_adapt", ("A", "B")), folds, cfg)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        TrainScenario("mixed", ("A",))
    with pytest.raises(ConfigError):
        TrainScenario("full", ("A", "B"))
    with pytest.raises(ConfigError):
        TrainScenario("boost", ("A",))


# ---------------------------------------------------------------- fine-tuning

def test_fine_tune_zero_epochs_is_identity():
    data = _toy_examples(8)
    m = init_model(1, 8, 5, 4)
    res = fine_tune(m, data[:6], data[6:], TrainConfig(fine_tune_epochs=0, channels=5, hidden=4))
    assert res.params is m


def test_fine_tune_vanishing_rate_keeps_weights():
    data = _toy_examples(8)
    m = init_model(1, 8, 5, 4)
    cfg = TrainConfig(fine_tune_epochs=3, learning_rate=1e-20, batch_size=4, channels=5, hidden=4)
    res = fine_tune(m, data[:6], data[6:], cfg)
    for name in m.tensors:
        assert np.max(np.abs(res.params[name] - m[name])) <= 1e-12


def test_fine_tune_runs_at_most_configured_epochs():
    data = _toy_examples(10)
    m = init_model(1, 8, 5, 4)
    cfg = TrainConfig(fine_tune_epochs=4, patience=10, learning_rate=0.01, batch_size=4, channels=5, hidden=4)
    res = fine_tune(m, data[:8], data[8:], cfg)
    assert res.epochs_run == 4


def test_fine_tune_shape_mismatch():
    data = _toy_examples(4)
    with pytest.raises(ShapeError):
        fine_tune(init_model(0, 9, 4, 2), data[:2], data[2:], TrainConfig(channels=4, hidden=2))


def test_domain_adaptation_record(capsys):
    """Desk-scale record of fine-tuning on a shifted target (reported, not asserted)."""
    source = _toy_examples(16, seed=5)
    rng = np.random.default_rng(8)
    target = []
    for i in range(16):
        x = rng.standard_normal((16, 8))
        y = (x[0::2, 3] + x[1::2, 3] > 0).astype(float)  # decision feature moved
        target.append(Example(f"t{i}", x, y, 1))
    cfg = TrainConfig(batch_size=8, max_epochs=40, patience=40, learning_rate=0.02, fine_tune_epochs=20,
                      channels=6, hidden=4)
    pre = train_model(source[:12], source[12:], cfg).params
    adapted = fine_tune(pre, target[:12], target[12:], cfg).params
    before, after = dataset_loss(pre, target[12:]), dataset_loss(adapted, target[12:])
    with capsys.disabled():
        print(f"\n[record] target validation loss: pretrained {before:.4f} -> adapted {after:.4f}")
    assert np.isfinite(before) and np.isfinite(after)


# ---------------------------------------------------------------- model files

def test_model_round_trip(tmp_path):
    m = init_model(11, 20, 7, 3, task="E")
    save_model(tmp_path / "m.bin", m)
    back = load_model(tmp_path / "m.bin")
    assert back.task == "E"
    for name in m.tensors:
        assert back[name].tobytes() == m[name].tobytes()
    assert dumps_model(back) == dumps_model(m)


def test_model_truncated_is_corrupt():
    data = dumps_model(init_model(0, 8, 4, 2))
    for cut in (3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(ModelFormatError, match="corrupt"):
            loads_model(data[:cut])


def test_model_wrong_version():
    data = bytearray(dumps_model(init_model(0, 8, 4, 2)))
    data[4] = 99
    with pytest.raises(ModelFormatError, match="version"):
        loads_model(bytes(data))


# ---------------------------------------------------------------- baseline and config

def test_baseline_constant_on_zero_features():
    p = baseline_detect(FeatureTensor(np.zeros((938, 193))), "I")
    assert len(p) == 469
    np.testing.assert_array_equal(p.p, expit(-1.0))


def test_baseline_finds_loud_burst():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(CLIP_SAMPLES) * 30
    start, stop = 24000, 26000  # 6.0 s .. 6.5 s
    t = np.arange(stop - start) / 4000
    x[start:stop] += 8000 * np.sin(2 * np.pi * 700 * t)
    p = baseline_detect(extract(x.astype(np.int16)).features, "E")
    j = int(np.argmax(p.p))
    assert start / 128 - 1 <= j <= stop / 128 + 1


def test_baseline_band_choice():
    x = np.zeros((938, 193))
    x[:, ENERGY_OFFSET + 3] = 1.0
    cfg = BaselineConfig(gain=1.0, offset=0.0)
    assert baseline_detect(FeatureTensor(x), "C", cfg).p[0] == pytest.approx(expit(1.0))
    assert baseline_detect(FeatureTensor(x), "I", cfg).p[0] == pytest.approx(0.5)


def test_train_config_file(tmp_path):
    (tmp_path / "t.cfg").write_text("# desk run\nbatch_size = 8\nlearning_rate = 0.003  # faster\n")
    cfg = from_mapping(TrainConfig, read_kv(tmp_path / "t.cfg"))
    assert cfg.batch_size == 8 and cfg.learning_rate == 0.003 and cfg.patience == 50
    with pytest.raises(ConfigError):
        from_mapping(TrainConfig, {"batch_size": "zero"})
    with pytest.raises(ConfigError):
        from_mapping(TrainConfig, {"momentum": "0.9"})
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
