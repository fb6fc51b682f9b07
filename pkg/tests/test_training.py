import math

import numpy as np
import pytest

from conftest import central_diff, max_rel_error
from gru_ntm import training as T
from gru_ntm.data import NormStats, WindowSet
from gru_ntm.gradcheck import TINY_CONFIG
from gru_ntm.model import ModelConfig, ModelParams, backward, forward
from gru_ntm.ntm import NtmConfig
from gru_ntm.storage import FormatError
from gru_ntm.tensor import Rng, ShapeError
from oracles import adam_scalar


def toy_sets(n=40, seed=0):
    """Tiny separable problem: the class index marks which feature is raised by 1."""
    rng = Rng(seed, 50)
    X = rng.uniform((n, 3, 4), 0, 1)
    y = np.array([i % 3 for i in range(n)])
    X[np.arange(n), :, y] += 1.0
    ws = WindowSet(X, y)
    return ws.subset(np.arange(0, n - 10)), ws.subset(np.arange(n - 10, n))


# -- loss --------------------------------------------------------------------

def test_cross_entropy_values():
    assert T.cross_entropy([0.5, 0.5, 0.0], [1, 0, 0]) == pytest.approx(math.log(2), abs=1e-15)
    assert T.cross_entropy([1.0, 0.0, 0.0], [1, 0, 0]) == 0.0
    assert T.cross_entropy([1 / 3] * 3, [0, 0, 1]) == pytest.approx(math.log(3), abs=1e-15)
    assert T.cross_entropy([0.0, 1.0, 0.0], [1, 0, 0]) == pytest.approx(-math.log(1e-12))
    batch = T.cross_entropy(np.array([[0.5, 0.5, 0], [1 / 3] * 3]), np.eye(3)[[0, 2]])
    np.testing.assert_allclose(batch, [math.log(2), math.log(3)], rtol=1e-15)


def test_fused_softmax_gradient_matches_finite_differences(rng):
    p = ModelParams.init(TINY_CONFIG, rng)
    X = rng.uniform((3, 3, 4), -1, 1)
    Y = np.eye(3)[[0, 1, 2]]

    def loss():
        return float(np.mean(T.cross_entropy(forward(p, X)[0], Y)))

    _, cache = forward(p, X)
    grads = backward(p, cache, Y)
    np.testing.assert_allclose(grads.out.b, (cache.probs - Y).mean(axis=0), rtol=0, atol=1e-15)
    assert max_rel_error(grads.out.b, central_diff(loss, p.out.b)) < 1e-7


# -- Adam --------------------------------------------------------------------

def adam_run(grads, theta0, cfg):
    theta = {"w": np.array([theta0])}
    state = T.AdamState.zeros(theta)
    out = []
    for g in grads:
        T.adam_step(state, theta, {"w": np.array([g])}, cfg)
        out.append(float(theta["w"][0]))
    return out


def test_adam_first_step_has_size_lr():
    cfg = T.TrainConfig()
    assert adam_run([0.1], 0.0, cfg)[0] == pytest.approx(-0.00099999990000001, abs=1e-15)
    assert adam_run([-250.0], 0.0, cfg)[0] == pytest.approx(0.001, rel=1e-9)


def test_adam_zero_gradient_is_noop():
    assert adam_run([0.0, 0.0, 0.0], 0.7, T.TrainConfig()) == [0.7, 0.7, 0.7]


def test_adam_matches_scalar_oracle():
    grads = [0.1, -0.2, 0.3, 0.05, -0.1]
    cfg = T.TrainConfig()
    got = adam_run(grads, 0.5, cfg)
    want = adam_scalar(0.5, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got, [0.4990000001, 0.4993661036038849, 0.4990228625394774,
                                     0.4986671547096806, 0.49851639053651675], rtol=0, atol=1e-12)


def test_adam_descends_quadratic_bowl():
    theta = {"w": np.array([3.0, -2.0])}
    state = T.AdamState.zeros(theta)
    cfg = T.TrainConfig(lr=0.1)
    for _ in range(500):
        T.adam_step(state, theta, {"w": 2 * theta["w"]}, cfg)
    assert np.all(np.abs(theta["w"]) < 1e-2)
    assert state.t == 500


# -- early stopping ----------------------------------------------------------

def test_early_stopping_sequence():
    es = T.EarlyStopping(patience=4)
    losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94]
    stops = [es.update(i + 1, v) for i, v in enumerate(losses)]
    assert stops == [False] * 5 + [True]
    assert es.best_epoch == 2 and es.best_loss == 0.9


def test_early_stopping_min_delta():
    es = T.EarlyStopping(patience=2, min_delta=1e-6)
    es.update(1, 1.0)
    assert es.update(2, 1.0 - 5e-7) is False and es.best_epoch == 1
    assert es.update(3, 0.5) is False and es.best_epoch == 3


def scripted_val(monkeypatch, losses):
    """Make ``train`` see the given validation losses, one per epoch."""
    real = T.evaluate
    seq = iter(losses)

    def fake(params, windows, chunk=256):
        loss, acc = real(params, windows, chunk)
        return (next(seq), acc) if windows.X.shape[0] == 10 else (loss, acc)

    monkeypatch.setattr(T, "evaluate", fake)


def test_train_stops_and_restores_best_weights(monkeypatch):
    scripted_val(monkeypatch, [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.5, 0.4])
    tr, va = toy_sets()
    snapshots = {}
    cfg = T.TrainConfig(max_epochs=20, patience=4, batch_size=8)
    ckpt, logs = T.train(TINY_CONFIG, tr, va, cfg,
                         callbacks=[lambda e, p: snapshots.__setitem__(e.epoch, p.copy())])
    assert len(logs) == 6
    assert ckpt.metadata["epoch"] == 2 and ckpt.metadata["val_loss"] == 0.9
    for name, t in ckpt.params.named_tensors().items():
        np.testing.assert_array_equal(t, snapshots[2].named_tensors()[name])
    assert not np.array_equal(ckpt.params.out.W, snapshots[6].out.W)


def test_train_without_trigger_runs_all_epochs(monkeypatch):
    scripted_val(monkeypatch, [1.0 - 0.1 * i for i in range(5)])
    tr, va = toy_sets()
    ckpt, logs = T.train(TINY_CONFIG, tr, va, T.TrainConfig(max_epochs=5, batch_size=8))
    assert [e.epoch for e in logs] == [1, 2, 3, 4, 5]
    assert ckpt.metadata["epoch"] == 5


def test_train_is_deterministic_and_learns(tmp_path):
    tr, va = toy_sets(60)
    cfg = T.TrainConfig(max_epochs=8, batch_size=8, lr=0.01, seed=3)
    a, logs_a = T.train(TINY_CONFIG, tr, va, cfg)
    b, logs_b = T.train(TINY_CONFIG, tr, va, cfg)
    for name, t in a.params.named_tensors().items():
        np.testing.assert_array_equal(t, b.params.named_tensors()[name])
    T.write_epoch_log(logs_a, tmp_path / "a.csv")
    T.write_epoch_log(logs_b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert logs_a[-1].train_loss < logs_a[0].train_loss
    back = T.read_epoch_log(tmp_path / "a.csv")
    assert [e.val_loss for e in back] == [e.val_loss for e in logs_a]


def test_train_aborts_on_divergence():
    tr, va = toy_sets()

    def poison(entry, params):
        params.dense1.W[0, 0] = np.nan

    with pytest.raises(T.DivergenceError, match="epoch 2"):
        T.train(TINY_CONFIG, tr, va, T.TrainConfig(max_epochs=5, batch_size=8), callbacks=[poison])


# -- checkpoints -------------------------------------------------------------

def make_checkpoint(seed=0):
    params = ModelParams.init(TINY_CONFIG, Rng(seed))
    norm = NormStats(np.arange(4.0), np.arange(4.0) + 2, ("a", "b", "c", "d"))
    return T.Checkpoint(TINY_CONFIG, params, norm, {"epoch": 3, "val_loss": 0.25})


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    ckpt = make_checkpoint()
    T.save_checkpoint(ckpt, tmp_path / "c.gntm")
    back = T.load_checkpoint(tmp_path / "c.gntm")
    assert back.config == TINY_CONFIG
    assert back.metadata == ckpt.metadata
    for name, t in ckpt.params.named_tensors().items():
        got = back.params.named_tensors()[name]
        assert got.tobytes() == t.tobytes(), name
    np.testing.assert_array_equal(back.norm.max, ckpt.norm.max)
    assert back.norm.feature_names == ckpt.norm.feature_names
    X = Rng(9).normal((2, 3, 4))
    np.testing.assert_array_equal(forward(back.params, X)[0], forward(ckpt.params, X)[0])
    T.save_checkpoint(back, tmp_path / "d.gntm")
    assert (tmp_path / "c.gntm").read_bytes() == (tmp_path / "d.gntm").read_bytes()


def test_checkpoint_truncated_or_corrupted(tmp_path):
    T.save_checkpoint(make_checkpoint(), tmp_path / "c.gntm")
    blob = (tmp_path / "c.gntm").read_bytes()
    (tmp_path / "t.gntm").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        T.load_checkpoint(tmp_path / "t.gntm")
    bad = bytearray(blob)
    bad[len(blob) // 2] ^= 0x01
    (tmp_path / "b.gntm").write_bytes(bytes(bad))
    with pytest.raises(FormatError):
        T.load_checkpoint(tmp_path / "b.gntm")
    (tmp_path / "x.gntm").write_bytes(b"not a checkpoint")
    with pytest.raises(FormatError):
        T.load_checkpoint(tmp_path / "x.gntm")


def test_checkpoint_config_mismatch_names_tensor(tmp_path):
    T.save_checkpoint(make_checkpoint(), tmp_path / "c.gntm")
    other = ModelConfig(4, window=3, gru1_units=7, gru2_units=4,
                        ntm=NtmConfig(4, 3, 4), dense_units=6)
    with pytest.raises(ShapeError, match="gru1"):
        T.load_checkpoint(tmp_path / "c.gntm", config=other)
