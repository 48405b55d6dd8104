import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subnyquist.kspace import build_mask, predict_fold
from subnyquist.phantom import generate_dataset, render_phantom, separability_spec
from subnyquist.training import (
    NonFiniteError,
    TrainConfig,
    TrainingPair,
    TrainState,
    l2_loss,
    load_train_config,
    make_training_pairs,
    read_loss_history,
    rmsprop_step,
    save_train_config,
    train,
    write_loss_history,
)
from subnyquist.unet import UNetConfig, UNetWeights, init_weights

TINY = UNetConfig(input_size=16, depth=1, base_channels=2)


def scalar_state(w=0.0, acc=0.0):
    # a one-entry "network" is enough to exercise the optimizer
    weights = init_weights(UNetConfig(8, 1, 1), 0)
    weights.kernels["out.conv"][...] = w
    state = TrainState.fresh(weights)
    state.rms["out.conv"][...] = acc
    return state


# -- loss -------------------------------------------------------------------------------


def test_loss_identical_is_zero():
    a = np.random.default_rng(0).uniform(size=(4, 4))
    assert l2_loss(a, a) == 0.0


def test_loss_constant_offset():
    a = np.random.default_rng(1).uniform(size=(8, 8))
    assert l2_loss(a + 0.1, a) == pytest.approx(0.01, rel=1e-12)


def test_loss_direct_sum():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
    total = 0.0
    for i in range(4):
        for j in range(4):
            total += (a[i, j] - b[i, j]) ** 2
    assert l2_loss(a, b) == pytest.approx(total / 16, rel=1e-12)


def test_loss_batch_is_mean_of_images():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 4, 4))
    assert l2_loss(a, b) == pytest.approx(np.mean([l2_loss(a[i], b[i]) for i in range(3)]))


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        l2_loss(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert l2_loss(rng.normal(size=(4, 4)), rng.normal(size=(4, 4))) > 0


# -- RMSProp ------------------------------------------------------------------------------


def test_rmsprop_zero_gradient():
    state = scalar_state(w=0.3, acc=0.5)
    rmsprop_step(state, {k: np.zeros_like(v) for k, v in state.weights.kernels.items()}, TrainConfig())
    assert state.weights.kernels["out.conv"].item() == 0.3
    assert state.rms["out.conv"].item() == pytest.approx(0.45)


def test_rmsprop_single_step():
    state = scalar_state()
    grads = {k: np.zeros_like(v) for k, v in state.weights.kernels.items()}
    grads["out.conv"][...] = 1.0
    rmsprop_step(state, grads, TrainConfig(epsilon=1e-8))
    assert state.rms["out.conv"].item() == pytest.approx(0.1, rel=1e-15)
    assert state.weights.kernels["out.conv"].item() == pytest.approx(-0.001 / math.sqrt(0.1 + 1e-8), rel=1e-15)


def test_rmsprop_two_steps():
    state = scalar_state()
    grads = {k: np.zeros_like(v) for k, v in state.weights.kernels.items()}
    grads["out.conv"][...] = 0.5
    config = TrainConfig(epsilon=1e-8)
    w, acc = 0.0, 0.0
    for _ in range(2):
        rmsprop_step(state, grads, config)
        acc = 0.9 * acc + 0.1 * 0.25
        w = w - 0.001 * 0.5 / math.sqrt(acc + 1e-8)
    assert state.rms["out.conv"].item() == pytest.approx(acc, rel=1e-15)
    assert state.weights.kernels["out.conv"].item() == pytest.approx(w, rel=1e-15)


def test_rmsprop_rejects_nan():
    state = scalar_state()
    grads = {k: np.zeros_like(v) for k, v in state.weights.kernels.items()}
    grads["out.conv"][...] = np.nan
    with pytest.raises(NonFiniteError):
        rmsprop_step(state, grads, TrainConfig())


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
def test_accumulators_nonnegative(gs):
    state = scalar_state()
    for g in gs:
        grads = {k: np.full_like(v, g) for k, v in state.weights.kernels.items()}
        rmsprop_step(state, grads, TrainConfig())
        assert all(np.all(a >= 0) for a in state.rms.values())


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(rms_decay=1.0), dict(rms_decay=0), dict(batch_size=0), dict(epochs=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_config_defaults():
    c = TrainConfig()
    assert (c.learning_rate, c.rms_decay, c.batch_size, c.epochs) == (1e-3, 0.9, 32, 150)


# -- pairs --------------------------------------------------------------------------------


def test_pairs_full_mask():
    images = generate_dataset(3, 16, 0)
    for p in make_training_pairs(images, build_mask(16, 1, 0)):
        np.testing.assert_allclose(p.input, p.target, atol=1e-10)


def test_pairs_fold_oracle():
    y = render_phantom(separability_spec(), 64)
    (p,) = make_training_pairs([y], build_mask(64, 4, 0))
    np.testing.assert_allclose(p.input, np.abs(predict_fold(y, 4)), atol=1e-12)


def test_pairs_empty():
    assert make_training_pairs([], build_mask(16, 4, 0)) == []


def test_pairs_size_mismatch():
    with pytest.raises(ValueError):
        make_training_pairs([np.zeros((8, 8))], build_mask(16, 4, 0))
    with pytest.raises(ValueError):
        TrainingPair(np.zeros((8, 8)), np.zeros((16, 16)))


# -- training loop ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pairs():
    return make_training_pairs(generate_dataset(10, 16, 1), build_mask(16, 4, 2))


def test_zero_epochs_is_init(pairs):
    state = train(pairs, TrainConfig(epochs=0, seed=5), TINY)
    init = init_weights(TINY, 5).astype(np.float32)
    assert state.history == [] and state.epoch == 0
    for k in init.kernels:
        np.testing.assert_array_equal(state.weights.kernels[k], init.kernels[k])


def test_training_reproducible(pairs):
    config = TrainConfig(epochs=3, batch_size=4, seed=2)
    a, b = train(pairs, config, TINY), train(pairs, config, TINY)
    assert a.history == b.history
    for k in a.weights.kernels:
        assert a.weights.kernels[k].tobytes() == b.weights.kernels[k].tobytes()


def test_training_history_and_callback(pairs):
    seen = []
    state = train(pairs, TrainConfig(epochs=4, batch_size=3, seed=1), TINY, on_epoch=lambda s: seen.append(s.epoch))
    assert seen == [1, 2, 3, 4]
    assert len(state.history) == 4 and all(np.isfinite(state.history))


def test_training_reduces_loss_float64(pairs):
    config = TrainConfig(epochs=40, batch_size=5, seed=3, learning_rate=1e-2, dtype="float64")
    state = train(pairs, config, UNetConfig(16, 1, 4))
    assert state.history[-1] < 0.5 * state.history[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_nonfinite_input():
    bad = [TrainingPair(np.full((16, 16), np.inf), np.zeros((16, 16)))]
    with pytest.raises(NonFiniteError):
        train(bad, TrainConfig(epochs=1), TINY)


def test_training_empty():
    with pytest.raises(ValueError):
        train([], TrainConfig(epochs=1), TINY)


def test_training_wrong_size(pairs):
    with pytest.raises(ValueError):
        train(pairs, TrainConfig(epochs=1), UNetConfig(32, 1, 2))


# -- files --------------------------------------------------------------------------------


def test_loss_csv_round_trip(tmp_path):
    history = [0.5, 0.25, 1 / 3]
    write_loss_history(history, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss" and lines[1].startswith("1,")
    assert read_loss_history(tmp_path / "loss.csv") == history


def test_config_json_round_trip(tmp_path):
    c = TrainConfig(epochs=7, seed=3, learning_rate=2e-3)
    save_train_config(c, tmp_path / "c.json")
    assert load_train_config(tmp_path / "c.json") == c


def test_zero_weights_state():
    state = TrainState.fresh(UNetWeights.zeros(TINY))
    assert all(not np.any(a) for a in state.rms.values())
