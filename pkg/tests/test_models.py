import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitprint import models as M
from fitprint.autograd import Tensor
from fitprint.data import Dataset, synth_dataset


@pytest.fixture(scope="module")
def small_data():
    return synth_dataset(4, 20, seed=3)


def test_cnn_shape_and_size():
    m = M.build_cnn(10)
    assert len(m.param_layers()) == 5
    assert 20_000 < m.num_params() < 40_000
    assert m.predict(np.zeros((2, 1, 28, 28))).shape == (2, 10)


def test_mlp_has_two_hidden_layers_of_128():
    m = M.build_mlp(10)
    widths = [layer.params["w"].shape[1] for layer in m.param_layers()]
    assert widths == [128, 128, 10]


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(sorted(M.ARCHITECTURES)), st.integers(0, 2**16))
def test_forward_is_a_distribution(arch, seed):
    m = M.build_model(arch, 7, seed=seed)
    x = np.random.default_rng(seed).uniform(0, 1, (3, 1, 28, 28))
    p = m.forward(Tensor(x)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(1), 1.0, atol=1e-9)


def test_wrong_input_shape_rejected():
    with pytest.raises(ValueError, match="expected input"):
        M.build_cnn(10).forward(Tensor(np.zeros((1, 1, 20, 20))))


def test_zero_epochs_leaves_parameters(small_data):
    m = M.build_cnn(4, seed=1)
    before = m.flat_weights()
    M.train(m, small_data, M.TrainConfig(epochs=0))
    assert np.array_equal(before, m.flat_weights())


def test_training_is_deterministic(small_data):
    runs = []
    for _ in range(2):
        m = M.build_cnn(4, seed=5)
        M.train(m, small_data, M.TrainConfig(epochs=1, seed=9))
        runs.append(m.flat_weights())
    assert np.array_equal(*runs)


def test_training_reduces_loss(small_data):
    m = M.build_mlp(4, seed=2)
    log = M.train(m, small_data, M.TrainConfig(epochs=4, seed=0))
    assert log.epoch_loss[-1] < log.epoch_loss[0]
    assert log.to_csv().startswith("epoch,loss,accuracy\n0,")


def test_divergence_aborts(small_data):
    m = M.build_mlp(4, seed=2)
    m.param_layers()[0].params["w"].data[:] = np.nan
    with pytest.raises(M.TrainingDiverged):
        M.train(m, small_data, M.TrainConfig(epochs=1))


def test_evaluate_uniform_model_near_chance():
    data = synth_dataset(10, 200, seed=0)
    acc = M.evaluate(lambda x: np.full((len(x), 10), 0.1), data)
    # argmax of a constant row is class 0, so accuracy equals class 0's share
    assert abs(acc - 0.1) <= 0.05


def test_evaluate_perfect_lookup_and_errors(small_data):
    lookup = {x.tobytes(): y for x, y in zip(small_data.images, small_data.labels)}

    def oracle(images):
        return np.eye(4)[[lookup[x.tobytes()] for x in images]]

    assert M.evaluate(oracle, small_data) == 1.0
    with pytest.raises(ValueError, match="empty"):
        M.evaluate(oracle, small_data.subset(np.arange(0)))
    with pytest.raises(ValueError, match="classes"):
        M.evaluate(lambda x: np.ones((len(x), 3)) / 3, small_data)


def test_train_rejects_class_mismatch(small_data):
    with pytest.raises(ValueError, match="classes"):
        M.train(M.build_cnn(10), small_data, M.TrainConfig(epochs=1))


def test_save_load_roundtrip(tmp_path):
    m = M.build_cnn(10, seed=4)
    M.save_model(m, tmp_path / "m.fpm")
    back = M.load_model(tmp_path / "m.fpm")
    assert np.array_equal(back.flat_weights(), m.flat_weights())
    assert back.arch == "cnn" and back.num_classes == 10
    x = np.random.default_rng(0).uniform(size=(2, 1, 28, 28))
    assert np.array_equal(back.predict(x), m.predict(x))


def test_truncated_model_file(tmp_path):
    raw = M.model_to_bytes(M.build_mlp(10))
    (tmp_path / "t.fpm").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(M.ModelFileError, match="corrupt model file"):
        M.load_model(tmp_path / "t.fpm")


def test_cross_architecture_load_names_both(tmp_path):
    M.save_model(M.build_mlp(10), tmp_path / "m.fpm")
    with pytest.raises(M.ModelFileError, match="'mlp'.*'cnn'"):
        M.load_model(tmp_path / "m.fpm", expect_arch="cnn")


def test_replace_head_changes_width():
    m = M.build_cnn(10, seed=0)
    t = M.replace_head(m, 5, seed=1)
    assert t.predict(np.zeros((1, 1, 28, 28))).shape == (1, 5)
    assert np.array_equal(t.param_layers()[0].params["w"].data, m.param_layers()[0].params["w"].data)
