import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitprint import reuse as R
from fitprint.data import synth_dataset
from fitprint.models import build_cnn, build_mlp

SHAPE = (1, 28, 28)


@pytest.fixture(scope="module")
def src():
    return build_cnn(10, seed=0)


@pytest.fixture(scope="module")
def data():
    return synth_dataset(10, 6, seed=1)


def test_default_specs_cover_twelve_models():
    names = [s.name for s in R.default_reuse_specs()]
    assert names == ["copy", "fine-tune-10", "fine-tune-50", "fine-tune-100", "prune-10", "prune-30",
                     "prune-50", "extract-same", "extract-different", "transfer-10", "transfer-50",
                     "transfer-100"]
    assert len({s.seed for s in R.default_reuse_specs()}) == 12


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown reuse technique"):
        R.ReuseSpec("melt")
    with pytest.raises(ValueError, match="p_layers"):
        R.ReuseSpec("fine-tune", p_layers=0.0)
    with pytest.raises(ValueError, match="prune_ratio"):
        R.ReuseSpec("prune", prune_ratio=1.0)


def test_copy_is_bitwise_equal(src):
    c = R.copy_model(src)
    assert np.array_equal(c.flat_weights(), src.flat_weights())
    c.param_layers()[0].params["w"].data[0] += 1
    assert not np.array_equal(c.flat_weights(), src.flat_weights())


@pytest.mark.parametrize("p, count", [(0.1, 1), (0.5, 3), (1.0, 5), (0.2, 1), (0.21, 2)])
def test_suffix_layers_ceil(src, p, count):
    assert len(R.suffix_layers(src, p)) == count


def test_fine_tune_touches_only_suffix(src, data):
    out = R.fine_tune(src, data, 0.5, epochs=1, seed=0)
    for layer_src, layer_out, trained in zip(src.param_layers(), out.param_layers(), [False, False, True, True, True]):
        same = np.array_equal(layer_src.params["w"].data, layer_out.params["w"].data)
        assert same != trained


def test_fine_tune_zero_epochs_is_copy(src, data):
    assert np.array_equal(R.fine_tune(src, data, 1.0, epochs=0).flat_weights(), src.flat_weights())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 50))
def test_prune_exact_count(ratio, seed):
    m = build_mlp(10, seed=seed)
    masks = R.prune_mask(m, ratio)
    total = sum(mk.size for mk in masks)
    assert sum(int((~mk).sum()) for mk in masks) == math.floor(ratio * total)
    # every pruned magnitude is <= every kept magnitude
    w = np.concatenate([l.params["w"].data.ravel() for l in m.param_layers()])
    keep = np.concatenate([mk.ravel() for mk in masks])
    if (~keep).any():
        assert np.abs(w[~keep]).max() <= np.abs(w[keep]).min()


def test_prune_tie_break_by_position():
    m = build_mlp(3, input_shape=(1, 2, 2), seed=0)
    for layer in m.param_layers():
        layer.params["w"].data[:] = 1.0
    masks = R.prune_mask(m, 0.25)
    flat = np.concatenate([mk.ravel() for mk in masks])
    n = math.floor(0.25 * flat.size)
    assert not flat[:n].any() and flat[n:].all()


def test_pruned_weights_stay_zero_after_recovery(src, data):
    out = R.prune(src, 0.3, data, recovery_epochs=1, seed=0)
    masks = R.prune_mask(src, 0.3)
    for layer, mk in zip(out.param_layers(), masks):
        assert np.all(layer.params["w"].data[~mk] == 0.0)
    for a, b in zip(src.param_layers(), out.param_layers()):
        assert np.array_equal(a.params["b"].data.shape, b.params["b"].data.shape)


def test_extract_rejects_empty_queries(src):
    with pytest.raises(ValueError, match="empty query set"):
        R.extract(src.predict, np.zeros((0,) + SHAPE), "cnn", 10)


def test_extract_different_arch(src):
    queries = np.random.default_rng(0).uniform(size=(40,) + SHAPE)
    student = R.extract(src.predict, queries, "mlp", 10, epochs=1, seed=0)
    assert student.arch == "mlp" and student.num_classes == 10


def test_transfer_head_and_frozen_prefix(src):
    new = R.transfer_dataset(5, 4, seed=0)
    out = R.transfer(src, new, 0.1, epochs=1, seed=0)
    assert out.num_classes == 5
    for a, b in zip(src.param_layers()[:-1], out.param_layers()[:-1]):
        assert np.array_equal(a.params["w"].data, b.params["w"].data)


def test_extraction_queries_mix():
    cfg = R.SuiteConfig()
    spec = R.ReuseSpec("extract", queries=100, public_fraction=0.3, seed=5)
    q = R.extraction_queries(cfg, spec)
    assert q.shape == (100,) + SHAPE
    assert np.array_equal(q, R.extraction_queries(cfg, spec))


def test_suite_provenance():
    m = build_mlp(10)
    suite = R.ModelSuite(R.SuiteMember("source", "source", m),
                         [R.SuiteMember("copy", "reused", m, parent="source")],
                         [R.SuiteMember("independent-1", "independent", m)])
    assert suite.provenance_root("copy") == "source"
    assert suite.provenance_root("independent-1") == "independent-1"
    assert [row["role"] for row in suite.manifest()] == ["source", "reused", "independent"]
