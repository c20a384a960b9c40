import numpy as np
import pytest

from fitprint import attacks as A
from fitprint import fingerprint as FP
from fitprint.autograd import cross_entropy, Tensor
from fitprint.data import synth_dataset
from fitprint.models import TrainConfig, build_mlp, train

SHAPE = (1, 6, 6)


@pytest.fixture(scope="module")
def task():
    return synth_dataset(4, 30, image_shape=SHAPE, seed=0)


@pytest.fixture(scope="module")
def model(task):
    m = build_mlp(4, input_shape=SHAPE, seed=1)
    train(m, task, TrainConfig(epochs=5, seed=0))
    return m


def _loss(m, x, y):
    return cross_entropy(m.logits(Tensor(x)), y).item()


def test_fgsm_easy_lowers_loss_and_adversarial_raises(model, task):
    x, y = task.images[:40], task.labels[:40]
    easy = A.fgsm_easy_samples(model, x, y, 0.03)
    adv = A.fgsm_adversarial(model, x, y, 0.03)
    assert _loss(model, easy, y) < _loss(model, x, y) < _loss(model, adv, y)
    assert np.abs(easy - x).max() <= 0.03 + 1e-12
    assert easy.min() >= 0 and easy.max() <= 1


def test_fgsm_gamma_zero_is_identity(model, task):
    x = task.images[:5]
    assert np.array_equal(A.fgsm_easy_samples(model, x, task.labels[:5], 0.0), x)
    with pytest.raises(ValueError):
        A.fgsm_easy_samples(model, x, task.labels[:5], -0.1)


def test_input_gradient_leaves_parameters_trainable(model, task):
    A.input_gradient(model, task.images[:3], task.labels[:3])
    assert all(p.requires_grad for p in model.parameters())


def test_baseline_distance_properties(model, task):
    base = A.UntargetedBaseline.generate(model, task.images[:30], eta=0.1)
    other = build_mlp(4, input_shape=SHAPE, seed=9)
    assert base.distance(model, model) == pytest.approx(0.0, abs=1e-12)
    d = base.distance(model, other)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(base.distance(other, model))


def test_untargeted_claim_on_a_copy_is_trivial(model, task):
    rep = A.false_claim_untargeted(model, [model.copy()], [model.copy()], task.images[:20], task.labels[:20])
    assert rep.rows[0]["before"] == pytest.approx(0.0, abs=1e-12)
    assert rep.rows[0]["after"] == pytest.approx(0.0, abs=1e-12)


def test_untargeted_attack_makes_both_pair_members_easier(model, task):
    x, y = task.images[:40], task.labels[:40]
    clean = A.UntargetedBaseline.generate(model, x, eta=0.1)
    py = model.predict(clean.perturbed).argmax(1)
    easy = A.fgsm_easy_samples(model, clean.perturbed, py, 0.03)
    assert _loss(model, easy, py) < _loss(model, clean.perturbed, py)


def test_report_formats():
    rep = A.AttackReport("x", "ber", 0.1, 0.2, [{"a": 1, "b": 2}], True, {"tau": 0.3})
    assert rep.to_csv() == "a,b\n1,2\n"
    assert "success: true" in rep.to_text() and "tau: 0.3" in rep.to_text()
    assert A.AttackReport("x", "ber", 0, 0).to_csv() == ""


@pytest.mark.parametrize("kind", ["fit-modeldiff", "fit-lime"])
def test_mapped_vector_matches_evaluation(model, kind):
    mapping = FP.MappingConfig(kind=kind, mu=3, nu=3)
    x0 = np.random.default_rng(0).uniform(size=(9 if kind == "fit-modeldiff" else 2,) + SHAPE)
    pkg = FP.FingerprintPackage(FP.random_target(3, 3), mapping, x0, np.zeros_like(x0) + 0.05,
                                FP.ExtractionConfig(n_samples=2))
    graph = A.mapped_vector(model, pkg.samples, pkg.x0, mapping).data
    assert np.allclose(graph, FP.evaluate_fingerprint(model, pkg), atol=1e-8)


def _adv_package(model, seed=4):
    mapping = FP.MappingConfig(mu=3, nu=3)
    x0 = FP.initial_images("gray", 9, seed=seed, image_shape=SHAPE)
    cfg = FP.ExtractionConfig(lam=0.0, epochs=40, batch_size=9, init_scale=0.1, step_norm="l2", lr_max=0.05)
    return FP.extract_testing_samples(model, [], FP.random_target(3, 3, seed=seed), mapping, x0, cfg)


def test_overwrite_drives_adversary_hinge_down(model, task):
    adv = _adv_package(model)
    hinge0 = FP.hinge_loss(FP.evaluate_fingerprint(model, adv), adv.target.bits)
    log = []
    out = A.overwrite_attack(model, adv, task, A.RemovalConfig(epochs=3, lr=0.01), log)
    assert len(log) == 3
    assert FP.hinge_loss(FP.evaluate_fingerprint(out, adv), adv.target.bits) <= hinge0 + 1e-9
    assert not np.array_equal(out.flat_weights(), model.flat_weights())


def test_unlearn_moves_toward_complement(model, task):
    adv = _adv_package(model, seed=5)
    before = FP.package_ber(model, adv)
    out = A.unlearn_attack(model, adv.target, adv, task, A.RemovalConfig(epochs=5, lr=0.05, task_weight=0.0))
    assert FP.package_ber(out, adv) > before
