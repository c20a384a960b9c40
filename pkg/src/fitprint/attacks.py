"""False-claim and removal attacks."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Dataset
from .fingerprint import (ExtractionConfig, FingerprintPackage, MappingConfig, TargetFingerprint,
                          extract_testing_samples, hinge_loss, lime_operator, map_modeldiff, package_ber)
from .models import Model, TrainingDiverged
from .verification import solve_threshold

logger = logging.getLogger(__name__)


@dataclass
class AttackReport:
    kind: str
    metric: str
    before: float
    after: float
    rows: list[dict] = field(default_factory=list)
    success: bool = False
    notes: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"attack: {self.kind}", f"metric: {self.metric}", f"before: {self.before:.6f}",
                 f"after: {self.after:.6f}", f"success: {str(self.success).lower()}"]
        lines += [f"{k}: {v}" for k, v in self.notes.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(self.rows)
        return buf.getvalue()


# ------------------------------------------------------ untargeted baseline


def input_gradient(model: Model, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x = Tensor(images, requires_grad=True)
    frozen = [p for p in model.parameters() if p.requires_grad]
    for p in frozen:
        p.requires_grad = False
    try:
        ag.backward(ag.cross_entropy(model.logits(x), labels) * len(images))
    finally:
        for p in frozen:
            p.requires_grad = True
    return x.grad


def fgsm_easy_samples(model: Model, seeds: np.ndarray, labels: np.ndarray, gamma: float) -> np.ndarray:
    """One signed descent step on the classification loss: x - gamma * sign(grad)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0:
        return np.array(seeds, dtype=np.float64)
    g = input_gradient(model, seeds, labels)
    return np.clip(seeds - gamma * np.sign(g), 0.0, 1.0)


def fgsm_adversarial(model: Model, seeds: np.ndarray, labels: np.ndarray, eta: float) -> np.ndarray:
    """One signed ascent step; used to build the baseline's perturbed partners."""
    g = input_gradient(model, seeds, labels)
    return np.clip(seeds + eta * np.sign(g), 0.0, 1.0)


@dataclass
class UntargetedBaseline:
    """Seed / perturbed pairs compared through decision distance vectors.

    A model's DDV holds ``1 - cos_sim(M(seed_i), M(perturbed_i))``; two models are
    compared by the cosine distance of their DDVs.
    """

    seeds: np.ndarray
    perturbed: np.ndarray

    @classmethod
    def generate(cls, source: Model, seeds: np.ndarray, eta: float = 0.1) -> "UntargetedBaseline":
        labels = source.predict(seeds).argmax(1)
        return cls(np.asarray(seeds, dtype=np.float64), fgsm_adversarial(source, seeds, labels, eta))

    def ddv(self, model) -> np.ndarray:
        predict = model.predict if isinstance(model, Model) else model
        with ag.no_grad():
            cos = ag.cosine_similarity(Tensor(predict(self.perturbed)), Tensor(predict(self.seeds))).data
        return 1.0 - cos

    def distance(self, a, b) -> float:
        da, db = self.ddv(a), self.ddv(b)
        denom = np.linalg.norm(da) * np.linalg.norm(db)
        if denom == 0:
            return 0.0 if np.array_equal(da, db) else 1.0
        return float(np.clip(1.0 - da @ db / denom, 0.0, 1.0))


def false_claim_untargeted(source: Model, independents: Sequence[Model], reused: Sequence[Model],
                           seeds: np.ndarray, seed_labels: np.ndarray, gamma: float = 0.03,
                           eta: float = 0.1) -> AttackReport:
    """Replace every registered testing sample with an easy sample of the source and compare distances.

    Both members of each (seed, partner) pair are pushed toward the source's
    label for them, since the adversary registers the whole pair. The attack
    counts as successful for an independent model when its distance after the
    substitution is at most the average source-to-reused distance.
    """
    clean = UntargetedBaseline.generate(source, seeds, eta)
    partner_labels = source.predict(clean.perturbed).argmax(1)
    attacked = UntargetedBaseline(fgsm_easy_samples(source, clean.seeds, seed_labels, gamma),
                                  fgsm_easy_samples(source, clean.perturbed, partner_labels, gamma))
    reused_avg = float(np.mean([clean.distance(source, m) for m in reused])) if reused else 0.0
    rows = []
    for i, m in enumerate(independents):
        before, after = clean.distance(source, m), attacked.distance(source, m)
        rows.append({"model": f"independent-{i}", "before": round(before, 6), "after": round(after, 6),
                     "reused_avg": round(reused_avg, 6), "claimed": after <= reused_avg})
    wins = sum(r["claimed"] for r in rows)
    before = float(np.mean([r["before"] for r in rows])) if rows else 0.0
    after = float(np.mean([r["after"] for r in rows])) if rows else 0.0
    return AttackReport("false-claim-untargeted", "ddv-distance", before, after, rows,
                        success=wins >= max(1, (2 * len(rows) + 2) // 3),
                        notes={"gamma": gamma, "reused_avg": round(reused_avg, 6), "claimed": wins})


# ------------------------------------------------------ targeted attacks


def false_claim_adaptive(adversary: Model, augmented: Sequence[Model], victims: Sequence,
                         target: TargetFingerprint, mapping: MappingConfig, x0: np.ndarray,
                         config: ExtractionConfig | None = None, kappa: float = 1e-9) -> AttackReport:
    """Extract a package on the adversary's model plus independent helpers, then test victims.

    Victims are prediction callbacks (or models, used only through ``predict``).
    """
    pkg = extract_testing_samples(adversary, list(augmented), target, mapping, x0, config)
    tau = solve_threshold(target.k, kappa)
    rows = []
    for i, victim in enumerate(victims):
        predict = victim.predict if isinstance(victim, Model) else victim
        b = package_ber(predict, pkg)
        rows.append({"victim": i, "ber": round(b, 6), "tau": tau, "claimed": b <= tau})
    own = package_ber(adversary, pkg)
    bers = [r["ber"] for r in rows]
    return AttackReport("false-claim-adaptive", "victim-ber", own, float(min(bers)) if bers else 1.0, rows,
                        success=any(r["claimed"] for r in rows),
                        notes={"augmented": len(augmented), "adversary_ber": round(own, 6), "tau": tau})


def mapped_vector(model: Model, samples: np.ndarray, x0: np.ndarray, mapping: MappingConfig,
                  lime_masks: int | None = None, rng=None) -> Tensor:
    """Fingerprint vector as a graph through the model's parameters.

    ``lime_masks`` subsamples the masked images (rows of the mask matrix); the
    least-squares fit then uses the matching rows.
    """
    if mapping.kind == "fit-modeldiff":
        return map_modeldiff(model.forward(Tensor(samples)), model.forward(Tensor(x0)), mapping.bias_alpha)
    op = lime_operator(mapping, samples.shape[1:])
    rows = np.arange(len(op.a))
    if lime_masks is not None and lime_masks < len(rows):
        rows = np.sort((rng or np.random.default_rng(0)).choice(rows, lime_masks, replace=False))
    a = op.a[rows]
    solver = np.linalg.solve(a.T @ a + max(mapping.ridge, 1e-6) * np.eye(a.shape[1]), a.T)
    vs = None
    for s in samples:
        p = ag.entropy(model.forward(Tensor(s[None] * op.masks[rows])))
        v = ag.reshape(ag.matmul(ag.reshape(p, (1, -1)), Tensor(solver.T)), (-1,))
        vs = v if vs is None else vs + v
    return vs * (1.0 / len(samples))


@dataclass
class RemovalConfig:
    epochs: int = 10
    lr: float = 0.005
    momentum: float = 0.9
    task_weight: float = 0.5
    batch_size: int = 32
    lime_masks: int = 256
    seed: int = 0


def _removal(victim: Model, adv_package: FingerprintPackage, target_bits: np.ndarray,
             task: Dataset, cfg: RemovalConfig, log: list) -> Model:
    """Fine-tune on ``hinge(v, target_bits) / k + task_weight * CE`` over the adversary's samples."""
    model = victim.copy()
    params = model.parameters()
    opt = ag.SGD(params, cfg.lr, cfg.momentum, 0.0)
    rng = np.random.default_rng(cfg.seed)
    mapping = adv_package.mapping
    samples, x0 = adv_package.samples, adv_package.x0
    eps = adv_package.extraction.epsilon
    n_batches = max(1, len(task) // cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(task))
        total = 0.0
        for b in range(min(n_batches, 8)):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            v = mapped_vector(model, samples, x0, mapping, cfg.lime_masks, rng)
            h = hinge_loss(v, target_bits, eps)
            fp = h * (1.0 / target_bits.size)
            ce = ag.cross_entropy(model.logits(Tensor(task.images[idx])), task.labels[idx])
            loss = fp + cfg.task_weight * ce
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"removal attack loss became {loss.item()} at epoch {epoch}")
            ag.backward(loss)
            opt.step()
            total = float(h.data)
        log.append(total)
        logger.debug("removal epoch %d hinge %.4f", epoch, total)
    return model


def overwrite_attack(victim: Model, adv_package: FingerprintPackage, task: Dataset,
                     config: RemovalConfig | None = None, log: list | None = None) -> Model:
    """Fine-tune so the adversary's own samples map to the adversary's target."""
    cfg = config or RemovalConfig()
    return _removal(victim, adv_package, adv_package.target.bits, task, cfg,
                    log if log is not None else [])


def unlearn_attack(victim: Model, owner_target: TargetFingerprint, adv_package: FingerprintPackage,
                   task: Dataset, config: RemovalConfig | None = None, log: list | None = None) -> Model:
    """Fine-tune so samples carrying the owner's (known) target map to its complement.

    The adversary never sees the owner's samples; ``adv_package`` holds samples
    the adversary extracted on the victim for the owner's target itself. Pushing
    the hinge toward ``-F`` keeps a gradient on bits that already match ``F``,
    which maximising the hinge on ``F`` would not.
    """
    cfg = config or RemovalConfig()
    return _removal(victim, adv_package, -owner_target.bits, task, cfg,
                    log if log is not None else [])
