"""Targeted fingerprints: mapping functions and testing-sample extraction.

Two mapping functions turn a model's responses into a real fingerprint
vector ``v`` whose signs should reproduce a registered binary target:

* ``fit-modeldiff`` (bit-wise): one (benign, perturbed) image pair per bit,
  ``v_i = cos_sim(M(x_i + r_i), M(x_i)) - |cos(alpha)|``.
* ``fit-lime`` (list-wise): superpixel masks over one image, the entropy of
  the model's output on each masked copy, and a ridge least-squares fit of
  those entropies onto the mask matrix.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .models import Model

logger = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]

DEFAULT_ALPHA = 7 * math.pi / 8
DEFAULT_EPSILON = 0.01


# ------------------------------------------------------------------ targets


@dataclass(frozen=True)
class TargetFingerprint:
    bits: np.ndarray  # int8 in {-1, +1}, row-major mu x nu
    mu: int
    nu: int
    provenance: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8).ravel()
        if bits.size != self.mu * self.nu:
            raise ValueError(f"fingerprint has {bits.size} bits, expected mu*nu = {self.mu * self.nu}")
        if not np.isin(bits, (-1, 1)).all():
            raise ValueError("fingerprint bits must be -1 or +1")
        object.__setattr__(self, "bits", bits)

    @property
    def k(self) -> int:
        return self.bits.size

    def __eq__(self, other):
        return (isinstance(other, TargetFingerprint) and self.mu == other.mu
                and self.nu == other.nu and np.array_equal(self.bits, other.bits))

    __hash__ = None


def block_bounds(size: int, parts: int) -> np.ndarray:
    """Edges of ``parts`` contiguous, non-empty blocks covering ``range(size)``."""
    if parts <= 0 or size < parts:
        raise ValueError(f"cannot split {size} pixels into {parts} blocks")
    return np.array([(i * size) // parts for i in range(parts + 1)])


def fingerprint_from_bitmap(image: np.ndarray, mu: int = 16, nu: int = 16) -> TargetFingerprint:
    """Average-pool a grayscale bitmap to mu x nu and threshold at 0.5 (bright -> +1)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.size == 0:
        raise ValueError("bitmap is empty")
    if mu * nu == 0:
        raise ValueError("fingerprint grid must have mu*nu > 0")
    rows, cols = block_bounds(img.shape[0], mu), block_bounds(img.shape[1], nu)
    pooled = np.array([[img[rows[i]:rows[i + 1], cols[j]:cols[j + 1]].mean() for j in range(nu)]
                       for i in range(mu)])
    bits = np.where(pooled >= 0.5, 1, -1)
    digest = hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()
    return TargetFingerprint(bits.ravel(), mu, nu, provenance=f"bitmap:{digest}")


def logo_bitmap(size: int = 64) -> np.ndarray:
    """Built-in target logo: a dark page with a folded corner and a light pen stroke."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.ones((size, size))
    page = (xx > 0.18) & (xx < 0.72) & (yy > 0.08) & (yy < 0.92)
    fold = (xx - 0.52) > (0.28 - (yy - 0.08)) * 1.0
    img[page & ~(fold & (yy < 0.28))] = 0.0
    for y0 in (0.35, 0.5, 0.65):
        img[(np.abs(yy - y0) < 0.035) & (xx > 0.26) & (xx < 0.62)] = 1.0
    pen = np.abs((yy - 0.95) + 1.1 * (xx - 0.55)) < 0.07
    img[pen & (xx > 0.55) & (yy > 0.35)] = 0.0
    return img


def random_target(mu: int = 16, nu: int = 16, seed: int = 0) -> TargetFingerprint:
    rng = np.random.default_rng(seed)
    return TargetFingerprint(rng.choice(np.array([-1, 1], dtype=np.int8), size=mu * nu), mu, nu,
                             provenance=f"noise:{seed}")


# ------------------------------------------------------------------ mapping


@dataclass(frozen=True)
class MappingConfig:
    kind: str = "fit-modeldiff"
    bias_alpha: float = DEFAULT_ALPHA
    mu: int = 16
    nu: int = 16
    mask_count: int | None = None  # None -> 4k
    mask_seed: int = 0
    ridge: float = 1e-6
    label_only: bool = False

    def __post_init__(self):
        if self.kind not in ("fit-modeldiff", "fit-lime"):
            raise ValueError(f"unknown mapping kind {self.kind!r}")
        if self.mu <= 0 or self.nu <= 0:
            raise ValueError("mu and nu must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    @property
    def k(self) -> int:
        return self.mu * self.nu

    @property
    def masks(self) -> int:
        return 4 * self.k if self.mask_count is None else self.mask_count


def modeldiff_bias(alpha: float) -> float:
    return abs(math.cos(alpha))


def map_modeldiff(probs_perturbed, probs_benign, bias_alpha: float = DEFAULT_ALPHA):
    """``cos_sim - |cos(alpha)|`` row-wise; works on arrays or Tensors."""
    bias = modeldiff_bias(bias_alpha)
    if isinstance(probs_perturbed, Tensor) or isinstance(probs_benign, Tensor):
        return ag.cosine_similarity(probs_perturbed, probs_benign) - bias
    with ag.no_grad():
        return ag.cosine_similarity(Tensor(probs_perturbed), Tensor(probs_benign)).data - bias


def mask_matrix(k: int, c: int, seed: int) -> np.ndarray:
    """Bernoulli(1/2) masks, shape (c, k); all-zero rows are redrawn."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=(c, k)).astype(np.float64)
    empty = ~a.any(axis=1)
    while empty.any():
        a[empty] = rng.integers(0, 2, size=(int(empty.sum()), k))
        empty = ~a.any(axis=1)
    return a


def superpixel_index(image_hw: tuple[int, int], mu: int, nu: int) -> np.ndarray:
    """(H, W) map from pixel to row-major superpixel id on a mu x nu grid."""
    h, w = image_hw
    rows, cols = block_bounds(h, mu), block_bounds(w, nu)
    ri = np.searchsorted(rows, np.arange(h), side="right") - 1
    ci = np.searchsorted(cols, np.arange(w), side="right") - 1
    return ri[:, None] * nu + ci[None, :]


def pixel_masks(a: np.ndarray, image_shape, mu: int, nu: int) -> np.ndarray:
    """Expand (c, k) superpixel masks to (c, 1, H, W) pixel masks."""
    c, h, w = image_shape
    idx = superpixel_index((h, w), mu, nu)
    return a[:, idx][:, None, :, :]


def lime_solver(a: np.ndarray, ridge: float) -> np.ndarray:
    """The (k, c) matrix ``(A^T A + ridge I)^-1 A^T``."""
    k = a.shape[1]
    gram = a.T @ a + ridge * np.eye(k)
    return np.linalg.solve(gram, a.T)


@dataclass
class LimeOperator:
    """Precomputed masks and solver for one (config, image shape)."""

    config: MappingConfig
    image_shape: tuple[int, int, int]
    a: np.ndarray = field(init=False)
    masks: np.ndarray = field(init=False)
    solver: np.ndarray = field(init=False)

    def __post_init__(self):
        cfg = self.config
        _, h, w = self.image_shape
        if h < cfg.mu or w < cfg.nu:
            raise ValueError(f"image {h}x{w} is smaller than the {cfg.mu}x{cfg.nu} superpixel grid")
        self.a = mask_matrix(cfg.k, cfg.masks, cfg.mask_seed)
        self.masks = pixel_masks(self.a, self.image_shape, cfg.mu, cfg.nu)
        self.solver = lime_solver(self.a, cfg.ridge)

    def masked(self, image: np.ndarray) -> np.ndarray:
        return image[None] * self.masks

    def fit(self, p: np.ndarray) -> np.ndarray:
        return self.solver @ p


_LIME_CACHE: dict = {}


def lime_operator(config: MappingConfig, image_shape) -> LimeOperator:
    key = (config.mu, config.nu, config.masks, config.mask_seed, config.ridge, tuple(image_shape))
    op = _LIME_CACHE.get(key)
    if op is None:
        if len(_LIME_CACHE) > 8:
            _LIME_CACHE.clear()
        op = _LIME_CACHE[key] = LimeOperator(config, tuple(image_shape))
    return op


def one_hot_top1(probs: np.ndarray) -> np.ndarray:
    out = np.zeros_like(probs)
    out[np.arange(len(probs)), probs.argmax(axis=1)] = 1.0
    return out


def map_lime(predict: Predictor, sample: np.ndarray, config: MappingConfig) -> np.ndarray:
    """Entropy attribution of each superpixel of ``sample`` (C, H, W)."""
    op = lime_operator(config, sample.shape)
    probs = predict(op.masked(sample))
    if config.label_only:
        probs = one_hot_top1(probs)
    with ag.no_grad():
        p = ag.entropy(Tensor(probs)).data
    return op.fit(p)


def hinge_loss(v, target, epsilon: float = DEFAULT_EPSILON):
    """``sum_i max(0, epsilon - v_i * F_i)`` over the last axis."""
    bits = target.bits if isinstance(target, TargetFingerprint) else np.asarray(target)
    if v.shape[-1] != bits.size:
        raise ValueError(f"hinge_loss: vector length {v.shape[-1]} != fingerprint length {bits.size}")
    f = bits.astype(np.float64)
    if isinstance(v, Tensor):
        return ag.sum(ag.relu(epsilon - v * f), axis=-1)
    return np.maximum(0.0, epsilon - np.asarray(v) * f).sum(axis=-1)


# ----------------------------------------------------------------- packages


@dataclass
class ExtractionConfig:
    lam: float = 1.0
    epsilon: float = DEFAULT_EPSILON
    epochs: int = 300
    lr_max: float = 1.2e-2
    lr_min: float = 4e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    n_samples: int = 4  # fit-lime only
    lime_backprop_masks: int | None = 256  # fit-lime: masked images backpropagated per step; None -> all
    polish_epochs: int = 0  # source-only epochs over still-wrong samples after the main run
    init_scale: float = 1e-3
    step_norm: str = "rms"  # none | l2 | rms | sign
    restart_floor: float = 1e-8
    restart_patience: int = 10
    seed: int = 0


def modeldiff_recipe() -> ExtractionConfig:
    """Desk-scale fit-modeldiff settings: large random starts, no norm penalty.

    With ``lam > 0`` the perturbations shrink until independent models also
    reproduce most bits, so separation needs the penalty off.
    """
    return ExtractionConfig(lam=0.0, epochs=150, init_scale=0.15, step_norm="l2", lr_max=1.2e-2, lr_min=4e-3,
                            polish_epochs=40)


def lime_recipe() -> ExtractionConfig:
    return ExtractionConfig(lam=1.0, epochs=200, init_scale=0.01, step_norm="sign", lr_max=5e-3, lr_min=1e-3,
                            lime_backprop_masks=256, polish_epochs=60)


@dataclass
class FingerprintPackage:
    target: TargetFingerprint
    mapping: MappingConfig
    x0: np.ndarray  # (n, C, H, W)
    r: np.ndarray  # same shape as x0
    extraction: ExtractionConfig
    converged: bool = True

    @property
    def samples(self) -> np.ndarray:
        return np.clip(self.x0 + self.r, 0.0, 1.0)

    @property
    def k(self) -> int:
        return self.target.k

    def perturbation_norm(self) -> float:
        """Mean per-sample l2 norm of the perturbation, per pixel (RMS)."""
        flat = self.r.reshape(len(self.r), -1)
        return float(np.sqrt((flat ** 2).mean(axis=1)).mean())

    @property
    def digest(self) -> str:
        from .package_io import package_digest
        return package_digest(self)


def evaluate_fingerprint(predict, package: FingerprintPackage) -> np.ndarray:
    """Fingerprint vector of a suspect (model or prediction callback)."""
    if isinstance(predict, Model):
        predict = predict.predict
    cfg = package.mapping
    samples = package.samples
    if cfg.kind == "fit-modeldiff":
        pert = predict(samples)
        benign = predict(package.x0)
        if pert.ndim != 2 or pert.shape[0] != len(samples):
            raise ag.ShapeError(f"suspect returned {pert.shape} for {len(samples)} samples")
        if cfg.label_only:
            pert, benign = one_hot_top1(pert), one_hot_top1(benign)
        return map_modeldiff(pert, benign, cfg.bias_alpha)
    vs = [map_lime(predict, s, cfg) for s in samples]
    return np.mean(vs, axis=0)


# --------------------------------------------------------------- extraction

INITIAL_POOLS = ("public", "gray", "test", "blend")
# Seed namespace for the owner's public images, apart from any model thief's draws.
OWNER_PUBLIC_SEED = 10_000


def initial_images(kind: str, n: int, held_out: np.ndarray | None = None, seed: int = 0,
                   image_shape=(1, 28, 28)) -> np.ndarray:
    """Starting images x0 for extraction.

    ``public``: generic blob images unrelated to the task; ``gray``: mid-gray
    noise; ``test``: held-out task images; ``blend``: convex mixes of two
    held-out images.
    """
    from .data import public_images

    rng = np.random.default_rng(seed)
    if held_out is not None:
        image_shape = held_out.shape[1:]
    if kind == "public":
        return public_images(n, image_shape, seed=OWNER_PUBLIC_SEED + seed)
    if kind == "gray":
        return np.clip(0.3 + rng.normal(0.0, 0.1, (n,) + tuple(image_shape)), 0.0, 1.0)
    if held_out is None or len(held_out) == 0:
        raise ValueError(f"initial image pool {kind!r} needs held-out images")
    if kind == "test":
        return held_out[rng.choice(len(held_out), n, replace=len(held_out) < n)]
    if kind == "blend":
        a = held_out[rng.choice(len(held_out), n)]
        b = held_out[rng.choice(len(held_out), n)]
        t = rng.uniform(0.35, 0.65, (n, 1, 1, 1))
        return t * a + (1 - t) * b
    raise ValueError(f"unknown initial image pool {kind!r}; choose from {INITIAL_POOLS}")


@dataclass
class ExtractionHistory:
    loss: list[float] = field(default_factory=list)
    source_ber: list[float] = field(default_factory=list)
    restarts: int = 0
    polish_epochs: int = 0
    seconds: float = 0.0


def _frozen(models: Sequence[Model]):
    for m in models:
        for p in m.parameters():
            p.requires_grad = False


def _thawed(models: Sequence[Model]):
    for m in models:
        for p in m.parameters():
            p.requires_grad = True


def _modeldiff_step(models, x0, r, f_bits, benign_probs, cfg: MappingConfig, ecfg: ExtractionConfig,
                    idx: np.ndarray, scale: float) -> float:
    rt = Tensor(r[idx], requires_grad=True)
    x = ag.clamp(ag.add(x0[idx], rt), 0.0, 1.0)
    total = 0.0
    active = np.zeros(len(idx))
    for m, benign in zip(models, benign_probs):
        v = map_modeldiff(m.forward(x), Tensor(benign[idx]), cfg.bias_alpha)
        hinge = ag.relu(ecfg.epsilon - v * f_bits[idx])
        penalty = ag.l2_norm(rt, axis=(1, 2, 3)) * (1.0 / math.sqrt(rt.data[0].size))
        loss = ag.sum(hinge + ecfg.lam * penalty) * scale
        ag.backward(loss)
        total += loss.item()
        active += hinge.data
    return total, rt.grad, active


def _lime_step(models, x0, r, target_bits, cfg: MappingConfig, ecfg: ExtractionConfig,
               i: int, scale: float, rng: np.random.Generator):
    """Loss and gradient for one fit-lime sample.

    Entropies of all c masked images come from a graph-free forward pass, which
    fixes dL/dp exactly. The gradient then flows through a random subset J of the
    masked images, each weighted by dL/dp_j * c/|J|, an unbiased estimate of the
    full backward pass at a fraction of its cost.
    """
    op = lime_operator(cfg, x0.shape[1:])
    c = len(op.a)
    f = target_bits.astype(np.float64)
    sub = c if ecfg.lime_backprop_masks is None else min(c, ecfg.lime_backprop_masks)
    rt = Tensor(r[i], requires_grad=True)
    x = ag.clamp(ag.add(x0[i], rt), 0.0, 1.0)
    penalty = ag.l2_norm(rt) * (1.0 / math.sqrt(rt.data.size))
    total = 0.0
    for m in models:
        with ag.no_grad():
            p = ag.entropy(m.forward(Tensor(op.masked(x.data)))).data
        v = op.fit(p)
        hinge = np.maximum(0.0, ecfg.epsilon - v * f)
        total += (hinge.sum() + ecfg.lam * penalty.item()) * scale
        dv = np.where(hinge > 0, -f, 0.0) * scale
        dp = op.solver.T @ dv
        rows = np.arange(c) if sub == c else np.sort(rng.choice(c, sub, replace=False))
        if not dp[rows].any():
            continue
        pj = ag.entropy(m.forward(ag.mul(x, op.masks[rows])))
        ag.backward(ag.sum(ag.mul(pj, Tensor(dp[rows] * (c / sub)))))
    if ecfg.lam:
        ag.backward(penalty * (ecfg.lam * scale * len(models)))
    grad = rt.grad if rt.grad is not None else np.zeros_like(rt.data)
    return total, grad, None


def _normalized(grad: np.ndarray, norms: np.ndarray, how: str) -> np.ndarray:
    """Rescale each sample's gradient; ``rms`` makes the per-pixel RMS of a step equal lr."""
    shape = (-1,) + (1,) * (grad.ndim - 1)
    if how == "none":
        return grad
    if how == "sign":
        return np.sign(grad)
    if how == "l2":
        return grad / np.maximum(norms, 1e-30).reshape(shape)
    if how == "rms":
        d = grad[0].size
        return grad * (np.sqrt(d) / np.maximum(norms, 1e-30)).reshape(shape)
    raise ValueError(f"unknown step_norm {how!r}")


def package_ber(model, package: FingerprintPackage) -> float:
    v = evaluate_fingerprint(model, package)
    bits = np.where(v >= 0, 1, -1)
    return float((bits != package.target.bits).mean())


def extract_testing_samples(source: Model, augmented: Sequence[Model], target: TargetFingerprint,
                            mapping: MappingConfig, x0: np.ndarray,
                            config: ExtractionConfig | None = None,
                            history: ExtractionHistory | None = None) -> FingerprintPackage:
    """Optimise perturbations so every model in {source} + augmented maps to ``target``.

    ``x0`` supplies the initial images: k of them for fit-modeldiff and
    ``config.n_samples`` for fit-lime (extra rows are ignored). After the main
    epochs, up to ``config.polish_epochs`` more run on the source model alone,
    over only the samples it still gets wrong, at the final learning rate.
    """
    ecfg = config or ExtractionConfig()
    if mapping.k != target.k:
        raise ValueError(f"mapping grid gives k={mapping.k}, target has {target.k} bits")
    models = [source] + [m for m in augmented if m is not source]
    n = target.k if mapping.kind == "fit-modeldiff" else ecfg.n_samples
    x0 = np.asarray(x0, dtype=np.float64)
    if len(x0) < n:
        raise ValueError(f"need {n} initial images, got {len(x0)}")
    x0 = x0[:n].copy()
    rng = np.random.default_rng(ecfg.seed)
    r = rng.normal(0.0, ecfg.init_scale, size=x0.shape) if ecfg.init_scale > 0 else np.zeros_like(x0)
    r = np.clip(x0 + r, 0.0, 1.0) - x0
    history = history if history is not None else ExtractionHistory()
    started = time.perf_counter()
    _frozen(models)
    try:
        opt = _Optimizer(x0, r, target, mapping, ecfg, rng, history)
        benign = [m.predict(x0) for m in models] if mapping.kind == "fit-modeldiff" else None
        for epoch in range(ecfg.epochs):
            lr = ag.cosine_annealing_lr(epoch, ecfg.epochs, ecfg.lr_max, ecfg.lr_min)
            history.loss.append(opt.epoch(models, benign, np.arange(n), lr))
        for _ in range(ecfg.polish_epochs):
            wrong = _source_misses(source, x0, r, target, mapping, ecfg.epsilon)
            if wrong is None or len(wrong) == 0:
                break
            opt.epoch([source], benign[:1] if benign else None, wrong, ecfg.lr_min, scale_n=n)
            history.polish_epochs += 1
    finally:
        _thawed(models)
    history.seconds = time.perf_counter() - started
    package = FingerprintPackage(target, mapping, x0, r, ecfg)
    ber = package_ber(source, package)
    history.source_ber.append(ber)
    package.converged = ber == 0.0
    if not package.converged:
        logger.warning("extraction did not converge: source-model BER %.4f after %d epochs", ber, ecfg.epochs)
    return package


def _source_misses(source, x0, r, target, mapping, epsilon):
    """Samples whose source hinge is still active (fit-modeldiff), or all samples while
    any bit is wrong (fit-lime); None when nothing is left to fix."""
    pkg = FingerprintPackage(target, mapping, x0, r, ExtractionConfig())
    v = evaluate_fingerprint(source, pkg)
    if mapping.kind == "fit-modeldiff":
        return np.flatnonzero(v * target.bits < epsilon)
    return np.arange(len(x0)) if np.any(np.where(v >= 0, 1, -1) != target.bits) else None


class _Optimizer:
    """Momentum SGD over per-sample perturbations, with step normalisation and restarts."""

    def __init__(self, x0, r, target, mapping, ecfg: ExtractionConfig, rng, history):
        self.x0, self.r, self.target, self.mapping, self.ecfg = x0, r, target, mapping, ecfg
        self.rng, self.history = rng, history
        self.f_bits = target.bits.astype(np.float64)
        n = len(x0)
        self.buf = np.zeros_like(r)
        self.best = np.full(n, np.inf)
        self.stale = np.zeros(n, dtype=np.int64)

    def epoch(self, models, benign, ids: np.ndarray, lr: float, scale_n: int | None = None) -> float:
        ecfg, r, x0 = self.ecfg, self.r, self.x0
        scale = 1.0 / (len(models) * (scale_n or len(ids)))
        if self.mapping.kind == "fit-modeldiff":
            order = ids[self.rng.permutation(len(ids))]
            batches = [order[i:i + ecfg.batch_size] for i in range(0, len(order), ecfg.batch_size)]
        else:
            batches = [np.array([i]) for i in ids]
        total = 0.0
        for idx in batches:
            if self.mapping.kind == "fit-modeldiff":
                loss, grad, active = _modeldiff_step(models, x0, r, self.f_bits, benign, self.mapping, ecfg,
                                                     idx, scale)
            else:
                loss, grad, active = _lime_step(models, x0, r, self.target.bits, self.mapping, ecfg,
                                                int(idx[0]), scale, self.rng)
                grad = grad[None]
            total += loss
            norms = np.sqrt((grad ** 2).reshape(len(grad), -1).sum(axis=1))
            if active is not None and ecfg.restart_floor > 0:
                self._restart(idx, grad, norms, active)
            g = _normalized(grad, norms, ecfg.step_norm) + ecfg.weight_decay * r[idx]
            self.buf[idx] = ecfg.momentum * self.buf[idx] + g
            r[idx] -= lr * self.buf[idx]
            r[idx] = np.clip(x0[idx] + r[idx], 0.0, 1.0) - x0[idx]
        return total

    def _restart(self, idx, grad, norms, active) -> None:
        # A sample whose output has saturated keeps an active hinge but no usable
        # gradient; redraw its perturbation instead of letting it sit there.
        ecfg, r, x0 = self.ecfg, self.r, self.x0
        stuck = (active > 0) & ((norms < ecfg.restart_floor) | (self.stale[idx] >= ecfg.restart_patience))
        if stuck.any():
            j = idx[stuck]
            fresh = self.rng.normal(0.0, max(ecfg.init_scale, 1e-3), size=r[j].shape)
            r[j] = np.clip(x0[j] + fresh, 0.0, 1.0) - x0[j]
            self.buf[j] = 0.0
            self.history.restarts += int(stuck.sum())
            grad[stuck] = 0.0
            self.stale[j] = 0
            self.best[j] = np.inf
        improved = active < self.best[idx] - 1e-6
        self.best[idx] = np.where(improved, active, self.best[idx])
        self.stale[idx] = np.where(improved | (active == 0), 0, self.stale[idx] + 1)
