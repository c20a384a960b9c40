"""Derive reused models from a source model, and train independent ones."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import models as M
from .data import Dataset, public_images, synth_dataset
from .models import Model, TrainConfig

logger = logging.getLogger(__name__)

TECHNIQUES = ("copy", "fine-tune", "prune", "extract", "transfer")
Predictor = Callable[[np.ndarray], np.ndarray]

# Class prototypes for the second task used by transfer learning. Distinct from
# the default task seed so the two tasks share no class patterns.
TRANSFER_PATTERN_SEED = 4321
# Seed namespace for public images drawn by model thieves (disjoint from the owner's draws).
PUBLIC_QUERY_SEED = 70_000


@dataclass
class ReuseSpec:
    technique: str
    p_layers: float = 1.0
    prune_ratio: float = 0.3
    extract_arch: str = "same"
    num_classes: int = 5
    epochs: int = 10
    queries: int = 2000
    public_fraction: float = 0.5  # extract: share of queries drawn from the public image pool
    seed: int = 0

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown reuse technique {self.technique!r}; choose from {TECHNIQUES}")
        if self.technique in ("fine-tune", "transfer") and not 0 < self.p_layers <= 1:
            raise ValueError(f"p_layers must lie in (0, 1], got {self.p_layers}")
        if self.technique == "prune" and not 0 < self.prune_ratio < 1:
            raise ValueError(f"prune_ratio must lie in (0, 1), got {self.prune_ratio}")
        if self.technique == "extract" and self.extract_arch not in ("same", "different"):
            raise ValueError(f"extract_arch must be 'same' or 'different', got {self.extract_arch!r}")
        if not 0 <= self.public_fraction <= 1:
            raise ValueError(f"public_fraction must lie in [0, 1], got {self.public_fraction}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def name(self) -> str:
        if self.technique == "fine-tune":
            return f"fine-tune-{round(self.p_layers * 100)}"
        if self.technique == "prune":
            return f"prune-{round(self.prune_ratio * 100)}"
        if self.technique == "extract":
            return f"extract-{self.extract_arch}"
        if self.technique == "transfer":
            return f"transfer-{round(self.p_layers * 100)}"
        return self.technique


def default_reuse_specs(seed: int = 0) -> list[ReuseSpec]:
    """The twelve reused models: copy, 3 fine-tune, 3 prune, 2 extract, 3 transfer."""
    specs = [ReuseSpec("copy")]
    specs += [ReuseSpec("fine-tune", p_layers=p) for p in (0.1, 0.5, 1.0)]
    specs += [ReuseSpec("prune", prune_ratio=q) for q in (0.1, 0.3, 0.5)]
    specs += [ReuseSpec("extract", extract_arch=a, epochs=20) for a in ("same", "different")]
    specs += [ReuseSpec("transfer", p_layers=p, epochs=20) for p in (0.1, 0.5, 1.0)]
    for i, s in enumerate(specs):
        s.seed = seed + 17 * (i + 1)
    return specs


def suffix_layers(model: Model, p_layers: float):
    """The last ceil(p * L) parameterized layers (at least one)."""
    layers = model.param_layers()
    count = max(1, math.ceil(p_layers * len(layers) - 1e-9))
    return layers[-count:]


def _params_of(layers) -> list:
    return [t for layer in layers for t in layer.params.values()]


def reuse_train_config(epochs: int, seed: int, lr_max: float = 0.01) -> TrainConfig:
    return TrainConfig(epochs=epochs, lr_max=lr_max, lr_min=min(lr_max, 1e-3), seed=seed)


def copy_model(src: Model) -> Model:
    return src.copy()


def fine_tune(src: Model, data: Dataset, p_layers: float, epochs: int = 10, seed: int = 0,
              lr_max: float = 0.01) -> Model:
    """Keep training the last ceil(p * L) parameterized layers on ``data``."""
    if not 0 < p_layers <= 1:
        raise ValueError(f"p_layers must lie in (0, 1], got {p_layers}")
    if data.num_classes != src.num_classes:
        raise ValueError(f"fine-tune data has {data.num_classes} classes, source has {src.num_classes}")
    out = src.copy()
    if epochs > 0:
        M.fit(out, data.images, data.labels, reuse_train_config(epochs, seed, lr_max),
              params=_params_of(suffix_layers(out, p_layers)))
    return out


def prune_mask(model: Model, ratio: float) -> list[np.ndarray]:
    """Keep-masks for each weight tensor; the floor(ratio * |W|) smallest |w| are dropped.

    Ties are broken by flat position, earlier entries pruned first, scanning weight
    tensors in layer order.
    """
    weights = [layer.params["w"].data for layer in model.param_layers()]
    flat = np.concatenate([w.ravel() for w in weights])
    n_prune = math.floor(ratio * flat.size)
    keep = np.ones(flat.size, dtype=bool)
    if n_prune:
        order = np.lexsort((np.arange(flat.size), np.abs(flat)))
        keep[order[:n_prune]] = False
    masks, pos = [], 0
    for w in weights:
        masks.append(keep[pos:pos + w.size].reshape(w.shape))
        pos += w.size
    return masks


def prune(src: Model, ratio: float, data: Dataset | None = None, recovery_epochs: int = 2,
          seed: int = 0, lr_max: float = 0.01) -> Model:
    """Global magnitude pruning of weights (biases exempt), then optional recovery epochs.

    Pruned entries stay at zero through recovery: the mask is re-applied after
    every optimizer step.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"prune ratio must lie in (0, 1), got {ratio}")
    out = src.copy()
    masks = prune_mask(out, ratio)
    layers = out.param_layers()
    for layer, mask in zip(layers, masks):
        layer.params["w"].data = layer.params["w"].data * mask
    if data is not None and recovery_epochs > 0:
        cfg = reuse_train_config(1, seed, lr_max)
        for epoch in range(recovery_epochs):
            cfg.seed = seed + epoch
            _fit_masked(out, data, cfg, list(zip(layers, masks)))
    return out


def _fit_masked(model: Model, data: Dataset, cfg: TrainConfig, masked) -> None:
    from . import autograd as ag
    from .autograd import Tensor

    opt = ag.SGD(model.parameters(), cfg.lr_max, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(data))
    for i in range(0, len(data), cfg.batch_size):
        idx = order[i:i + cfg.batch_size]
        loss = ag.cross_entropy(model.logits(Tensor(data.images[idx])), data.labels[idx])
        ag.backward(loss)
        opt.step()
        for layer, mask in masked:
            layer.params["w"].data *= mask


def extract(predict: Predictor, queries: np.ndarray, arch: str, num_classes: int,
            epochs: int = 20, seed: int = 0, input_shape=None, lr_max: float = 0.05) -> Model:
    """Train a fresh student on (query, softmax output) pairs from a black-box callback."""
    queries = np.asarray(queries, dtype=np.float64)
    if len(queries) == 0:
        raise ValueError("empty query set")
    soft = np.asarray(predict(queries), dtype=np.float64)
    if soft.shape != (len(queries), num_classes):
        raise ValueError(f"prediction callback returned shape {soft.shape}, expected {(len(queries), num_classes)}")
    shape = tuple(input_shape or queries.shape[1:])
    student = M.build_model(arch, num_classes, shape, seed=seed)
    if epochs > 0:
        cfg = TrainConfig(epochs=epochs, lr_max=lr_max, lr_min=4e-3, seed=seed)
        M.fit(student, queries, soft, cfg, soft=True)
    return student


def transfer(src: Model, new_data: Dataset, p_layers: float, epochs: int = 20, seed: int = 0,
             lr_max: float = 0.01) -> Model:
    """Swap in a new head for ``new_data`` and train the last ceil(p * L) layers."""
    if not 0 < p_layers <= 1:
        raise ValueError(f"p_layers must lie in (0, 1], got {p_layers}")
    out = M.replace_head(src, new_data.num_classes, seed)
    if epochs > 0:
        M.fit(out, new_data.images, new_data.labels, reuse_train_config(epochs, seed, lr_max),
              params=_params_of(suffix_layers(out, p_layers)))
    return out


def transfer_dataset(num_classes: int, per_class: int, image_shape=(1, 28, 28), seed: int = 0,
                     split: str = "train") -> Dataset:
    return synth_dataset(num_classes, per_class, image_shape, seed=seed,
                         pattern_seed=TRANSFER_PATTERN_SEED, split=split)


# ------------------------------------------------------------------- suites


@dataclass
class SuiteConfig:
    num_classes: int = 10
    per_class: int = 200
    test_per_class: int = 60
    image_shape: tuple = (1, 28, 28)
    arch: str = "cnn"
    source_seed: int = 0
    data_seed: int = 0
    pattern_seed: int = 1234
    source_epochs: int = 30
    reuse_data_seed: int = 7
    reuse_per_class: int = 100
    transfer_per_class: int = 100
    independent_seeds: tuple = (101, 102, 103)
    independent_epochs: int = 30


@dataclass
class SuiteMember:
    name: str
    role: str  # "source" | "reused" | "independent" | "augmented"
    model: Model
    parent: str | None = None
    spec: dict | None = None
    notes: dict = field(default_factory=dict)


@dataclass
class ModelSuite:
    source: SuiteMember
    reused: list[SuiteMember]
    independent: list[SuiteMember]

    def members(self) -> list[SuiteMember]:
        return [self.source] + self.reused + self.independent

    def manifest(self) -> list[dict]:
        return [{"name": m.name, "role": m.role, "arch": m.model.arch, "num_classes": m.model.num_classes,
                 "parent": m.parent, "spec": m.spec, **m.notes} for m in self.members()]

    def provenance_root(self, name: str) -> str:
        by_name = {m.name: m for m in self.members()}
        node = by_name[name]
        seen = set()
        while node.parent is not None:
            if node.name in seen:
                raise ValueError(f"provenance cycle at {node.name}")
            seen.add(node.name)
            node = by_name[node.parent]
        return node.name


def train_source(cfg: SuiteConfig) -> tuple[Model, Dataset, Dataset]:
    from .data import train_test

    train, test = train_test(cfg.num_classes, cfg.per_class, cfg.test_per_class, cfg.image_shape,
                             cfg.data_seed, cfg.pattern_seed)
    model = M.build_model(cfg.arch, cfg.num_classes, cfg.image_shape, seed=cfg.source_seed)
    M.train(model, train, TrainConfig(epochs=cfg.source_epochs, seed=cfg.source_seed))
    return model, train, test


def train_independent(cfg: SuiteConfig, seed: int, arch: str | None = None) -> Model:
    """A model of the same task trained from scratch on its own draw of data."""
    data = synth_dataset(cfg.num_classes, cfg.per_class, cfg.image_shape, seed=10 * seed + 1,
                         pattern_seed=cfg.pattern_seed)
    model = M.build_model(arch or cfg.arch, cfg.num_classes, cfg.image_shape, seed=seed)
    M.train(model, data, TrainConfig(epochs=cfg.independent_epochs, seed=seed))
    return model


def derive(src: Model, spec: ReuseSpec, cfg: SuiteConfig) -> Model:
    """Apply one reuse spec to ``src``."""
    reuse_data = synth_dataset(cfg.num_classes, cfg.reuse_per_class, cfg.image_shape,
                               seed=cfg.reuse_data_seed + spec.seed, pattern_seed=cfg.pattern_seed)
    if spec.technique == "copy":
        return copy_model(src)
    if spec.technique == "fine-tune":
        return fine_tune(src, reuse_data, spec.p_layers, spec.epochs, spec.seed)
    if spec.technique == "prune":
        return prune(src, spec.prune_ratio, reuse_data, seed=spec.seed)
    if spec.technique == "extract":
        queries = extraction_queries(cfg, spec)
        arch = src.arch if spec.extract_arch == "same" else next(a for a in M.ARCHITECTURES if a != src.arch)
        return extract(src.predict, queries[:spec.queries], arch, src.num_classes, spec.epochs, spec.seed)
    new_data = transfer_dataset(spec.num_classes, cfg.transfer_per_class, cfg.image_shape, seed=spec.seed)
    return transfer(src, new_data, spec.p_layers, spec.epochs, spec.seed)


def extraction_queries(cfg: SuiteConfig, spec: ReuseSpec) -> np.ndarray:
    """A thief's query set: task-like samples mixed with generic public images."""
    n_public = int(round(spec.public_fraction * spec.queries))
    n_task = spec.queries - n_public
    parts = []
    if n_task:
        per_class = -(-n_task // cfg.num_classes)
        parts.append(synth_dataset(cfg.num_classes, per_class, cfg.image_shape, seed=cfg.reuse_data_seed + spec.seed + 1,
                                   pattern_seed=cfg.pattern_seed).images[:n_task])
    if n_public:
        parts.append(public_images(n_public, cfg.image_shape, seed=PUBLIC_QUERY_SEED + spec.seed))
    queries = np.concatenate(parts)
    return queries[np.random.default_rng(spec.seed).permutation(len(queries))]


def build_model_suite(cfg: SuiteConfig | None = None, specs: list[ReuseSpec] | None = None,
                      source: Model | None = None) -> ModelSuite:
    cfg = cfg or SuiteConfig()
    specs = default_reuse_specs() if specs is None else specs
    if source is None:
        source, _, _ = train_source(cfg)
    src = SuiteMember("source", "source", source)
    reused = []
    for spec in specs:
        logger.info("deriving %s", spec.name)
        reused.append(SuiteMember(spec.name, "reused", derive(source, spec, cfg), parent="source", spec=asdict(spec)))
    independent = []
    for s in cfg.independent_seeds:
        logger.info("training independent model seed %d", s)
        independent.append(SuiteMember(f"independent-{s}", "independent", train_independent(cfg, s),
                                       notes={"seed": s}))
    return ModelSuite(src, reused, independent)


AUGMENTED_SPECS = (
    ReuseSpec("fine-tune", p_layers=1.0, epochs=5), ReuseSpec("prune", prune_ratio=0.4),
    ReuseSpec("fine-tune", p_layers=0.5, epochs=5), ReuseSpec("extract", extract_arch="same", epochs=15),
    ReuseSpec("transfer", p_layers=0.5, epochs=10), ReuseSpec("prune", prune_ratio=0.2),
    ReuseSpec("fine-tune", p_layers=0.1, epochs=5), ReuseSpec("extract", extract_arch="different", epochs=15),
    ReuseSpec("extract", extract_arch="different", epochs=15), ReuseSpec("transfer", p_layers=1.0, epochs=10),
    ReuseSpec("extract", extract_arch="same", epochs=15), ReuseSpec("transfer", p_layers=0.1, epochs=10),
)


def augmented_models(source: Model, cfg: SuiteConfig, count: int = 5, seed: int = 500) -> list[Model]:
    """Reused variants the owner crafts for extraction, drawn apart from the test suite's seeds."""
    return [derive(source, replace(AUGMENTED_SPECS[i % len(AUGMENTED_SPECS)], seed=seed + 31 * i), cfg)
            for i in range(count)]
