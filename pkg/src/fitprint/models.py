"""Small classifiers used as source, reused, augmented and independent models."""

from __future__ import annotations

import copy
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor

logger = logging.getLogger(__name__)

PARAM_KINDS = ("conv", "dense")
DEFAULT_INPUT_SHAPE = (1, 28, 28)

MAGIC = b"FPMODEL\x00"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class Layer:
    kind: str
    params: dict[str, Tensor] = field(default_factory=dict)
    hyper: dict[str, int] = field(default_factory=dict)

    @property
    def parameterized(self) -> bool:
        return self.kind in PARAM_KINDS


@dataclass
class Model:
    arch: str
    layers: list[Layer]
    num_classes: int
    input_shape: tuple[int, int, int]

    def logits(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = _apply(layer, x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        """Class probabilities for a batch ``x`` of shape (N, C, H, W)."""
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            raise ag.ShapeError(f"model {self.arch}: expected input (N, {self.input_shape}), got {x.shape}")
        return ag.softmax(self.logits(x))

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Probabilities as a plain array, evaluated without recording a graph."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        out = []
        with ag.no_grad():
            for i in range(0, len(images), batch_size):
                out.append(self.forward(Tensor(images[i:i + batch_size])).data)
        return np.concatenate(out, axis=0)

    def parameters(self) -> list[Tensor]:
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def param_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.parameterized]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])


def _apply(layer: Layer, x: Tensor) -> Tensor:
    kind = layer.kind
    if kind == "conv":
        return ag.bias_add(ag.conv2d(x, layer.params["w"], padding=layer.hyper.get("padding", 0)),
                           layer.params["b"])
    if kind == "dense":
        return ag.bias_add(ag.matmul(x, layer.params["w"]), layer.params["b"])
    if kind == "relu":
        return ag.relu(x)
    if kind == "maxpool":
        return ag.maxpool2d(x, layer.hyper.get("size", 2))
    if kind == "flatten":
        return ag.flatten(x)
    raise ValueError(f"unknown layer kind {kind!r}")


def _he(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def conv_layer(rng, cin: int, cout: int, k: int = 3, padding: int = 1) -> Layer:
    return Layer("conv", {"w": _he(rng, (cout, cin, k, k), cin * k * k),
                          "b": Tensor(np.zeros(cout), requires_grad=True)},
                 {"padding": padding})


def dense_layer(rng, fin: int, fout: int) -> Layer:
    return Layer("dense", {"w": _he(rng, (fin, fout), fin),
                           "b": Tensor(np.zeros(fout), requires_grad=True)})


def build_cnn(num_classes: int = 10, input_shape=DEFAULT_INPUT_SHAPE, seed: int = 0,
              channels=(8, 16), hidden: int = 32) -> Model:
    """2 x [conv3x3 + ReLU + maxpool2] -> dense -> dense -> dense."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    c1, c2 = channels
    flat = c2 * (h // 4) * (w // 4)
    layers = [
        conv_layer(rng, c, c1), Layer("relu"), Layer("maxpool", hyper={"size": 2}),
        conv_layer(rng, c1, c2), Layer("relu"), Layer("maxpool", hyper={"size": 2}),
        Layer("flatten"),
        dense_layer(rng, flat, hidden), Layer("relu"),
        dense_layer(rng, hidden, hidden), Layer("relu"),
        dense_layer(rng, hidden, num_classes),
    ]
    return Model("cnn", layers, num_classes, tuple(input_shape))


def build_mlp(num_classes: int = 10, input_shape=DEFAULT_INPUT_SHAPE, seed: int = 0,
              hidden: int = 128) -> Model:
    rng = np.random.default_rng(seed)
    flat = int(np.prod(input_shape))
    layers = [
        Layer("flatten"),
        dense_layer(rng, flat, hidden), Layer("relu"),
        dense_layer(rng, hidden, hidden), Layer("relu"),
        dense_layer(rng, hidden, num_classes),
    ]
    return Model("mlp", layers, num_classes, tuple(input_shape))


ARCHITECTURES = {"cnn": build_cnn, "mlp": build_mlp}


def build_model(arch: str, num_classes: int, input_shape=DEFAULT_INPUT_SHAPE, seed: int = 0) -> Model:
    try:
        builder = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return builder(num_classes=num_classes, input_shape=input_shape, seed=seed)


def replace_head(model: Model, num_classes: int, seed: int) -> Model:
    """Copy of ``model`` with the final dense layer re-initialised at a new width."""
    out = model.copy()
    last = out.param_layers()[-1]
    fin = last.params["w"].shape[0]
    fresh = dense_layer(np.random.default_rng(seed), fin, num_classes)
    last.params = fresh.params
    out.num_classes = num_classes
    return out


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    epochs: int = 30
    lr_max: float = 0.05
    lr_min: float = 0.004
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    seed: int = 0


@dataclass
class TrainingLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_acc: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,loss,accuracy"]
        rows += [f"{i},{l:.10g},{a:.10g}" for i, (l, a) in enumerate(zip(self.epoch_loss, self.epoch_acc))]
        return "\n".join(rows) + "\n"


class TrainingDiverged(RuntimeError):
    pass


def fit(model: Model, images: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
        params: list[Tensor] | None = None, soft: bool = False) -> TrainingLog:
    """Mini-batch SGD on cross-entropy; ``targets`` are labels or (soft) distributions.

    Only the tensors in ``params`` (default: all of them) are updated.
    """
    params = model.parameters() if params is None else params
    trainable = {id(p) for p in params}
    frozen = [p for p in model.parameters() if id(p) not in trainable]
    for p in frozen:
        p.requires_grad = False
    opt = ag.SGD(params, cfg.lr_max, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    log = TrainingLog()
    n = len(images)
    try:
        for epoch in range(cfg.epochs):
            opt.lr = ag.cosine_annealing_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
            order = rng.permutation(n)
            total, correct = 0.0, 0
            for i in range(0, n, cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                logits = model.logits(Tensor(images[idx]))
                if soft:
                    loss = ag.soft_cross_entropy(logits, targets[idx])
                    hits = logits.data.argmax(1) == targets[idx].argmax(1)
                else:
                    loss = ag.cross_entropy(logits, targets[idx])
                    hits = logits.data.argmax(1) == targets[idx]
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"loss became {loss.item()} at epoch {epoch}, batch {i // cfg.batch_size}")
                ag.backward(loss)
                opt.step()
                total += loss.item() * len(idx)
                correct += int(hits.sum())
            log.epoch_loss.append(total / n)
            log.epoch_acc.append(correct / n)
            logger.debug("epoch %d loss %.4f acc %.4f", epoch, log.epoch_loss[-1], log.epoch_acc[-1])
    finally:
        for p in frozen:
            p.requires_grad = True
    return log


def train(model: Model, data, cfg: TrainConfig | None = None, params=None) -> TrainingLog:
    cfg = cfg or TrainConfig()
    if data.num_classes != model.num_classes:
        raise ValueError(f"dataset has {data.num_classes} classes, model {model.arch} has {model.num_classes}")
    return fit(model, data.images, data.labels, cfg, params=params)


def evaluate(model_or_fn, data) -> float:
    """Top-1 accuracy of a model (or prediction callback) on ``data``."""
    if len(data) == 0:
        raise ValueError("evaluate: empty dataset")
    predict = model_or_fn.predict if isinstance(model_or_fn, Model) else model_or_fn
    probs = predict(data.images)
    if probs.shape[1] != data.num_classes:
        raise ValueError(f"evaluate: model emits {probs.shape[1]} classes, dataset has {data.num_classes}")
    return float((probs.argmax(1) == data.labels).mean())


# ------------------------------------------------------------- serialization


def model_to_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    arch = model.arch.encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", FORMAT_VERSION, len(arch)))
    buf.write(arch)
    buf.write(struct.pack("<I3I", model.num_classes, *model.input_shape))
    buf.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        kind = layer.kind.encode()
        buf.write(struct.pack("<B", len(kind)))
        buf.write(kind)
        hyper = sorted(layer.hyper.items())
        buf.write(struct.pack("<B", len(hyper)))
        for k, v in hyper:
            kb = k.encode()
            buf.write(struct.pack("<B", len(kb)) + kb + struct.pack("<q", v))
        names = sorted(layer.params)
        buf.write(struct.pack("<B", len(names)))
        for name in names:
            arr = layer.params[name].data
            nb = name.encode()
            buf.write(struct.pack("<B", len(nb)) + nb)
            buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ModelFileError("corrupt model file: unexpected end of data")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(raw: bytes, expect_arch: str | None = None) -> Model:
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFileError("corrupt model file: bad magic bytes")
    version, alen = r.unpack("<HH")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model file version {version} (expected {FORMAT_VERSION})")
    arch = r.take(alen).decode()
    if expect_arch is not None and arch != expect_arch:
        raise ModelFileError(f"architecture mismatch: file holds {arch!r}, expected {expect_arch!r}")
    num_classes, c, h, w = r.unpack("<I3I")
    (nlayers,) = r.unpack("<I")
    layers = []
    for _ in range(nlayers):
        (kl,) = r.unpack("<B")
        kind = r.take(kl).decode()
        (nh,) = r.unpack("<B")
        hyper = {}
        for _ in range(nh):
            (hl,) = r.unpack("<B")
            key = r.take(hl).decode()
            (hyper[key],) = r.unpack("<q")
        (np_,) = r.unpack("<B")
        params = {}
        for _ in range(np_):
            (nl,) = r.unpack("<B")
            name = r.take(nl).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            count = int(np.prod(shape))
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
            params[name] = Tensor(arr, requires_grad=True)
        layers.append(Layer(kind, params, hyper))
    if r.pos != len(raw):
        raise ModelFileError("corrupt model file: trailing bytes")
    model = Model(arch, layers, num_classes, (c, h, w))
    _check_shapes(model)
    return model


def _check_shapes(model: Model) -> None:
    try:
        with ag.no_grad():
            out = model.logits(Tensor(np.zeros((1,) + tuple(model.input_shape))))
    except (ag.ShapeError, ValueError) as exc:
        raise ModelFileError(f"corrupt model file: layer shapes do not conform ({exc})") from None
    if out.shape != (1, model.num_classes):
        raise ModelFileError(f"corrupt model file: output width {out.shape[1]} != num_classes {model.num_classes}")


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, expect_arch: str | None = None) -> Model:
    return model_from_bytes(Path(path).read_bytes(), expect_arch=expect_arch)
