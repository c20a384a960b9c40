"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Each op builds its output ``Tensor`` eagerly and, when any input requires a
gradient, records a closure that pushes the output gradient back onto its
inputs. ``backward`` walks the recorded graph once in reverse topological
order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "bias_add",
    "conv2d",
    "relu",
    "maxpool2d",
    "flatten",
    "reshape",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "soft_cross_entropy",
    "sum",
    "mean",
    "l2_norm",
    "dot",
    "entropy",
    "cosine_similarity",
    "clamp",
    "backward",
    "SGD",
    "sgd_step",
    "cosine_annealing_lr",
]

_GRAD_ENABLED = True
COSINE_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when op inputs do not satisfy the op's shape rule."""


def _shape_error(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    # keep numpy from hijacking reflected operators like ``ndarray * Tensor``
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor: extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, grad_fn) -> Tensor:
    """Wrap ``data``; record ``grad_fn(g) -> tuple of parent grads`` if needed."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out.op = op
    if needs:
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), "mul", grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ValueError(f"clamp: lo={lo} exceeds hi={hi}")
    mask = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), "clamp", lambda g: (g * mask,))


# ------------------------------------------------------------------- linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), "matmul", lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature bias along axis 1 (dense rows or conv channels)."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise _shape_error("bias_add", x.shape, b.shape)
    view = (1, -1) + (1,) * (x.ndim - 2)
    sum_axes = (0,) + tuple(range(2, x.ndim))
    return _make(x.data + b.data.reshape(view), (x, b), "bias_add",
                 lambda g: (g, g.sum(axis=sum_axes)))


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N, C, H', W', kh, kw) view, no copy
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid 2-D cross-correlation, x (N,C,H,W), w (O,C,kh,kw) -> (N,O,H',W')."""
    cols = _windows(x, w.shape[2], w.shape[3])
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N,H',W',O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation with symmetric zero padding."""
    if (x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]
            or x.shape[2] + 2 * padding < w.shape[2] or x.shape[3] + 2 * padding < w.shape[3]):
        raise _shape_error("conv2d", x.shape, w.shape)
    kh, kw = w.shape[2], w.shape[3]
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wd = w.data
    out = _correlate(xp, wd)

    def grad_fn(g):
        gx = gw = None
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            full = _correlate(gp, wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = full[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else full
        if w.requires_grad:
            gw = np.tensordot(g, _windows(xp, kh, kw), axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw

    return _make(out, (x, w), "conv2d", grad_fn)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.ndim != 4 or x.shape[2] < size or x.shape[3] < size:
        raise _shape_error("maxpool2d", x.shape)
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    xc = x.data[:, :, :ho * size, :wo * size]
    blocks = xc.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        if gx.shape != (n, c, h, w):
            gx = np.pad(gx, ((0, 0), (0, 0), (0, h - ho * size), (0, w - wo * size)))
        return (gx,)

    return _make(out, (x,), "maxpool2d", grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", x.shape, shape) from None
    src = x.shape
    return _make(out, (x,), "reshape", lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# ------------------------------------------------------------ probabilities


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), "softmax", grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    s = np.exp(out)

    def grad_fn(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), "log_softmax", grad_fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise _shape_error("cross_entropy", logits.shape, labels.shape)
    onehot = np.zeros_like(logits.data)
    onehot[np.arange(labels.size), labels] = 1.0
    return soft_cross_entropy(logits, onehot)


def soft_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of -sum(target * log_softmax(logits))."""
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape or logits.ndim != 2:
        raise _shape_error("soft_cross_entropy", logits.shape, target.shape)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -(target * logp).sum() / n
    p = np.exp(logp)
    tsum = target.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return ((p * tsum - target) * (g / n),)

    return _make(np.asarray(loss), (logits,), "soft_cross_entropy", grad_fn)


def entropy(p: Tensor, axis: int = -1) -> Tensor:
    """Shannon entropy in nats, with 0 ln 0 := 0."""
    pd = p.data
    safe = np.where(pd > 0, pd, 1.0)
    logp = np.log(safe)
    out = -(pd * logp).sum(axis=axis)

    def grad_fn(g):
        return (-(logp + 1.0) * np.expand_dims(g, axis),)

    return _make(out, (p,), "entropy", grad_fn)


# --------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    axes = _norm_axis(axis, x.ndim)
    src = x.shape
    keep = tuple(1 if i in axes else s for i, s in enumerate(src))
    return _make(np.asarray(x.data.sum(axis=axes)), (x,), "sum",
                 lambda g: (np.broadcast_to(np.reshape(g, keep), src),))


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis), 1.0 / count)


def l2_norm(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm over ``axis``; the subgradient at the origin is taken as 0."""
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    nrm = np.sqrt((xd * xd).sum(axis=axes))
    keep = tuple(1 if i in axes else s for i, s in enumerate(xd.shape))

    def grad_fn(g):
        n = np.reshape(nrm, keep)
        scale = np.divide(np.reshape(g, keep), n, out=np.zeros_like(n), where=n > 0)
        return (xd * scale,)

    return _make(np.asarray(nrm), (x,), "l2_norm", grad_fn)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product along the last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("dot", a.shape, b.shape)
    return sum(mul(a, b), axis=-1)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity along the last axis; each norm is padded by 1e-12."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("cosine_similarity", a.shape, b.shape)
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(-1, keepdims=True)) + COSINE_EPS
    nb = np.sqrt((bd * bd).sum(-1, keepdims=True)) + COSINE_EPS
    d = (ad * bd).sum(-1, keepdims=True)
    out = (d / (na * nb))[..., 0]

    def grad_fn(g):
        g = g[..., None]
        ra = np.sqrt((ad * ad).sum(-1, keepdims=True))
        rb = np.sqrt((bd * bd).sum(-1, keepdims=True))
        # d|a|/da = a/|a|, undefined at 0 where we take 0
        ua = np.divide(ad, ra, out=np.zeros_like(ad), where=ra > 0)
        ub = np.divide(bd, rb, out=np.zeros_like(bd), where=rb > 0)
        ga = g * (bd / (na * nb) - d * ua / (na * na * nb)) if a.requires_grad else None
        gb = g * (ad / (na * nb) - d * ub / (na * nb * nb)) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), "cosine_similarity", grad_fn)


# ----------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every differentiable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any differentiable tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- optimizer


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics)."""

    def __init__(self, params: Iterable[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"sgd_step: parameter {i} with shape {p.shape} has no gradient")
        for i, p in enumerate(self.params):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                buf = self._buf.get(i)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self._buf[i] = buf
                g = buf
            p.data = p.data - self.lr * g
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, state: SGD | None = None) -> SGD:
    """One optimizer step; pass the returned state back in to carry momentum."""
    if state is None:
        state = SGD(params, lr, momentum, weight_decay)
    state.lr = lr
    state.step()
    return state


def cosine_annealing_lr(epoch: int, total: int, lr_max: float, lr_min: float) -> float:
    if total <= 0:
        return lr_max
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total)) / 2.0
