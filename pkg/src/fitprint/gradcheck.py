"""Central finite-difference checks for every autograd primitive."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def numeric_grad(fn: Callable[[list[np.ndarray]], float], arrays: list[np.ndarray], index: int,
                 step: float = 1e-5) -> np.ndarray:
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[index])
    it = np.nditer(base[index], flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = base[index][i]
        base[index][i] = orig + step
        up = fn(base)
        base[index][i] = orig - step
        down = fn(base)
        base[index][i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), with a floor so two zero gradients agree."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / scale)


def check(build: Callable[[list[Tensor]], Tensor], arrays: list[np.ndarray], step: float = 1e-5) -> float:
    """Worst relative error over all inputs between backward() and finite differences.

    ``build`` maps input tensors to any-shape output; a fixed random projection
    turns it into a scalar so every output entry contributes.
    """
    rng = np.random.default_rng(len(arrays) + arrays[0].size)
    proj = {}

    def scalar(out: Tensor) -> Tensor:
        if out.shape not in proj:
            proj[out.shape] = rng.normal(size=out.shape)
        return ag.sum(ag.mul(out, Tensor(proj[out.shape])))

    ins = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    ag.backward(scalar(build(ins)))

    def f(vals):
        with ag.no_grad():
            return scalar(build([Tensor(v) for v in vals])).item()

    return max(relative_error(t.grad, numeric_grad(f, arrays, i, step)) for i, t in enumerate(ins))


@dataclass
class Case:
    name: str
    make: Callable[[np.random.Generator], list[np.ndarray]]
    build: Callable[[list[Tensor]], Tensor]


def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap * 2, x)


def _dims(rng, n, lo=1, hi=8):
    return tuple(int(d) for d in rng.integers(lo, hi + 1, size=n))


def _two_net(t):
    x, w1, w2 = t
    return ag.matmul(ag.relu(ag.matmul(x, w1)), w2)


def _distinct(rng, shape):
    # Well-separated values keep max-pool's argmax stable under the FD step.
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.01, n)).reshape(shape)


CASES = [
    Case("add", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s)])(_dims(r, 2)), lambda t: ag.add(t[0], t[1])),
    Case("sub", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s)])(_dims(r, 2)), lambda t: ag.sub(t[0], t[1])),
    Case("mul", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s)])(_dims(r, 2)), lambda t: ag.mul(t[0], t[1])),
    Case("mul-broadcast", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s[1:])])(_dims(r, 2)),
         lambda t: ag.mul(t[0], t[1])),
    Case("scalar-ops", lambda r: [r.normal(size=_dims(r, 2))], lambda t: (t[0] * 3.0 - 1.5) / 2.0),
    Case("relu", lambda r: [_away_from_zero(r, _dims(r, 2))], lambda t: ag.relu(t[0])),
    Case("clamp", lambda r: [_away_from_zero(r, _dims(r, 2)) * 0.5 + 0.5], lambda t: ag.clamp(t[0], 0.0, 1.0)),
    Case("matmul", lambda r: (lambda a, b, c: [r.normal(size=(a, b)), r.normal(size=(b, c))])(*_dims(r, 3)),
         lambda t: ag.matmul(t[0], t[1])),
    Case("bias_add", lambda r: (lambda a, b: [r.normal(size=(a, b)), r.normal(size=b)])(*_dims(r, 2)),
         lambda t: ag.bias_add(t[0], t[1])),
    Case("conv2d", lambda r: (lambda n, ci, co, h: [r.normal(size=(n, ci, h + 2, h + 3)), r.normal(size=(co, ci, 3, 3))])(
        *_dims(r, 3, 1, 3), int(r.integers(1, 5))), lambda t: ag.conv2d(t[0], t[1], padding=1)),
    Case("maxpool2d", lambda r: [_distinct(r, (int(r.integers(1, 3)), int(r.integers(1, 3)), 4, 6))],
         lambda t: ag.maxpool2d(t[0], 2)),
    Case("flatten", lambda r: [r.normal(size=(2,) + _dims(r, 3, 1, 4))], lambda t: ag.flatten(t[0])),
    Case("reshape", lambda r: [r.normal(size=(2, 6))], lambda t: ag.reshape(t[0], (3, 4))),
    Case("softmax", lambda r: [r.normal(size=_dims(r, 2))], lambda t: ag.softmax(t[0])),
    Case("log_softmax", lambda r: [r.normal(size=_dims(r, 2))], lambda t: ag.log_softmax(t[0])),
    Case("cross_entropy", lambda r: [r.normal(size=(5, 4))],
         lambda t: ag.cross_entropy(t[0], np.array([0, 3, 1, 2, 3]))),
    Case("soft_cross_entropy", lambda r: [r.normal(size=(3, 4))],
         lambda t: ag.soft_cross_entropy(t[0], np.full((3, 4), 0.25))),
    Case("sum", lambda r: [r.normal(size=_dims(r, 3))], lambda t: ag.sum(t[0], axis=1)),
    Case("mean", lambda r: [r.normal(size=_dims(r, 3))], lambda t: ag.mean(t[0], axis=(0, 2))),
    Case("l2_norm", lambda r: [r.normal(size=_dims(r, 2))], lambda t: ag.l2_norm(t[0], axis=1)),
    Case("dot", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s)])(_dims(r, 2)), lambda t: ag.dot(t[0], t[1])),
    Case("entropy", lambda r: [r.normal(size=_dims(r, 2))], lambda t: ag.entropy(ag.softmax(t[0]))),
    Case("cosine_similarity", lambda r: (lambda s: [r.normal(size=s), r.normal(size=s)])(_dims(r, 2, 2)),
         lambda t: ag.cosine_similarity(t[0], t[1])),
    Case("two-layer-net", lambda r: [r.normal(size=(3, 5)), _away_from_zero(r, (5, 6)), r.normal(size=(6, 2))],
         _two_net),
    Case("shared-input", lambda r: [r.normal(size=_dims(r, 2))], lambda t: ag.add(ag.mul(t[0], t[0]), ag.softmax(t[0]))),
]


def run_all(trials: int = 10, seed: int = 0) -> dict[str, float]:
    """Worst relative error per primitive over ``trials`` random draws."""
    worst = {}
    for case in CASES:
        rng = np.random.default_rng([seed, len(case.name)])
        errs = []
        for _ in range(trials):
            arrays = [np.array(a, dtype=np.float64) for a in case.make(rng)]
            errs.append(check(case.build, arrays))
        worst[case.name] = max(errs)
    return worst
