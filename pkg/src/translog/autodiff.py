"""Small reverse-mode autodiff engine over numpy arrays.

Only the operations the encoder needs are provided. Every op builds a node
holding a closure that maps the output gradient to input gradients;
``Tensor.backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
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

    # operator sugar
    def __add__(self, other) -> Tensor:
        return add(self, _as_tensor(other, self.data.dtype))

    __radd__ = __add__

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __mul__(self, c: float) -> Tensor:
        return scale(self, c)

    __rmul__ = __mul__

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    order.reverse()
    return order


def _node(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape
    # batched matmul on strided views falls off the fast path; copy once
    ad_, bd = np.ascontiguousarray(a.data), np.ascontiguousarray(b.data)

    def backward(g):
        g = np.ascontiguousarray(g)
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), sa) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad_, -1, -2) @ g, sb) if b.requires_grad else None
        return ga, gb

    return _node(ad_ @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: incompatible shapes {weight.shape} and {bias.shape}")
    # 2-D views keep numpy on the BLAS gemm path
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out += bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1 - y * y),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _node(out, (a,), lambda g: (np.where(out > 0, g, 0).astype(g.dtype),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _node(y, (a,), lambda g: (g * y * (1 - y),))


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is False get exactly 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row has every position masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(a.data.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        flat = lambda t: t.reshape(-1, n)  # noqa: E731
        ggamma = flat(g * xhat).sum(axis=0) if gamma.requires_grad else None
        gbeta = flat(g).sum(axis=0) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward)


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not train or p <= 0:
        return a
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / a.data.dtype.type(1 - p)
    return _node(a.data * keep, (a,), lambda g: (g * keep,))


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Average (b, l, d) over positions where the (b, l) mask is True."""
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"mean_pool: incompatible shapes {x.shape} and {mask.shape}")
    counts = mask.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("mean_pool: a sequence has no unmasked positions")
    w = (mask / counts).astype(x.data.dtype)[:, :, None]
    out = (x.data * w).sum(axis=1)
    return _node(out, (x,), lambda g: (g[:, None, :] * w,))


def bce_loss(prob: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=prob.data.dtype).reshape(prob.shape)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("bce_loss: labels must be 0 or 1")
    eps = 1e-7
    p = np.clip(prob.data, eps, 1 - eps)
    n = p.size
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()

    def backward(g):
        return (g * (-(y / p) + (1 - y) / (1 - p)) / n,)

    return _node(np.asarray(loss, dtype=prob.data.dtype), (prob,), backward)


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping.

    Only names in ``trainable`` are touched; everything else stays bit-identical
    even if a stray gradient buffer is present.
    """

    def __init__(self, params: dict[str, Tensor], trainable: Iterable[str],
                 beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.trainable = [n for n in params if n in set(trainable)]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(params[n].data) for n in self.trainable}
        self.v = {n: np.zeros_like(params[n].data) for n in self.trainable}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        missing = [n for n in self.trainable if self.params[n].grad is None]
        if missing:
            raise ValueError(f"adam_step: no gradient for trainable parameter(s) {missing}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** t
        c2 = 1 - b2 ** t
        for name in self.trainable:
            p = self.params[name]
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


class OneCycleSchedule:
    """Cosine warm-up from ``max_lr/start_div`` to ``max_lr``, then cosine decay
    to ``max_lr/final_div`` at ``total_steps``."""

    def __init__(self, max_lr: float, total_steps: int, warmup_fraction: float = 0.3,
                 start_div: float = 25.0, final_div: float = 1e4):
        if total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 < warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if start_div <= 1 or final_div <= 1:
            raise ValueError("start_div and final_div must be > 1")
        self.max_lr = max_lr
        self.total_steps = total_steps
        self.warmup_fraction = warmup_fraction
        self.start_div = start_div
        self.final_div = final_div

    @property
    def warmup_steps(self) -> float:
        return self.warmup_fraction * self.total_steps

    def lr_at(self, step: int) -> float:
        if step < 0 or step > self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        start = self.max_lr / self.start_div
        final = self.max_lr / self.final_div
        w = self.warmup_steps
        if step <= w:
            return _cos_interp(start, self.max_lr, step / w)
        return _cos_interp(self.max_lr, final, (step - w) / (self.total_steps - w))


def _cos_interp(a: float, b: float, frac: float) -> float:
    return b + (a - b) / 2 * (1 + math.cos(math.pi * frac))


def lr_at(schedule: OneCycleSchedule, step: int) -> float:
    return schedule.lr_at(step)
