"""Small dense-tensor core with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 by default). Every op records a closure on
the output tensor that pushes gradients into its parents; ``Tensor.backward``
runs those closures in reverse topological order. The tape lives only as long
as the output tensors do, so one training step builds and drops its own graph.

The recurrent pieces of the translation model (GRU cell, additive attention)
are provided as fused ops with hand-written backward passes; unrolling them
from elementwise primitives would make every decoder step cost dozens of tape
nodes.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NonFiniteGradientError", "precision", "no_grad",
    "add", "sub", "mul", "matmul", "concat", "stack", "take", "reshape",
    "transpose", "sigmoid", "tanh", "relu", "softmax", "embedding", "conv1d",
    "dropout", "cross_entropy", "gru_cell", "additive_attention", "total",
    "ParamStore", "adam_step", "Rng", "numerical_gradient",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC",
]


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes."""

    def __init__(self, op: str, *shapes):
        desc = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")
        self.op = op
        self.shapes = shapes


class NonFiniteGradientError(FloatingPointError):
    pass


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True


_state = _State()


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the float type new tensors are created with.

    Gradient checks run under ``precision(np.float64)``: central differences
    in float32 are dominated by rounding noise at eps=1e-3.
    """
    old = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_state.dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None):
        """Backpropagate from this tensor.

        ``grad`` seeds the output gradient; it defaults to ones, which for a
        scalar loss is the usual d(loss)/d(loss) = 1.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError("backward", self.shape, grad.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # intermediate gradients are not needed after the sweep
        for node in order:
            if node._parents:
                node.grad = None
                node._backward = None
                node._parents = ()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _grad_buffer(t: Tensor) -> np.ndarray | None:
    if not t.requires_grad:
        return None
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise and linear algebra

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            k, n = b.shape
            _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _result(a.data @ b.data, (a, b), backward)


def total(a) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum()), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    return _result(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *(t.shape for t in tensors))
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.take(g, i, axis=axis))

    return _result(data, tensors, backward)


def take(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis`` (dimension dropped)."""
    if not -a.data.ndim <= axis < a.data.ndim or not -a.shape[axis] <= index < a.shape[axis]:
        raise ShapeError("take", a.shape)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = index
    sl = tuple(sl)

    def backward(g):
        buf = _grad_buffer(a)
        if buf is not None:
            buf[sl] += g

    return _result(a.data[sl], (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), backward)


# nonlinearities

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.data)

    def backward(g):
        _accumulate(a, g * y * (1.0 - y))

    return _result(y, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _result(y, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0

    def backward(g):
        _accumulate(a, g * pos)

    return _result(a.data * pos, (a,), backward)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    y = _softmax(a.data, axis)

    def backward(g):
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (a,), backward)


def dropout(a: Tensor, rate: float, rng: "Rng | None") -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0, ``rng`` is None or grad is off."""
    if rate <= 0 or rng is None or not _state.grad_enabled:
        return a
    keep = (rng.uniform(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return mul(a, Tensor(keep))


# lookup, convolution, loss

def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {table.shape[0]})")

    def backward(g):
        buf = _grad_buffer(table)
        if buf is not None:
            np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return _result(table.data[ids], (table,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """1-D convolution over the last axis.

    x: (batch, in_channels, length); weight: (out_channels, in_channels, kernel).
    Returns (batch, out_channels, out_length).
    """
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("conv1d", weight.shape, bias.shape)
    batch, cin, length = x.shape
    cout, _, k = weight.shape
    padded = length + 2 * padding
    if padded < k:
        raise ShapeError("conv1d", x.shape, weight.shape)
    lout = (padded - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * lout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, lout, cout).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * lout, cout)
        if weight.requires_grad:
            _accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(batch, lout, cin, k)
            dxp = np.zeros((batch, cin, padded), dtype=x.data.dtype)
            span = stride * (lout - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            _accumulate(x, dxp[:, :, padding:padding + length])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), parents, backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean token cross-entropy over positions where ``mask`` is nonzero.

    logits: (N, V); targets: (N,) integer ids; mask: (N,) of 0/1.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    mask = (np.ones(targets.shape) if mask is None else np.asarray(mask)).astype(logits.data.dtype)
    if mask.shape != targets.shape:
        raise ShapeError("cross_entropy", targets.shape, mask.shape)
    count = mask.sum()
    x = logits.data
    z = x - x.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(targets)), targets]
    per_token = (logsum - picked) * mask
    loss = per_token.sum() / count if count > 0 else np.zeros((), dtype=x.dtype)

    def backward(g):
        if count == 0:
            return
        probs = np.exp(z - logsum[:, None])
        probs[np.arange(len(targets)), targets] -= 1.0
        _accumulate(logits, probs * (mask[:, None] * (g / count)))

    return _result(np.asarray(loss, dtype=x.dtype), (logits,), backward)


# fused recurrent ops

def gru_cell(x_proj: Tensor, h: Tensor, w_h: Tensor, b_h: Tensor, mask=None) -> Tensor:
    """One GRU step given the input projection ``x @ W_x + b_x``.

    x_proj: (B, 3H) ordered [reset, update, candidate]; h: (B, H);
    w_h: (H, 3H); b_h: (3H,). Reset is applied to the projected hidden state.
    Rows where ``mask`` is 0 copy ``h`` through unchanged (padding).
    """
    hidden = h.shape[-1]
    if (x_proj.data.ndim != 2 or h.data.ndim != 2 or x_proj.shape != (h.shape[0], 3 * hidden)
            or w_h.shape != (hidden, 3 * hidden) or b_h.shape != (3 * hidden,)):
        raise ShapeError("gru_cell", x_proj.shape, h.shape, w_h.shape, b_h.shape)
    hd, xd = h.data, x_proj.data
    hp = hd @ w_h.data + b_h.data
    gates = _sigmoid(xd[:, :2 * hidden] + hp[:, :2 * hidden])
    r, u = gates[:, :hidden], gates[:, hidden:]
    hp_n = hp[:, 2 * hidden:]
    n = np.tanh(xd[:, 2 * hidden:] + r * hp_n)
    new = (1.0 - u) * n + u * hd
    if mask is not None:
        m = np.asarray(mask, dtype=hd.dtype).reshape(-1, 1)
        new = m * new + (1.0 - m) * hd

    def backward(g):
        dh_carry = None
        if mask is not None:
            dh_carry = (1.0 - m) * g
            g = m * g
        dn_pre = g * (1.0 - u) * (1.0 - n * n)
        du_pre = g * (hd - n) * u * (1.0 - u)
        dr_pre = dn_pre * hp_n * r * (1.0 - r)
        dxp = np.concatenate([dr_pre, du_pre, dn_pre], axis=1)
        dhp = np.concatenate([dr_pre, du_pre, dn_pre * r], axis=1)
        _accumulate(x_proj, dxp)
        if h.requires_grad:
            dh = g * u + dhp @ w_h.data.T
            if dh_carry is not None:
                dh += dh_carry
            _accumulate(h, dh)
        if w_h.requires_grad:
            _accumulate(w_h, hd.T @ dhp)
        _accumulate(b_h, dhp.sum(axis=0))

    return _result(new, (x_proj, h, w_h, b_h), backward)


def additive_attention(query: Tensor, keys: Tensor, values: Tensor, w_query: Tensor,
                       v: Tensor, mask=None) -> tuple[Tensor, np.ndarray]:
    """Feed-forward (additive) attention.

    score_j = v . tanh(keys_j + query @ w_query); weights = softmax over j;
    context = sum_j weights_j * values_j.

    query: (B, Q); keys: (B, J, A) (already projected encoder states);
    values: (B, J, D); w_query: (Q, A); v: (A,); mask: (B, J), 0 for padding.
    Returns the context tensor (B, D) and the weights as a plain array (B, J).
    """
    if (query.data.ndim != 2 or keys.data.ndim != 3 or values.data.ndim != 3
            or keys.shape[:2] != values.shape[:2] or keys.shape[0] != query.shape[0]
            or w_query.shape != (query.shape[1], keys.shape[2]) or v.shape != (keys.shape[2],)):
        raise ShapeError("additive_attention", query.shape, keys.shape, values.shape,
                         w_query.shape, v.shape)
    t = np.tanh(keys.data + (query.data @ w_query.data)[:, None, :])
    scores = t @ v.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        scores = np.where(mask, scores, -1e30)
    alpha = _softmax(scores, axis=1)
    if mask is not None:
        alpha = alpha * mask
    context = np.matmul(alpha[:, None, :], values.data)[:, 0, :]

    def backward(g):
        if values.requires_grad:
            _accumulate(values, alpha[:, :, None] * g[:, None, :])
        dalpha = np.matmul(values.data, g[:, :, None])[:, :, 0]
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        if v.requires_grad:
            _accumulate(v, np.einsum("bj,bja->a", de, t))
        dpre = de[:, :, None] * v.data * (1.0 - t * t)
        _accumulate(keys, dpre)
        dq = dpre.sum(axis=1)
        if query.requires_grad:
            _accumulate(query, dq @ w_query.data.T)
        if w_query.requires_grad:
            _accumulate(w_query, query.data.T @ dq)

    out = _result(context, (query, keys, values, w_query, v), backward)
    return out, alpha


# optimisation

@dataclass
class ParamStore:
    """Named parameters plus their Adam moments."""

    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for n, p in self.params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for n, arr in values.items():
            self.params[n].data = np.array(arr, dtype=self.params[n].data.dtype, copy=True)


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """Bias-corrected Adam update, in place. Non-finite gradients abort the step."""
    for name in store.params:
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != store.params[name].shape:
            raise ShapeError("adam_step", store.params[name].shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        g = grads[name]
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return store


# randomness

class Rng:
    """Seeded random stream: numpy's PCG64 bit generator fed by SeedSequence.

    ``child(key)`` derives an independent stream from a string key, so
    consumers that draw in different orders still get stable values.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key)))

    def child(self, key: str) -> "Rng":
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return Rng(self.seed, self._key + (int.from_bytes(digest[:4], "little"),))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def categorical(self, probs: Sequence[float]) -> int:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or len(probs) == 0 or np.any(probs < 0) or probs.sum() <= 0:
            raise ValueError("categorical: probabilities must be a non-empty non-negative vector")
        cdf = np.cumsum(probs / probs.sum())
        idx = int(np.searchsorted(cdf, self._gen.uniform(), side="right"))
        return min(idx, len(probs) - 1)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


# gradient checking

def numerical_gradient(fn: Callable[[], float], array: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``array`` (mutated in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = float(fn())
        flat[i] = orig - eps
        minus = float(fn())
        flat[i] = orig
        out[i] = (plus - minus) / (2 * eps)
    return grad


# checkpoint container

CHECKPOINT_MAGIC = b"STYLOX1"


def save_checkpoint(path: str | Path | None, arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    """Serialise named float arrays plus JSON metadata.

    Layout: magic, little-endian u64 manifest length, UTF-8 JSON manifest
    (metadata + name/shape/offset per array), then raw little-endian float32
    data. Returns the bytes; also writes them when ``path`` is given.
    """
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_checkpoint(source: str | Path | bytes) -> tuple[dict[str, np.ndarray], dict]:
    blob = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a checkpoint: bad magic")
    head = len(CHECKPOINT_MAGIC)
    (size,) = struct.unpack_from("<Q", blob, head)
    start = head + 8
    manifest = json.loads(blob[start:start + size].decode("utf-8"))
    data_start = start + size
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=data_start + entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return arrays, manifest["meta"]

