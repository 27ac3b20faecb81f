"""Dense tensors with a reverse-mode tape.

Every op builds its output eagerly and, when any input needs a gradient,
records a closure mapping the output gradient to input gradients.
``Tensor.backward`` replays those closures in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.asarray(grad, dtype=np.float64) + (0 if self.grad is None else self.grad)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            if node is not self and not isinstance(node, Parameter):
                node.grad = None  # free intermediates

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


class Parameter(Tensor):
    """A trainable leaf with a stable name and optimizer slots."""

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)
        self.adam_m = None
        self.adam_v = None
        self.adam_t = 0


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def abs(x) -> Tensor:  # noqa: A001 - mirrors the numpy name
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


# --- reductions / shape -----------------------------------------------------

def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / count)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


def take(x, idx) -> Tensor:
    """Numpy-style indexing (slices or integer arrays) with scatter-add backward."""
    x = as_tensor(x)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# --- linear algebra / layers -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range for table of {table.shape[0]} rows")
    return take(table, ids)


def conv1d(x, kernel, bias=None) -> Tensor:
    """'Same' 1-D convolution of ``x`` (T, C_in) with ``kernel`` (K, C_in, C_out)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 2 or kernel.ndim != 3 or kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {kernel.shape}")
    T, cin = x.shape
    K, _, cout = kernel.shape
    left = (K - 1) // 2
    xp = np.zeros((T + K - 1, cin))
    xp[left:left + T] = x.data
    cols = np.stack([xp[k:k + T] for k in range(K)], axis=1).reshape(T, K * cin)
    w2 = kernel.data.reshape(K * cin, cout)
    out = cols @ w2
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def back(g):
        dk = (cols.T @ g).reshape(kernel.shape)
        dcols = (g @ w2.T).reshape(T, K, cin)
        dxp = np.zeros_like(xp)
        for k in range(K):
            dxp[k:k + T] += dcols[:, k]
        grads = [dxp[left:left + T], dk]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, back)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != gain.shape:
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def back(g):
        dxhat = g * gain.data
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), back)


def softmax_cross_entropy(logits, label: int) -> Tensor:
    """Negative log-likelihood of ``label`` under softmax(logits); logits shape (K,)."""
    logits = as_tensor(logits)
    z = logits.data.reshape(-1)
    if not 0 <= label < z.size:
        raise ShapeError(f"softmax_cross_entropy: label {label} outside {z.size} classes")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)

    def back(g):
        d = p.copy()
        d[label] -= 1.0
        return ((g * d).reshape(logits.shape),)

    return _result(np.asarray(lse - z[label]), (logits,), back)


def scaled_dot_attention(q, k, v, heads: int) -> Tensor:
    """Multi-head softmax(QK^T/sqrt(d))V over (T, D) inputs; returns (T, D)."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or q.shape != k.shape or q.shape != v.shape or q.shape[1] % heads:
        raise ShapeError(f"scaled_dot_attention: shapes {q.shape}, {k.shape}, {v.shape}, heads={heads}")
    T, D = q.shape
    dh = D // heads
    scale = 1.0 / np.sqrt(dh)

    def split(a):
        return a.reshape(T, heads, dh).transpose(1, 0, 2)

    Q, K, V = split(q.data), split(k.data), split(v.data)
    S = Q @ K.transpose(0, 2, 1) * scale
    S -= S.max(axis=-1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=-1, keepdims=True)
    out = (P @ V).transpose(1, 0, 2).reshape(T, D)

    def back(g):
        dO = split(g)
        dV = P.transpose(0, 2, 1) @ dO
        dP = dO @ V.transpose(0, 2, 1)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 2, 1) @ Q

        def merge(a):
            return a.transpose(1, 0, 2).reshape(T, D)

        return merge(dQ), merge(dK), merge(dV)

    return _result(out, (q, k, v), back)


def gradient_reverse(x, lam: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam``."""
    if lam < 0:
        raise ValueError("gradient_reverse needs lambda >= 0")
    x = as_tensor(x)
    return _result(x.data.copy(), (x,), lambda g: (-lam * g,))


def lstm(x, w_ih, w_hh, b, reverse: bool = False) -> Tensor:
    """One LSTM direction over a (T, D) sequence; gate order i, f, g, o.

    Fused op: the recurrence runs in numpy and the backward pass is explicit
    backpropagation through time. Output rows stay in input time order.
    """
    x, w_ih, w_hh, b = (as_tensor(t) for t in (x, w_ih, w_hh, b))
    T, D = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (D, 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: weights {w_ih.shape}, {w_hh.shape}, {b.shape} for input {x.shape}")
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xw = x.data @ w_ih.data + b.data
    gates = np.zeros((T, 4 * H))
    cells = np.zeros((T, H))
    hs = np.zeros((T, H))
    h_prev_all = np.zeros((T, H))
    c_prev_all = np.zeros((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in steps:
        z = xw[t] + h @ w_hh.data
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        gg = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        h_prev_all[t], c_prev_all[t] = h, c
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, gg, o])
        cells[t], hs[t] = c, h

    def back(g):
        dz_all = np.zeros((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in reversed(list(steps)):
            i, f, gg, o = (gates[t, j * H:(j + 1) * H] for j in range(4))
            dh = g[t] + dh_next
            tc = np.tanh(cells[t])
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate([
                dc * gg * i * (1.0 - i),
                dc * c_prev_all[t] * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                dh * tc * o * (1.0 - o),
            ])
            dz_all[t] = dz
            dh_next = w_hh.data @ dz
            dc_next = dc * f
        return (dz_all @ w_ih.data.T, x.data.T @ dz_all, h_prev_all.T @ dz_all, dz_all.sum(axis=0))

    return _result(hs, (x, w_ih, w_hh, b), back)
