"""Parameter containers built on the tape ops."""

from __future__ import annotations

import numpy as np

from ..exceptions import FormatError
from . import tensor as T
from .tensor import Parameter, Tensor


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes in definition order to name parameters stably."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise FormatError(f"checkpoint mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise FormatError(f"checkpoint shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = Parameter(_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(_uniform(rng, (n_out,), n_in)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n_symbols, dim, rng):
        self.table = Parameter(_uniform(rng, (n_symbols, dim), 1))

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.table, ids)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng):
        fan_in = c_in * kernel_size
        self.kernel = Parameter(_uniform(rng, (kernel_size, c_in, c_out), fan_in))
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in))

    def __call__(self, x) -> Tensor:
        return T.conv1d(x, self.kernel, self.bias)


class LSTMDirection(Module):
    def __init__(self, n_in, hidden, rng, reverse=False):
        self.w_ih = Parameter(_uniform(rng, (n_in, 4 * hidden), n_in))
        self.w_hh = Parameter(_uniform(rng, (hidden, 4 * hidden), hidden))
        b = _uniform(rng, (4 * hidden,), hidden)
        b[hidden:2 * hidden] += 1.0  # forget gate
        self.b = Parameter(b)
        self.reverse = reverse

    def __call__(self, x) -> Tensor:
        return T.lstm(x, self.w_ih, self.w_hh, self.b, self.reverse)


class BiLSTM(Module):
    """Stacked bidirectional LSTM; each step outputs ``[forward, backward]``."""

    def __init__(self, n_in, hidden, layers, rng):
        self.layers = []
        for i in range(layers):
            d = n_in if i == 0 else 2 * hidden
            self.layers.append(_BiLayer(d, hidden, rng))

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class _BiLayer(Module):
    def __init__(self, n_in, hidden, rng):
        self.fwd = LSTMDirection(n_in, hidden, rng)
        self.bwd = LSTMDirection(n_in, hidden, rng, reverse=True)

    def __call__(self, x):
        return T.concat([self.fwd(x), self.bwd(x)], axis=-1)


def bilstm(inputs, layers: int, hidden: int, rng=None, module: BiLSTM | None = None) -> Tensor:
    """Functional entry point: run (and if needed build) a stacked BiLSTM."""
    x = T.as_tensor(inputs)
    if x.shape[0] == 0:
        raise ValueError("bilstm needs a non-empty sequence")
    if module is None:
        module = BiLSTM(x.shape[1], hidden, layers, rng or np.random.default_rng(0))
    return module(x)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.heads = heads

    def __call__(self, x) -> Tensor:
        return self.out(T.scaled_dot_attention(self.q(x), self.k(x), self.v(x), self.heads))


class FFTBlock(Module):
    """Self-attention then a convolutional feed-forward, each residual + post-norm."""

    def __init__(self, dim, heads, kernel_size, filter_size, rng):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.conv1 = Conv1d(dim, filter_size, kernel_size, rng)
        self.conv2 = Conv1d(filter_size, dim, kernel_size, rng)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.conv2(T.relu(self.conv1(x))))


def sinusoid_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
