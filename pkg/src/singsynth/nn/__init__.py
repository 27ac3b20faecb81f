"""Minimal reverse-mode differentiation engine and layers for the two models."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    BiLSTM, Conv1d, Embedding, FFTBlock, LayerNorm, Linear, Module, MultiHeadAttention,
    bilstm, sinusoid_positions,
)
from .optim import adam_step, clip_grad_norm
from .tensor import (
    Parameter, Tensor, abs, add, as_tensor, concat, conv1d, embedding_lookup, exp,
    gradient_reverse, layer_norm, log, lstm, matmul, mean, mul, relu, reshape,
    scaled_dot_attention, sigmoid, softmax_cross_entropy, sub, sum, take, tanh,
)
