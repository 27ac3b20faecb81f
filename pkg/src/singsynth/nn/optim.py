"""Adam with moment slots stored on each :class:`Parameter`."""

from __future__ import annotations

import numpy as np


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; parameters without a gradient are skipped."""
    for p in params:
        if p.grad is None:
            continue
        if p.adam_m is None:
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        p.adam_t += 1
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * p.grad
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / (1 - beta1 ** p.adam_t)
        v_hat = p.adam_v / (1 - beta2 ** p.adam_t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
