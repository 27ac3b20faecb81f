"""Central finite-difference gradient verification."""

from __future__ import annotations

import numpy as np


def grad_check(f, params, step=1e-5, floor=1e-6, max_coords=None, rng=None, scale=1.0) -> float:
    """Largest per-coordinate relative error between tape and numeric gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor and must be
    deterministic. The relative error is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps coordinates with vanishing gradients from dividing by ~0.
    With ``max_coords`` only that many randomly chosen coordinates per
    parameter are perturbed. ``scale`` is the expected ratio of tape to
    numeric gradient: 1 normally, ``-lam`` across a gradient reversal.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            num = scale * (up - down) / (2 * step)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst
