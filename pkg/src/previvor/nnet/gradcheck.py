"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor


def finite_difference_check(
    fn: Callable[[], Tensor],
    inputs: list[Tensor],
    eps: float = 1e-5,
    denom_floor: float = 1e-6,
) -> float:
    """Compare analytic gradients of a scalar-valued closure against
    central differences, element by element.

    Returns the maximum relative error max |a - n| / max(|a|, |n|, floor)
    over every element of every input.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    T.backward(loss)
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]

    # elements far below the gradient scale cannot be measured relatively:
    # central differences bottom out at cancellation noise, so the floor
    # scales with the largest gradient seen (mixed abs/rel comparison)
    g_scale = max((float(np.max(np.abs(a))) for a in analytic), default=0.0)
    floor = max(denom_floor, 1e-3 * g_scale)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            ref = a.reshape(-1)[i]
            err = abs(ref - numeric) / max(abs(ref), abs(numeric), floor)
            worst = max(worst, err)
    return worst
