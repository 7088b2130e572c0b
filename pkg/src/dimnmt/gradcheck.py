"""Central finite differences against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                 coords: Sequence[tuple] | None = None) -> dict[tuple, float]:
    """(f(x+eps) - f(x-eps)) / 2eps for each requested coordinate of ``param``."""
    if coords is None:
        coords = list(np.ndindex(param.shape))
    out = {}
    with no_grad():
        for idx in coords:
            old = param.data[idx]
            param.data[idx] = old + eps
            hi = f().item()
            param.data[idx] = old - eps
            lo = f().item()
            param.data[idx] = old
            out[idx] = (hi - lo) / (2 * eps)
    return out


def max_relative_error(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                       max_coords: int | None = None, rng: np.random.Generator | None = None,
                       floor: float = 1e-6) -> float:
    """Worst ``|analytic - numeric| / max(|analytic| + |numeric|, floor)`` over sampled coordinates."""
    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, analytic):
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx, num in numeric_grad(f, p, eps, coords).items():
            a = g[idx]
            err = abs(a - num) / max(abs(a) + abs(num), floor)
            worst = max(worst, err)
    return worst
