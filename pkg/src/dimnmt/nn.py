"""Parameter containers and the GRU cell shared by encoder and decoders."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, sigmoid, tanh


class Module:
    """Anything holding parameter tensors or sub-modules as attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key in sorted(vars(self)):
            value = vars(self)[key]
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def uniform(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None (inference) or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


class GRUCell(Module):
    """z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
    h~ = tanh(Wh x + Uh (r*h) + bh), h' = (1 - z) h + z h~.

    ``W`` stacks the input weights as ``[z | r | candidate]`` columns.
    """

    def __init__(self, d_in: int, d: int, rng: np.random.Generator, scale: float = 0.08):
        self.d = d
        self.W = uniform(rng, (d_in, 3 * d), scale)
        self.U_zr = uniform(rng, (d, 2 * d), scale)
        self.U_h = uniform(rng, (d, d), scale)
        self.b = uniform(rng, (3 * d,), scale)

    def project_inputs(self, x: Tensor) -> Tensor:
        """Input half of all three gates; may be precomputed for a whole sequence."""
        return x @ self.W + self.b

    def step_projected(self, xw: Tensor, h: Tensor) -> Tensor:
        d = self.d
        zr = sigmoid(xw[..., : 2 * d] + h @ self.U_zr)
        z, r = zr[..., :d], zr[..., d:]
        cand = tanh(xw[..., 2 * d :] + (r * h) @ self.U_h)
        return h + z * (cand - h)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return self.step_projected(self.project_inputs(x), h)


def gru_step(cell: GRUCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    return cell(x_t, h_prev)
