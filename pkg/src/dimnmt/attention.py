"""Multi-head additive attention, split into ``address`` and ``read``.

Per head ``k`` with query/key projections sliced to that head,
``e_ki = v_k . tanh(Wq q + Wk key_i)`` and the weights are a masked softmax
over ``i``.  Reading takes each head's weighted sum over its own slice of the
values, concatenates the heads and applies the output projection ``W_o``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Module, uniform
from .tensor import DimensionError, Tensor, softmax, tanh

_MASKED = -1e30


@dataclass
class Addressing:
    """``heads``: (B, H, n) per-head weights; ``weights``: (B, n) head mean."""

    heads: Tensor
    weights: Tensor


class AdditiveAttention(Module):
    def __init__(self, d_query: int, d_key: int, d_att: int, d_out: int, heads: int,
                 rng: np.random.Generator, scale: float = 0.08):
        if d_att % heads or d_key % heads:
            raise DimensionError(f"{heads} heads must divide d_att={d_att} and d_key={d_key}")
        self.heads = heads
        self.W_q = uniform(rng, (d_query, d_att), scale)
        self.W_k = uniform(rng, (d_key, d_att), scale)
        self.v = uniform(rng, (heads, d_att // heads), scale)
        self.W_o = uniform(rng, (d_key, d_out), scale)

    def project_keys(self, keys: Tensor) -> Tensor:
        """``W_k`` applied to every key; cache it when the keys are fixed."""
        return keys @ self.W_k

    def address(self, query: Tensor, keys: Tensor, mask: np.ndarray | None = None,
                projected_keys: Tensor | None = None) -> Addressing:
        """Query (B, d_q) against keys (B, n, d_k) with a (B, n) 0/1 mask."""
        B, n, _ = keys.shape
        if n < 1:
            raise ValueError("address() needs at least one key")
        if mask is None:
            mask = np.ones((B, n))
        if np.any(mask.sum(axis=1) == 0):
            raise ValueError("address(): every position is masked")
        H = self.heads
        kp = self.project_keys(keys) if projected_keys is None else projected_keys
        qp = query @ self.W_q
        hidden = tanh(kp + qp.reshape(B, 1, -1))
        scores = (hidden.reshape(B, n, H, -1) * self.v).sum(axis=-1).transpose(0, 2, 1)
        scores = scores + ((1.0 - mask) * _MASKED)[:, None, :]
        per_head = softmax(scores, axis=-1)
        return Addressing(per_head, per_head.mean(axis=1))

    def read(self, heads: Tensor, values: Tensor) -> Tensor:
        """Per-head weighted sums of per-head value slices, concatenated, then ``W_o``."""
        B, H, n = heads.shape
        if values.shape[1] != n:
            raise DimensionError(f"read(): {n} weights for {values.shape[1]} value rows")
        d_v = values.shape[2]
        sliced = values.reshape(B, n, H, d_v // H).transpose(0, 2, 1, 3)
        mixed = heads.reshape(B, H, 1, n) @ sliced
        return mixed.reshape(B, d_v) @ self.W_o

    def __call__(self, query: Tensor, keys: Tensor, mask: np.ndarray | None = None,
                 projected_keys: Tensor | None = None) -> tuple[Addressing, Tensor]:
        a = self.address(query, keys, mask, projected_keys)
        return a, self.read(a.heads, keys)
