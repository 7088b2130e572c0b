"""Updatable memory over right-to-left decoder states.

The left-to-right decoder addresses and reads this memory every step, then
rewrites it: with weights ``a`` (one scalar per memory row) and gate vectors
``F = sigmoid(W_f s + b_f)``, ``A = sigmoid(W_a s + b_a)`` computed from the
previous L2R state ``s``, every row becomes ``row * (1 - a_i F) + a_i A``.
"""

from __future__ import annotations

import numpy as np

from .attention import AdditiveAttention, Addressing
from .nn import Module, uniform
from .tensor import DimensionError, Tensor, sigmoid


class DimMemory:
    """Memory matrix (B, m', d_s) plus the pristine snapshot it started from.

    One instance belongs to exactly one decoding context; use :meth:`clone`
    to branch (beam search) so that siblings never alias.
    """

    def __init__(self, states, mask: np.ndarray | None = None):
        states = states if isinstance(states, Tensor) else Tensor(states)
        if states.ndim != 3:
            raise DimensionError(f"memory must be (B, m', d_s), got {states.shape}")
        if states.shape[1] == 0:
            raise ValueError("memory has no rows")
        self.snapshot = states
        self.state = states
        self.mask = np.ones(states.shape[:2]) if mask is None else np.asarray(mask, dtype=np.float64)
        self.step = 0

    @property
    def rows(self) -> int:
        return self.state.shape[1]

    def reset(self) -> "DimMemory":
        self.state = self.snapshot
        self.step = 0
        return self

    def clone(self) -> "DimMemory":
        twin = DimMemory.__new__(DimMemory)
        twin.snapshot = self.snapshot
        twin.state = Tensor(self.state.data.copy()) if not self.state.requires_grad else self.state
        twin.mask = self.mask.copy()
        twin.step = self.step
        return twin

    def select(self, index) -> "DimMemory":
        """New memory made of copies of the given batch rows."""
        index = np.asarray(index)
        twin = DimMemory.__new__(DimMemory)
        twin.snapshot = Tensor(self.snapshot.data[index])
        twin.state = Tensor(self.state.data[index])
        twin.mask = self.mask[index]
        twin.step = self.step
        return twin

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.state.data * self.mask[:, :, None])))


class DynamicInteraction(Module):
    """Address/Read attention over the memory plus the forget/add gates."""

    def __init__(self, d_query: int, d_mem: int, d_state: int, d_att: int, heads: int,
                 rng: np.random.Generator, scale: float = 0.08, use_update: bool = True,
                 gate_bias: bool = True):
        self.attention = AdditiveAttention(d_query, d_mem, d_att, d_mem, heads, rng, scale)
        if use_update:
            self.W_f = uniform(rng, (d_state, d_mem), scale)
            self.W_a = uniform(rng, (d_state, d_mem), scale)
            if gate_bias:
                self.b_f = uniform(rng, (d_mem,), scale)
                self.b_a = uniform(rng, (d_mem,), scale)
        self.use_update = use_update
        self.gate_bias = gate_bias

    def address_read(self, mem: DimMemory, query: Tensor) -> tuple[Addressing, Tensor]:
        return self.attention(query, mem.state, mem.mask)

    def gates(self, s_prev: Tensor) -> tuple[Tensor, Tensor]:
        f, a = s_prev @ self.W_f, s_prev @ self.W_a
        if self.gate_bias:
            f, a = f + self.b_f, a + self.b_a
        return sigmoid(f), sigmoid(a)

    def update(self, mem: DimMemory, weights: Tensor, s_prev: Tensor) -> DimMemory:
        """Forget-then-add rewrite of ``mem`` in place; returns ``mem``."""
        if not self.use_update:
            return mem
        B, m, _ = mem.state.shape
        if weights.shape != (B, m):
            raise DimensionError(f"update(): weights {weights.shape} vs memory rows {(B, m)}")
        forget, add = self.gates(s_prev)
        extent = weights.reshape(B, m, 1)
        mem.state = mem.state * (1.0 - extent * forget.reshape(B, 1, -1)) + extent * add.reshape(B, 1, -1)
        mem.step += 1
        return mem


def dim_address_read(module: DynamicInteraction, mem: DimMemory, query: Tensor):
    a, c = module.address_read(mem, query)
    return a.weights, c


def dim_update(module: DynamicInteraction, mem: DimMemory, weights: Tensor, s_prev: Tensor) -> DimMemory:
    return module.update(mem, weights, s_prev)


def dim_reset(mem: DimMemory) -> DimMemory:
    return mem.reset()
