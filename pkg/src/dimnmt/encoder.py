"""Source embedding followed by two stacked bidirectional GRU layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import GRUCell, Module, dropout, uniform
from .tensor import Tensor, concat, stack


@dataclass
class EncoderStates:
    """Annotations ``h`` of shape (B, n, 2*d_enc) and the (B, n) source mask."""

    h: Tensor
    mask: np.ndarray

    def expand(self, index) -> "EncoderStates":
        """Select/repeat batch rows, e.g. to copy one sentence across a beam."""
        return EncoderStates(self.h[np.asarray(index)], self.mask[np.asarray(index)])


class BiGRULayer(Module):
    def __init__(self, d_in: int, d: int, rng: np.random.Generator, scale: float):
        self.fwd = GRUCell(d_in, d, rng, scale)
        self.bwd = GRUCell(d_in, d, rng, scale)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        B, n, _ = x.shape
        d = self.fwd.d
        outputs = []
        for cell, order in ((self.fwd, range(n)), (self.bwd, range(n - 1, -1, -1))):
            xw = cell.project_inputs(x)
            h = Tensor(np.zeros((B, d)))
            states = [None] * n
            for t in order:
                m = mask[:, t : t + 1]
                h_new = cell.step_projected(xw[:, t], h)
                # padded steps carry the state through unchanged
                h = h + (h_new - h) * m
                states[t] = h
            outputs.append(stack(states, axis=1))
        return concat(outputs, axis=-1) * mask[:, :, None]


class Encoder(Module):
    def __init__(self, vocab: int, d_emb: int, d: int, rng: np.random.Generator, scale: float = 0.08,
                 dropout_emb: float = 0.5, dropout_enc: float = 0.3):
        self.embedding = uniform(rng, (vocab, d_emb), scale)
        self.layer1 = BiGRULayer(d_emb, d, rng, scale)
        self.layer2 = BiGRULayer(2 * d, d, rng, scale)
        self.dropout_emb = dropout_emb
        self.dropout_enc = dropout_enc

    def __call__(self, src: np.ndarray, src_len: np.ndarray,
                 rng: np.random.Generator | None = None) -> EncoderStates:
        src = np.asarray(src)
        if src.min() < 0 or src.max() >= self.embedding.shape[0]:
            raise IndexError(f"source id out of range [0, {self.embedding.shape[0]})")
        if np.any(np.asarray(src_len) < 1):
            raise ValueError("every source row needs at least one token")
        mask = (np.arange(src.shape[1])[None, :] < np.asarray(src_len)[:, None]).astype(np.float64)
        x = dropout(self.embedding[src], self.dropout_emb, rng)
        h1 = dropout(self.layer1(x, mask), self.dropout_enc, rng)
        h2 = dropout(self.layer2(h1, mask), self.dropout_enc, rng)
        return EncoderStates(h2, mask)


def encode(encoder: Encoder, tokens, rng: np.random.Generator | None = None) -> EncoderStates:
    """Encode a list of id rows (ragged allowed)."""
    rows = [list(r) for r in tokens]
    lens = np.array([len(r) for r in rows])
    ids = np.zeros((len(rows), int(lens.max())), dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
    return encoder(ids, lens, rng)
