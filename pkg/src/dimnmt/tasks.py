"""Synthetic parallel corpora for smoke tests, demos and ablations."""

from __future__ import annotations

import numpy as np

from .text import Vocabulary


def symbols(n: int) -> list[str]:
    return [f"w{i:02d}" for i in range(n)]


def copy_task(n_train: int = 200, n_valid: int = 50, n_symbols: int = 16, max_len: int = 10,
              min_len: int = 1, seed: int = 0):
    """Target equals source.  Returns (train, valid) lists of (src, tgt) token lists."""
    rng = np.random.default_rng(seed)
    vocab = symbols(n_symbols)

    def sample():
        n = int(rng.integers(min_len, max_len + 1))
        s = [vocab[i] for i in rng.integers(0, n_symbols, size=n)]
        return s, list(s)

    return [sample() for _ in range(n_train)], [sample() for _ in range(n_valid)]


def noisy_reverse_task(n_train: int = 300, n_valid: int = 60, n_symbols: int = 12, min_len: int = 3,
                       max_len: int = 8, noise: float = 0.1, seed: int = 0):
    """Target is the reversed source; each training-target token is resampled with prob ``noise``.

    Validation targets are clean.
    """
    rng = np.random.default_rng(seed)
    vocab = symbols(n_symbols)

    def sample(noisy: bool):
        n = int(rng.integers(min_len, max_len + 1))
        s = [vocab[i] for i in rng.integers(0, n_symbols, size=n)]
        t = s[::-1]
        if noisy:
            flip = rng.random(n) < noise
            t = [vocab[int(rng.integers(0, n_symbols))] if f else w for w, f in zip(t, flip)]
        return s, t

    return [sample(True) for _ in range(n_train)], [sample(False) for _ in range(n_valid)]


def to_ids(pairs, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    return [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]
