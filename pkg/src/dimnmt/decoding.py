"""Two-pass inference: greedy R2L to build the memory, then beam search L2R."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .memory import DimMemory
from .model import BANNED, BiDecModel, length_cap
from .tensor import Tensor, no_grad
from .text import BOS, EOS, BpeModel, Vocabulary, bpe_decode, bpe_encode

log = logging.getLogger(__name__)


@dataclass
class Hypothesis:
    tokens: list[int]
    state: np.ndarray
    log_prob: float
    memory: DimMemory | None
    alive: bool = True
    tgt_attention: list[np.ndarray] = field(default_factory=list)
    src_attention: list[np.ndarray] = field(default_factory=list)

    def score(self, alpha: float = 1.0) -> float:
        return self.log_prob / (max(len(self.tokens), 1) ** alpha)

    @property
    def output(self) -> list[int]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else list(self.tokens)


@dataclass
class BeamResult:
    best: Hypothesis
    finished: list[Hypothesis]
    alpha: float

    @property
    def tokens(self) -> list[int]:
        return self.best.output

    @property
    def score(self) -> float:
        return self.best.score(self.alpha)


def greedy_r2l(model: BiDecModel, src: np.ndarray, src_len: np.ndarray,
               banned=BANNED) -> tuple[list[list[int]], DimMemory]:
    """Greedy right-to-left tokens (in emission order) and the memory they leave."""
    with no_grad():
        enc = model.encode(src, src_len)
        return model.greedy_r2l(enc, banned)


def _stack_memories(hyps: Sequence[Hypothesis]) -> DimMemory | None:
    if hyps[0].memory is None:
        return None
    mem = DimMemory(np.concatenate([h.memory.state.data for h in hyps]),
                    np.concatenate([h.memory.mask for h in hyps]))
    mem.snapshot = Tensor(np.concatenate([h.memory.snapshot.data for h in hyps]))
    mem.step = hyps[0].memory.step
    return mem


def beam_l2r(model: BiDecModel, src: np.ndarray, src_len: np.ndarray, mem: DimMemory | None,
             beam_size: int = 10, max_len: int | None = None, alpha: float = 1.0,
             banned=BANNED) -> BeamResult:
    """Beam search for one source row (``src`` shape (1, n)).

    The beam shrinks by one slot per finished hypothesis, so ``beam_size=1``
    is greedy decoding and a beam at least as wide as the number of possible
    prefixes is exhaustive.  Hypotheses still open at ``max_len`` are closed
    without EOS.  Final ranking uses ``log_prob / len**alpha`` with EOS counted.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    with no_grad():
        enc = model.encode(src, src_len)
        ctx, s0 = model.l2r.prepare(enc)
        if max_len is None:
            max_len = int(length_cap(src_len, model.cfg.len_ratio, model.cfg.len_extra)[0])
        root = Hypothesis([], s0.data[0], 0.0, mem.select([0]) if mem is not None else None)
        if not model.l2r.with_memory:
            root.memory = None
        hyps = [root]
        finished: list[Hypothesis] = []
        banned_ids = [b for b in banned if b < model.cfg.tgt_vocab]
        for t in range(max_len):
            k = len(hyps)
            y = np.array([h.tokens[-1] if h.tokens else BOS for h in hyps])
            state = Tensor(np.stack([h.state for h in hyps]))
            batch_mem = _stack_memories(hyps)
            out = model.l2r.step(y, state, ctx.expand(np.zeros(k, dtype=int)), batch_mem)
            logits = out.logits.data
            z = logits - logits.max(axis=1, keepdims=True)
            lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            lp[:, banned_ids] = -np.inf
            totals = np.array([h.log_prob for h in hyps])[:, None] + lp
            width = beam_size - len(finished)
            flat = totals.ravel()
            # stable sort keeps (hypothesis, token) order on exact ties
            picks = [i for i in np.argsort(-flat, kind="stable")[:width] if np.isfinite(flat[i])]
            survivors = []
            for idx in picks:
                i, w = divmod(int(idx), lp.shape[1])
                parent = hyps[i]
                child = Hypothesis(
                    parent.tokens + [w],
                    out.state.data[i].copy(),
                    float(flat[idx]),
                    batch_mem.select([i]) if batch_mem is not None else None,
                    tgt_attention=parent.tgt_attention
                    + ([out.tgt_attention.data[i].copy()] if out.tgt_attention is not None else []),
                    src_attention=parent.src_attention + [out.src_attention.data[i].copy()],
                )
                if w == EOS:
                    child.alive = False
                    finished.append(child)
                else:
                    survivors.append(child)
            if t + 1 == max_len:
                for h in survivors:
                    h.alive = False
                finished.extend(survivors)
                survivors = []
            hyps = survivors
            if not hyps or len(finished) >= beam_size:
                break
    best = max(finished, key=lambda h: h.score(alpha))
    return BeamResult(best, finished, alpha)


@dataclass
class Translation:
    text: str
    tokens: list[str]
    r2l_tokens: list[str]
    score: float
    tgt_attention: np.ndarray | None = None  # (m, m') rows per output token
    src_attention: np.ndarray | None = None  # (m, n)


def translate_ids(model: BiDecModel, src_ids: Sequence[int], beam: int = 10, alpha: float = 1.0):
    """Decode one id sequence (EOS is appended here).  Returns (BeamResult, r2l ids)."""
    src = np.array([list(src_ids) + [EOS]], dtype=np.int64)
    src_len = np.array([src.shape[1]])
    r2l_tokens, mem = greedy_r2l(model, src, src_len)
    if not model.l2r.with_memory:
        mem = None
    result = beam_l2r(model, src, src_len, mem, beam, alpha=alpha)
    return result, r2l_tokens[0]


def translate(model: BiDecModel, source: str, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
              bpe: BpeModel | None = None, tgt_bpe: BpeModel | None = None,
              beam: int = 10, alpha: float = 1.0, with_attention: bool = False) -> Translation:
    pieces = bpe_encode(bpe, source) if bpe is not None else source.split()
    if not pieces:
        log.warning("empty source sentence; returning empty translation")
        return Translation("", [], [], 0.0)
    result, r2l = translate_ids(model, src_vocab.encode(pieces), beam, alpha)
    out_tokens = tgt_vocab.decode(result.tokens)
    text = bpe_decode(out_tokens) if (tgt_bpe is not None or bpe is not None) else " ".join(out_tokens)
    t = Translation(text, out_tokens, tgt_vocab.decode(r2l), result.score)
    if with_attention:
        best = result.best
        m = len(best.output)
        if best.tgt_attention:
            t.tgt_attention = np.stack(best.tgt_attention)[:m]
        t.src_attention = np.stack(best.src_attention)[:m]
    return t
