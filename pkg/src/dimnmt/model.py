"""Encoder + right-to-left decoder + left-to-right decoder with dynamic memory.

Both decoders are conditional GRUs: ``s~ = GRU1(emb(y_prev), s_prev)``, source
attention queried with ``s~``, then ``s = GRU2(context, s~)``.  The L2R
decoder additionally reads (and rewrites) the memory of R2L states and feeds
``[source context; target context]`` to GRU2 and the readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AdditiveAttention
from .config import ModelConfig
from .encoder import Encoder, EncoderStates
from .memory import DimMemory, DynamicInteraction
from .nn import GRUCell, Module, dropout, uniform
from .tensor import Tensor, concat, no_grad, stack, tanh
from .text import BOS, EOS, PAD, R2L_BOS, Batch, reverse_target_row

BANNED = (PAD, BOS, R2L_BOS)


@dataclass
class SourceContext:
    """Encoder output plus the source-attention key projection of one decoder."""

    enc: EncoderStates
    keys: Tensor

    def expand(self, index) -> "SourceContext":
        index = np.asarray(index)
        return SourceContext(self.enc.expand(index), self.keys[index])

    @property
    def lengths(self) -> np.ndarray:
        return self.enc.mask.sum(axis=1).astype(int)


@dataclass
class StepOutput:
    logits: Tensor
    state: Tensor
    src_attention: Tensor
    tgt_attention: Tensor | None = None


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, with_memory: bool):
        s = cfg.init_scale
        d_h = 2 * cfg.d_enc
        self.embedding = uniform(rng, (cfg.tgt_vocab, cfg.d_emb), s)
        self.W_init = uniform(rng, (d_h, cfg.d_dec), s)
        self.b_init = uniform(rng, (cfg.d_dec,), s)
        self.gru1 = GRUCell(cfg.d_emb, cfg.d_dec, rng, s)
        self.src_attn = AdditiveAttention(cfg.d_dec, d_h, cfg.d_att, cfg.d_dec, cfg.heads, rng, s)
        d_ctx = cfg.d_dec
        if with_memory:
            self.dim = DynamicInteraction(cfg.d_dec, cfg.d_dec, cfg.d_dec, cfg.d_att, cfg.heads, rng, s,
                                          use_update=cfg.use_update, gate_bias=cfg.dim_gate_bias)
            d_ctx += cfg.d_dec
        self.gru2 = GRUCell(d_ctx, cfg.d_dec, rng, s)
        self.W_r = uniform(rng, (cfg.d_emb + d_ctx + cfg.d_dec, cfg.d_emb), s)
        self.b_r = uniform(rng, (cfg.d_emb,), s)
        if not cfg.tie_embeddings:
            self.W_out = uniform(rng, (cfg.d_emb, cfg.tgt_vocab), s)
        self.with_memory = with_memory
        self.tied = cfg.tie_embeddings
        self.dropout_out = cfg.dropout_out

    def prepare(self, enc: EncoderStates) -> tuple[SourceContext, Tensor]:
        """Key projection for source attention and the initial decoder state."""
        mask = enc.mask
        mean = (enc.h * mask[:, :, None]).sum(axis=1) * (1.0 / mask.sum(axis=1, keepdims=True))
        s0 = tanh(mean @ self.W_init + self.b_init)
        return SourceContext(enc, self.src_attn.project_keys(enc.h)), s0

    def readout(self, emb: Tensor, ctx: Tensor, state: Tensor,
                rng: np.random.Generator | None = None) -> Tensor:
        pre = tanh(concat([emb, ctx, state], axis=-1) @ self.W_r + self.b_r)
        pre = dropout(pre, self.dropout_out, rng)
        out = self.embedding.T if self.tied else self.W_out
        return pre @ out

    def step(self, y_prev, s_prev: Tensor, src: SourceContext, mem: DimMemory | None = None,
             rng: np.random.Generator | None = None) -> StepOutput:
        emb = self.embedding[np.asarray(y_prev)]
        s_mid = self.gru1(emb, s_prev)
        a_src, c_src = self.src_attn(s_mid, src.enc.h, src.enc.mask, src.keys)
        tgt_weights = None
        if self.with_memory:
            if mem is None:
                raise ValueError("the L2R decoder needs an initialised DimMemory")
            a_tgt, c_tgt = self.dim.address_read(mem, s_mid)
            self.dim.update(mem, a_tgt.weights, s_prev)
            ctx = concat([c_src, c_tgt], axis=-1)
            tgt_weights = a_tgt.weights
        else:
            ctx = c_src
        state = self.gru2(ctx, s_mid)
        logits = self.readout(emb, ctx, state, rng)
        return StepOutput(logits, state, a_src.weights, tgt_weights)


@dataclass
class TrainOutputs:
    """Teacher-forced logits (B, T, V) for both decoders, aligned to ``gold``/``mask``.

    ``r2l_gold[b]`` holds the reversed reference: position ``i < m`` is
    ``y_{m-i}``, position ``m`` is EOS.  The L2R side is in natural order.
    """

    r2l_logits: Tensor
    l2r_logits: Tensor
    r2l_gold: np.ndarray
    l2r_gold: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray  # reference lengths m (without EOS)
    memory: DimMemory | None = None


def reverse_rows(tgt: np.ndarray) -> np.ndarray:
    out = np.stack([reverse_target_row(r) for r in tgt])
    out[:, 0] = R2L_BOS
    return out


def length_cap(src_len, ratio: float = 1.5, extra: int = 5) -> np.ndarray:
    return np.array([math.ceil(ratio * int(n)) + extra for n in np.atleast_1d(src_len)])


def _argmax(logits: np.ndarray, banned=BANNED) -> np.ndarray:
    masked = logits.copy()
    masked[:, [b for b in banned if b < masked.shape[1]]] = -np.inf
    return masked.argmax(axis=1)


class BiDecModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 1):
        cfg.validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg.src_vocab, cfg.d_emb, cfg.d_enc, rng, cfg.init_scale,
                               cfg.dropout_emb, cfg.dropout_enc)
        self.r2l = Decoder(cfg, rng, with_memory=False)
        self.l2r = Decoder(cfg, rng, with_memory=cfg.use_dim)

    # -- single steps -----------------------------------------------------------

    def r2l_step(self, y_prev, s_prev, src: SourceContext, rng=None) -> StepOutput:
        return self.r2l.step(y_prev, s_prev, src, None, rng)

    def l2r_step(self, y_prev, s_prev, src: SourceContext, mem: DimMemory | None, rng=None) -> StepOutput:
        return self.l2r.step(y_prev, s_prev, src, mem, rng)

    def encode(self, src: np.ndarray, src_len: np.ndarray, rng=None) -> EncoderStates:
        return self.encoder(src, src_len, rng)

    # -- passes -----------------------------------------------------------------

    def teacher_forced(self, decoder: Decoder, enc: EncoderStates, inputs: np.ndarray,
                       mem: DimMemory | None = None, rng=None) -> tuple[Tensor, Tensor]:
        """Logits (B, T, V) and states (B, T, d) for gold-fed decoding."""
        src, s = decoder.prepare(enc)
        logits, states = [], []
        for t in range(inputs.shape[1]):
            out = decoder.step(inputs[:, t], s, src, mem, rng)
            s = out.state
            logits.append(out.logits)
            states.append(s)
        return stack(logits, axis=1), stack(states, axis=1)

    def greedy_r2l(self, enc: EncoderStates, banned=BANNED) -> tuple[list[list[int]], DimMemory]:
        """Argmax R2L decoding.  Memory rows are the states of every emitted step, EOS included.

        Records a graph only when grad mode is on; callers wanting constant
        states wrap this in :func:`no_grad`.
        """
        src, s = self.r2l.prepare(enc)
        B = enc.h.shape[0]
        caps = length_cap(src.lengths, self.cfg.len_ratio, self.cfg.len_extra)
        y = np.full(B, R2L_BOS)
        alive = np.ones(B, dtype=bool)
        tokens: list[list[int]] = [[] for _ in range(B)]
        states, masks = [], []
        t = 0
        while alive.any():
            out = self.r2l.step(y, s, src)
            s = out.state
            y = _argmax(out.logits.data, banned)
            states.append(s)
            masks.append(alive.astype(np.float64))
            for b in np.flatnonzero(alive):
                if y[b] == EOS:
                    alive[b] = False
                else:
                    tokens[b].append(int(y[b]))
                    if t + 1 >= caps[b]:
                        alive[b] = False
            t += 1
        return tokens, DimMemory(stack(states, axis=1), np.stack(masks, axis=1))

    def forward_train(self, batch: Batch, rng: np.random.Generator | None = None) -> TrainOutputs:
        cfg = self.cfg
        enc = self.encode(batch.src, batch.src_len, rng)
        l2r_in, l2r_gold = batch.tgt[:, :-1], batch.tgt[:, 1:]
        rev = reverse_rows(batch.tgt)
        r2l_in, r2l_gold = rev[:, :-1], rev[:, 1:]
        mask = batch.tgt_mask[:, 1:]

        r2l_logits, r2l_states = self.teacher_forced(self.r2l, enc, r2l_in, None, rng)

        mem = None
        if self.l2r.with_memory:
            if cfg.dim_states == "teacher":
                states = r2l_states if cfg.dim_grad_to_r2l else r2l_states.detach()
                mem = DimMemory(states, mask)
            elif cfg.dim_grad_to_r2l:
                mem = self.greedy_r2l(enc)[1]
            else:
                with no_grad():
                    mem = self.greedy_r2l(enc)[1]
                mem = DimMemory(mem.state.detach(), mem.mask)

        l2r_logits, _ = self.teacher_forced(self.l2r, enc, l2r_in, mem, rng)
        return TrainOutputs(r2l_logits, l2r_logits, r2l_gold, l2r_gold, mask,
                            batch.tgt_len - 2, mem)
