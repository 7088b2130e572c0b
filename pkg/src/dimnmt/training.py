"""Joint bidirectional objective, optimizer, learning-rate schedule and checkpoints.

Checkpoint file layout (all integers little-endian)::

    8 bytes   magic  b"DIMNMTCK"
    u32       format version (currently 1)
    u32       header length H
    H bytes   UTF-8 JSON header, keys sorted: {"adam_t", "config", "entries", "step"}
    entries x:
        u16   name length L, then L bytes UTF-8 name
        u8    rank R, then R x u32 dimensions
        f64   prod(dims) values, C order

Entry names are ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``,
written in sorted order so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ModelConfig, RunConfig, TrainConfig
from .model import BiDecModel, TrainOutputs
from .tensor import Tensor, clip_global_norm, global_norm, log_softmax
from .text import Batch, make_batches

log = logging.getLogger(__name__)

MAGIC = b"DIMNMTCK"
FORMAT_VERSION = 1


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    """Unreadable checkpoint, unknown format version or mismatched shapes."""


# -- losses ----------------------------------------------------------------------


def smoothed_nll(logits: Tensor, gold: np.ndarray, u: float, mask: np.ndarray | None = None) -> Tensor:
    """Mean over unmasked positions of cross-entropy against ``(1-u)*onehot + u/V``."""
    if not 0.0 <= u < 1.0:
        raise ValueError("label smoothing must lie in [0, 1)")
    gold = np.asarray(gold)
    V = logits.shape[-1]
    if mask is None:
        mask = np.ones(gold.shape)
    count = mask.sum()
    if count == 0:
        raise ValueError("smoothed_nll(): every position is masked")
    target = np.full(gold.shape + (V,), u / V)
    np.put_along_axis(target, gold[..., None], 1.0 - u + u / V, axis=-1)
    weight = target * (mask / count)[..., None]
    return -(log_softmax(logits, axis=-1) * weight).sum()


def alignment_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """For each row, position ``j < m`` maps to ``m-1-j``; EOS and padding stay put."""
    j = np.arange(T)[None, :]
    m = np.asarray(lengths)[:, None]
    return np.where(j < m, m - 1 - j, j)


def agreement_l2(r2l_logits: Tensor, l2r_logits: Tensor, lengths=None, mask=None) -> Tensor:
    """Mean squared difference between time-reversed R2L logits and L2R logits.

    2-D inputs are single sentences with every row a content position.
    """
    if r2l_logits.ndim == 2:
        r2l_logits = r2l_logits.reshape(1, *r2l_logits.shape)
        l2r_logits = l2r_logits.reshape(1, *l2r_logits.shape)
        if lengths is None:
            lengths = np.array([r2l_logits.shape[1]])
    if r2l_logits.shape != l2r_logits.shape:
        raise ValueError(f"agreement_l2(): {r2l_logits.shape} vs {l2r_logits.shape}")
    B, T, V = l2r_logits.shape
    if lengths is None:
        lengths = np.full(B, T)
    if mask is None:
        mask = np.ones((B, T))
    idx = alignment_index(lengths, T)
    aligned = r2l_logits[np.arange(B)[:, None], idx]
    diff = aligned - l2r_logits
    return (diff * diff * (mask / (mask.sum() * V))[:, :, None]).sum()


@dataclass
class LossParts:
    total: Tensor
    nll_r2l: float
    nll_l2r: float
    agreement: float


def joint_loss(out: TrainOutputs, cfg: TrainConfig) -> LossParts:
    u = cfg.label_smoothing
    r2l = smoothed_nll(out.r2l_logits, out.r2l_gold, u, out.mask)
    l2r = smoothed_nll(out.l2r_logits, out.l2r_gold, u, out.mask)
    total = r2l + l2r
    lam = cfg.agreement_weight
    agree = 0.0
    if lam > 0:
        term = agreement_l2(out.r2l_logits, out.l2r_logits, out.lengths, out.mask)
        agree = term.item()
        total = total + lam * term
    return LossParts(total, r2l.item(), l2r.item(), agree)


# -- schedule and optimizer ------------------------------------------------------


def lr_at(t: float, cfg: TrainConfig) -> float:
    """lr0 * min(1 + t(n-1)/(np), n, n (2n)^((s - nt)/(e - s)))."""
    n = cfg.replicas
    p = cfg.warmup * cfg.schedule_scale
    s = cfg.decay_start * cfg.schedule_scale
    e = cfg.decay_end * cfg.schedule_scale
    warm = 1.0 + t * (n - 1) / (n * p)
    decay = n * (2.0 * n) ** ((s - n * t) / (e - s))
    return cfg.lr0 * min(warm, float(n), decay)


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-6):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(adam: Adam, lr: float, clip_norm: float | None = 5.0) -> float:
    """Clip the global gradient norm, then apply one Adam update; returns the pre-clip norm."""
    params = list(adam.params.values())
    norm = global_norm(params)
    if clip_norm:
        clip_global_norm(params, clip_norm)
    adam.step(lr)
    return norm


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, model: BiDecModel, adam: Adam | None, step: int, config: dict) -> None:
    entries: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.data
        if adam is not None:
            entries[f"adam.m/{name}"] = adam.m[name]
            entries[f"adam.v/{name}"] = adam.v[name]
    header = json.dumps(
        {"config": config, "entries": len(entries), "step": step, "adam_t": adam.t if adam else 0},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


@dataclass
class Checkpoint:
    version: int
    step: int
    adam_t: int
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def read_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(buf[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for _ in range(header["entries"]):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return Checkpoint(version, header["step"], header.get("adam_t", 0), header["config"], tensors)


def restore(ckpt: Checkpoint, model: BiDecModel, adam: Adam | None = None) -> None:
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in ckpt.tensors:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        if ckpt.tensors[key].shape != p.shape:
            raise CheckpointError(
                f"parameter {name}: checkpoint shape {ckpt.tensors[key].shape} vs model {p.shape}"
            )
        p.data = ckpt.tensors[key].copy()
        if adam is not None and f"adam.m/{name}" in ckpt.tensors:
            adam.m[name] = ckpt.tensors[f"adam.m/{name}"].copy()
            adam.v[name] = ckpt.tensors[f"adam.v/{name}"].copy()
    if adam is not None:
        adam.t = ckpt.adam_t


def load_model(path) -> tuple[BiDecModel, RunConfig, Checkpoint]:
    ckpt = read_checkpoint(path)
    run = RunConfig.from_dict(ckpt.config)
    model = build_model(run)
    restore(ckpt, model)
    return model, run, ckpt


# -- loop ------------------------------------------------------------------------


def effective_model_config(run: RunConfig) -> ModelConfig:
    cfg = copy.deepcopy(run.model)
    if run.train.no_dim:
        cfg.use_dim = False
    if run.train.no_update:
        cfg.use_update = False
    return cfg


def build_model(run: RunConfig) -> BiDecModel:
    return BiDecModel(effective_model_config(run), seed=run.train.seed)


@dataclass
class TrainResult:
    model: BiDecModel
    adam: Adam
    metrics: list[dict]
    checkpoints: list[Path]
    step: int


def _dump_batch(path: Path, batch: Batch) -> None:
    path.write_text(json.dumps({
        "src": batch.src.tolist(), "src_len": batch.src_len.tolist(),
        "tgt": batch.tgt.tolist(), "tgt_len": batch.tgt_len.tolist(),
        "corpus_index": batch.index.tolist(),
    }))


def train_step(model: BiDecModel, adam: Adam, batch: Batch, step: int, cfg: TrainConfig) -> dict:
    """One optimisation step at global step index ``step`` (0-based)."""
    rng = np.random.default_rng([cfg.seed, step])
    model.zero_grad()
    parts = joint_loss(model.forward_train(batch, rng), cfg)
    loss = parts.total.item()
    if not math.isfinite(loss):
        raise NumericAbort(f"non-finite loss {loss} at step {step}")
    parts.total.backward()
    lr = lr_at(step, cfg)
    norm = adam_step(adam, lr, cfg.clip_norm)
    return {"step": step + 1, "lr": lr, "loss": loss, "nll_r2l": parts.nll_r2l,
            "nll_l2r": parts.nll_l2r, "agreement": parts.agreement, "grad_norm": norm}


def train_loop(pairs: Sequence[tuple[Sequence[int], Sequence[int]]], run: RunConfig,
               out_dir=None, resume=None, model: BiDecModel | None = None) -> TrainResult:
    """Train for ``run.train.max_steps`` steps over id pairs.

    Batch order within epoch ``k`` is a permutation seeded by ``(seed, k)``
    and dropout at step ``t`` draws from a generator seeded by ``(seed, t)``,
    so resuming from a checkpoint replays the exact same computation.
    """
    run.validate()
    cfg = run.train
    model = model or build_model(run)
    params = dict(model.named_parameters())
    adam = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    start = 0
    if resume is not None:
        ckpt = read_checkpoint(resume)
        restore(ckpt, model, adam)
        start = ckpt.step

    batches = make_batches(pairs, cfg.token_budget)
    if not batches:
        raise ValueError("no trainable sentence pairs")
    out = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out / "metrics.jsonl", "a" if resume else "w", encoding="utf-8")
        if not resume:
            metrics_file.write(json.dumps({"header": True, "seed": cfg.seed, "config": run.to_dict()},
                                          sort_keys=True) + "\n")

    metrics: list[dict] = []
    checkpoints: list[Path] = []
    order: np.ndarray | None = None
    epoch = -1
    try:
        for step in range(start, cfg.max_steps):
            k, pos = divmod(step, len(batches))
            if k != epoch:
                epoch = k
                order = np.random.default_rng([cfg.seed, 1_000_003, k]).permutation(len(batches))
            batch = batches[order[pos]]
            try:
                record = train_step(model, adam, batch, step, cfg)
            except NumericAbort:
                if out is not None:
                    _dump_batch(out / "nan_batch.json", batch)
                raise
            metrics.append(record)
            if metrics_file is not None and (step + 1) % max(cfg.log_every, 1) == 0:
                metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
            done = step + 1 == cfg.max_steps
            if out is not None and ((cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0) or done):
                path = out / f"ckpt_{step + 1:07d}.bin"
                save_checkpoint(path, model, adam, step + 1, run.to_dict())
                checkpoints.append(path)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return TrainResult(model, adam, metrics, checkpoints, max(start, cfg.max_steps))
