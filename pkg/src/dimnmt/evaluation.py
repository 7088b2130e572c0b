"""BLEU (multi-bleu.pl semantics), length buckets, attention heatmaps and the ablation harness."""

from __future__ import annotations

import collections
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig
from .tensor import no_grad
from .text import Batch, Vocabulary, make_batches

log = logging.getLogger(__name__)

DEFAULT_BUCKETS = (0, 10, 20, 30, 45)


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    ratio: float
    hyp_len: int
    ref_len: int

    def __str__(self) -> str:
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.bleu:.2f}, {p} (BP={self.brevity_penalty:.3f}, "
                f"ratio={self.ratio:.3f}, hyp_len={self.hyp_len}, ref_len={self.ref_len})")


def _ngrams(words: Sequence[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu(hyps: Sequence[str], refs, case_insensitive: bool = False, max_n: int = 4) -> BleuReport:
    """Corpus BLEU over whitespace-tokenised strings.

    ``refs`` is either one list of reference strings or a list of such lists
    (one per reference set).  Clipping uses the max count over references;
    the reference length is the closest one per sentence, shorter on ties.
    No smoothing: any zero precision gives BLEU 0.
    """
    if not hyps:
        raise ValueError("bleu(): empty corpus")
    ref_sets = [refs] if isinstance(refs[0], str) else list(refs)
    for rs in ref_sets:
        if len(rs) != len(hyps):
            raise ValueError(f"bleu(): {len(hyps)} hypotheses vs {len(rs)} references")
    fold = str.lower if case_insensitive else (lambda s: s)
    correct = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    hyp_len = ref_len = 0
    for k, hyp in enumerate(hyps):
        words = fold(hyp).split()
        refs_k = [fold(rs[k]).split() for rs in ref_sets]
        hyp_len += len(words)
        closest = min(refs_k, key=lambda r: (abs(len(r) - len(words)), len(r)))
        ref_len += len(closest)
        for n in range(1, max_n + 1):
            h = _ngrams(words, n)
            best: collections.Counter = collections.Counter()
            for r in refs_k:
                best |= _ngrams(r, n)
            total[n] += max(len(words) - n + 1, 0)
            correct[n] += sum(min(c, best[g]) for g, c in h.items())
    precisions = [correct[n] / total[n] if total[n] else 0.0 for n in range(1, max_n + 1)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    ratio = hyp_len / ref_len if ref_len else 0.0
    return BleuReport(score, precisions, bp, ratio, hyp_len, ref_len)


# -- model-facing metrics -------------------------------------------------------


def teacher_forced_accuracy(model, batches: Sequence[Batch]) -> float:
    """Fraction of non-pad L2R positions (EOS included) where argmax equals the gold token."""
    hit = count = 0
    with no_grad():
        for batch in batches:
            out = model.forward_train(batch, None)
            pred = out.l2r_logits.data.argmax(axis=-1)
            hit += int(((pred == out.l2r_gold) * out.mask).sum())
            count += int(out.mask.sum())
    return hit / count


def corpus_translate(model, sources: Sequence[Sequence[int]], beam: int = 10, alpha: float = 1.0) -> list[list[int]]:
    from .decoding import translate_ids

    return [translate_ids(model, s, beam, alpha)[0].tokens for s in sources]


def valid_bleu(model, pairs: Sequence[tuple[Sequence[str], Sequence[str]]], src_vocab: Vocabulary,
               tgt_vocab: Vocabulary, beam: int = 10, alpha: float = 1.0) -> float:
    hyps = corpus_translate(model, [src_vocab.encode(s) for s, _ in pairs], beam, alpha)
    return bleu([" ".join(tgt_vocab.decode(h)) for h in hyps], [" ".join(t) for _, t in pairs]).bleu


# -- length buckets --------------------------------------------------------------


@dataclass
class LengthBucketReport:
    boundaries: list[int]
    counts: list[int]
    scores: list[float | None]

    def labels(self) -> list[str]:
        edges = list(self.boundaries) + [None]
        return [f"[{a},{b})" if b is not None else f"[{a},inf)" for a, b in zip(edges, edges[1:])]

    def table(self) -> str:
        lines = [f"{'length':<12}{'count':>7}{'BLEU':>9}"]
        for lab, c, s in zip(self.labels(), self.counts, self.scores):
            lines.append(f"{lab:<12}{c:>7}{'-' if s is None else f'{s:.2f}':>9}")
        return "\n".join(lines)


def length_bucket_eval(pairs: Sequence[tuple[str, str]], translate: Callable[[str], str],
                       buckets: Sequence[int] = DEFAULT_BUCKETS) -> LengthBucketReport:
    """Translate each source, group by source token count, score each group.

    ``buckets`` are sorted lower edges; the last bucket is open-ended.
    """
    edges = list(buckets)
    if edges != sorted(edges):
        raise ValueError("bucket boundaries must be sorted")
    groups: list[list[tuple[str, str]]] = [[] for _ in edges]
    for src, ref in pairs:
        n = len(src.split())
        k = max(i for i, e in enumerate(edges) if n >= e) if n >= edges[0] else 0
        groups[k].append((translate(src), ref))
    scores = [bleu([h for h, _ in g], [r for _, r in g]).bleu if g else None for g in groups]
    return LengthBucketReport(edges, [len(g) for g in groups], scores)


# -- heatmaps --------------------------------------------------------------------


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary (P5) 8-bit greyscale."""
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_matrix(path, weights: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str]) -> None:
    lines = ["\t" + "\t".join(col_labels)]
    for lab, row in zip(row_labels, weights):
        lines.append(lab + "\t" + "\t".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path) -> tuple[np.ndarray, list[str], list[str]]:
    lines = Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")
    cols = lines[0].split("\t")[1:]
    rows, values = [], []
    for line in lines[1:]:
        parts = line.split("\t")
        rows.append(parts[0])
        values.append([float(x) for x in parts[1:]])
    return np.array(values, dtype=np.float64).reshape(len(rows), len(cols)), rows, cols


def to_pixels(weights: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(255.0 * np.asarray(weights)), 0, 255).astype(np.uint8)


def export_heatmap(weights, row_labels: Sequence[str], col_labels: Sequence[str], path) -> tuple[Path, Path]:
    """Write ``<path>.pgm`` (brighter = more weight) and ``<path>.tsv``.

    Rows are L2R output tokens, columns the R2L tokens held in memory.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(row_labels), len(col_labels)):
        raise ValueError(f"weights {w.shape} vs {len(row_labels)} x {len(col_labels)} labels")
    if w.size and not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
        log.warning("attention rows do not sum to 1; rendering anyway")
    base = Path(path)
    img, tsv = base.with_suffix(".pgm"), base.with_suffix(".tsv")
    write_pgm(img, to_pixels(w))
    write_matrix(tsv, w, row_labels, col_labels)
    return img, tsv


# -- ablation --------------------------------------------------------------------

VARIANTS = (
    ("Full model", {}),
    ("- agreement regularization", {"no_agreement": True}),
    ("- Update", {"no_update": True}),
    ("- DIM (Address & Read & Update)", {"no_dim": True}),
)


@dataclass
class AblationRow:
    name: str
    bleu: float
    delta: float | None
    parameters: int
    per_seed: list[float] = field(default_factory=list)


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def text(self) -> str:
        width = max(len(r.name) for r in self.rows) + 2
        lines = [f"{'Architecture':<{width}}{'BLEU':>8}{'Delta':>8}{'#Param':>9}"]
        for r in self.rows:
            d = "--" if r.delta is None else f"{r.delta:+.2f}"
            lines.append(f"{r.name:<{width}}{r.bleu:>8.2f}{d:>8}{r.parameters:>9}")
        return "\n".join(lines)

    def jsonl(self) -> str:
        return "".join(json.dumps(r.__dict__, sort_keys=True) + "\n" for r in self.rows)


def ablation_suite(train: Sequence, valid: Sequence, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                   base: RunConfig, seeds: Sequence[int] = (1,), beam: int | None = None,
                   variants=VARIANTS) -> AblationTable:
    """Train each variant with identical seeds and budgets; report median valid BLEU per variant.

    ``train``/``valid`` are (source tokens, target tokens) pairs.
    """
    from .training import train_loop

    ids = [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in train]
    beam = beam or base.decode.beam
    rows = []
    for name, flags in variants:
        scores, n_params = [], 0
        for seed in seeds:
            run = copy.deepcopy(base)
            run.train.seed = seed
            for k, v in flags.items():
                setattr(run.train, k, v)
            result = train_loop(ids, run)
            n_params = result.model.num_parameters()
            scores.append(valid_bleu(result.model, valid, src_vocab, tgt_vocab, beam, base.decode.alpha))
            log.info("%s seed=%d bleu=%.2f", name, seed, scores[-1])
        rows.append(AblationRow(name, float(np.median(scores)), None, n_params, scores))
    for r in rows[1:]:
        r.delta = r.bleu - rows[0].bleu
    return AblationTable(rows)
