"""Byte-pair encoding, vocabularies and token-budgeted batching."""

from __future__ import annotations

import collections
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

EOW = "</w>"

PAD, BOS, EOS, UNK, R2L_BOS = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>", "<r2l>")


@dataclass(frozen=True)
class BpeModel:
    """Ordered merge rules.  Rule ``i`` has priority ``i`` (lower merges first)."""

    merges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge rule")

    @property
    def ranks(self) -> dict[tuple[str, str], int]:
        return {pair: i for i, pair in enumerate(self.merges)}

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        rules = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                a, b = line.split(" ")
                rules.append((a, b))
        return cls(tuple(rules))


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word) + (EOW,)


def _merge_symbols(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_train(corpus: Iterable[str], num_merges: int) -> BpeModel:
    """Learn up to ``num_merges`` greedy merges.

    Equal pair counts go to the lexicographically smallest pair.  Training stops
    early once every word is a single symbol.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    words: collections.Counter[tuple[str, ...]] = collections.Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        for w in line.split():
            words[_word_symbols(w)] += 1
    if n_lines == 0:
        raise ValueError("empty corpus")

    vocab = dict(words)
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: collections.Counter[tuple[str, str]] = collections.Counter()
        for sym, freq in vocab.items():
            for a, b in zip(sym, sym[1:]):
                pairs[(a, b)] += freq
        if not pairs:
            break
        best_count = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == best_count)
        merges.append(best)
        vocab = {_merge_symbols(sym, best): f for sym, f in vocab.items()}
    return BpeModel(tuple(merges))


def _encode_word(word: str, ranks: dict[tuple[str, str], int]) -> list[str]:
    symbols = list(_word_symbols(word))
    while len(symbols) > 1:
        candidates = [
            (ranks[(a, b)], i) for i, (a, b) in enumerate(zip(symbols, symbols[1:])) if (a, b) in ranks
        ]
        if not candidates:
            break
        _, i = min(candidates)
        pair = (symbols[i], symbols[i + 1])
        symbols = list(_merge_symbols(tuple(symbols), pair))
    # a bare end-of-word marker is glued onto the final symbol
    if len(symbols) > 1 and symbols[-1] == EOW:
        symbols = symbols[:-2] + [symbols[-2] + EOW]
    return symbols


def bpe_encode(model: BpeModel, sentence: str) -> list[str]:
    ranks = model.ranks
    out: list[str] = []
    for word in sentence.split():
        out.extend(_encode_word(word, ranks))
    return out


def bpe_decode(tokens: Sequence[str]) -> str:
    return "".join(tokens).replace(EOW, " ").strip()


class Vocabulary:
    """Token/id maps.  Ids 0-4 are reserved for ``SPECIALS`` in that order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], max_size: int | None = None) -> "Vocabulary":
        counts: collections.Counter[str] = collections.Counter()
        for sent in sentences:
            counts.update(sent)
        for s in SPECIALS:
            counts.pop(s, None)
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - len(SPECIALS))]
        return cls(t for t, _ in ordered)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list[str]:
        """Tokens up to the first EOS; other specials except ``<unk>`` are dropped."""
        out = []
        for i in ids:
            i = int(i)
            if strip_specials and i < len(SPECIALS) and i != UNK:
                if i == EOS:
                    break
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text(
            "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos)), encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                tok, idx = line.rsplit("\t", 1)
                entries.append((int(idx), tok))
        entries.sort()
        if [i for i, _ in entries] != list(range(len(entries))):
            raise ValueError(f"{path}: vocabulary ids are not contiguous from 0")
        if tuple(t for _, t in entries[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path}: reserved ids 0-{len(SPECIALS) - 1} must be {SPECIALS}")
        return cls(t for _, t in entries[len(SPECIALS):])


@dataclass
class Batch:
    """Padded id matrices.  Source rows are ``w.. EOS``; target rows are ``BOS w.. EOS``."""

    src: np.ndarray
    src_len: np.ndarray
    tgt: np.ndarray
    tgt_len: np.ndarray
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def src_mask(self) -> np.ndarray:
        return (np.arange(self.src.shape[1])[None, :] < self.src_len[:, None]).astype(np.float64)

    @property
    def tgt_mask(self) -> np.ndarray:
        return (np.arange(self.tgt.shape[1])[None, :] < self.tgt_len[:, None]).astype(np.float64)

    def __len__(self) -> int:
        return self.src.shape[0]

    def tokens(self) -> int:
        return max(self.src.size, self.tgt.size)


def reverse_target_row(row: Sequence[int]) -> list[int]:
    """``BOS w1..wk EOS pad..`` -> ``BOS wk..w1 EOS pad..``."""
    row = list(row)
    end = row.index(EOS)
    return [row[0]] + row[1:end][::-1] + row[end:]


def _pad(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lens.max())), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, lens


def make_batches(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
    token_budget: int,
    reverse_target: bool = False,
    shuffle_seed: int | None = None,
) -> list[Batch]:
    """Bucket id pairs by length into batches whose padded size fits ``token_budget``.

    Both sides are charged for their EOS (and BOS on the target side).  Pairs
    that cannot fit alone are dropped; the count is logged.
    """
    rows = []
    skipped = 0
    for k, (s, t) in enumerate(pairs):
        src = list(s) + [EOS]
        tgt = [BOS] + list(t) + [EOS]
        if max(len(src), len(tgt)) > token_budget:
            skipped += 1
            continue
        if reverse_target:
            tgt = reverse_target_row(tgt)
        rows.append((len(src), len(tgt), k, src, tgt))
    if skipped:
        log.warning("skipped %d sentence pair(s) longer than the token budget %d", skipped, token_budget)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))

    groups: list[list[tuple]] = []
    cur: list[tuple] = []
    max_s = max_t = 0
    for r in rows:
        ns, nt = max(max_s, r[0]), max(max_t, r[1])
        if cur and (ns * (len(cur) + 1) > token_budget or nt * (len(cur) + 1) > token_budget):
            groups.append(cur)
            cur, ns, nt = [], r[0], r[1]
        cur.append(r)
        max_s, max_t = ns, nt
    if cur:
        groups.append(cur)

    batches = []
    for g in groups:
        src, src_len = _pad([r[3] for r in g])
        tgt, tgt_len = _pad([r[4] for r in g])
        batches.append(Batch(src, src_len, tgt, tgt_len, np.array([r[2] for r in g])))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(batches)
    return batches


def iter_parallel(src_path, tgt_path) -> Iterator[tuple[str, str]]:
    """Yield aligned (source, target) lines from two UTF-8 files."""
    with open(src_path, encoding="utf-8") as fs, open(tgt_path, encoding="utf-8") as ft:
        for a, b in zip(fs, ft, strict=True):
            yield a.rstrip("\n"), b.rstrip("\n")
