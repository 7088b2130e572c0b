import math

import numpy as np
import pytest
import sacrebleu
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_model
from dimnmt.evaluation import (
    VARIANTS, AblationRow, AblationTable, bleu, export_heatmap, length_bucket_eval, read_matrix,
    read_pgm, teacher_forced_accuracy,
)
from dimnmt.text import make_batches

# hand-built corpora scored against an independent implementation with the
# same conventions (max-count clipping, closest reference length, no smoothing).
# "short-and-long" has a hypothesis shorter than 4 tokens, which separates
# true n-gram counts from implementations that floor each count at one.
CORPORA = {
    "single-ref": (
        ["the cat sat on the mat today", "a quick brown fox jumps", "it is what it is and it was"],
        [["the cat sat on a mat today", "the quick brown fox jumps over", "it is what it was and it is"]],
    ),
    "multi-ref": (
        ["he read the book because he was interested in world history",
         "the cat the cat the cat sat on the mat"],
        [["he was interested in world history because he read the book",
          "the cat sat on the mat"],
         ["he read the book because he was interested in history",
          "there is a cat on the mat the cat"]],
    ),
    "short-and-long": (
        ["a b c d e f", "x y z", "one two three four five six seven"],
        [["a b c d e f g h", "x y z w", "one two three four"],
         ["a b c d", "x y", "one two three four five six seven eight nine"]],
    ),
}


def reference_bleu(hyps, ref_sets):
    # pre-tokenised input, no smoothing: the multi-bleu.pl convention
    return sacrebleu.corpus_bleu(hyps, ref_sets, tokenize="none", smooth_method="none", force=True).score


def test_identity_is_100():
    lines = ["a b c d e", "the cat sat on the mat"]
    assert bleu(lines, lines).bleu == pytest.approx(100.0, abs=1e-12)


def test_brevity_penalty_fixture():
    report = bleu(["a b c d"], ["a b c d e"])
    assert report.precisions == [1.0] * 4
    assert report.bleu == pytest.approx(100 * math.exp(1 - 5 / 4), abs=1e-12)
    assert abs(report.bleu - 77.88) <= 0.01


def test_no_overlap_is_zero():
    assert bleu(["x y z w"], ["a b c d"]).bleu == 0.0


@pytest.mark.parametrize("name", sorted(CORPORA))
def test_matches_reference_implementation(name):
    hyps, refs = CORPORA[name]
    assert bleu(hyps, refs).bleu == pytest.approx(reference_bleu(hyps, refs), abs=1e-9)


def test_closest_reference_length_prefers_shorter_on_tie():
    # hypothesis length 4, references of length 3 and 5: the shorter one counts
    report = bleu(["a b c d"], [["a b c"], ["a b c d e"]])
    assert report.ref_len == 3 and report.brevity_penalty == 1.0


def test_case_folding_and_length_mismatch():
    assert bleu(["A B C D"], ["a b c d"], case_insensitive=True).bleu == pytest.approx(100.0)
    assert bleu(["A B C D"], ["a b c d"]).bleu == 0.0
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(3)))
def test_sentence_order_does_not_matter(perm):
    hyps, refs = CORPORA["short-and-long"]
    shuffled = [[rs[i] for i in perm] for rs in refs]
    assert bleu([hyps[i] for i in perm], shuffled).bleu == pytest.approx(bleu(hyps, refs).bleu, abs=1e-12)


# -- buckets ---------------------------------------------------------------------


def test_single_bucket_equals_corpus_bleu():
    hyps, (refs,) = CORPORA["single-ref"]
    table = dict(zip(hyps, hyps))
    pairs = list(zip(hyps, refs))
    report = length_bucket_eval(pairs, lambda s: table[s], buckets=(0,))
    assert report.counts == [3]
    assert report.scores[0] == pytest.approx(bleu(hyps, refs).bleu)


def test_buckets_partition_and_empty_buckets():
    pairs = [(" ".join(["w"] * n), "w") for n in (1, 5, 12, 12, 31, 50)]
    report = length_bucket_eval(pairs, lambda s: s)
    assert report.counts == [2, 2, 0, 1, 1]
    assert sum(report.counts) == len(pairs)
    assert report.scores[2] is None
    assert "[45,inf)" in report.table()
    with pytest.raises(ValueError):
        length_bucket_eval(pairs, lambda s: s, buckets=(10, 0))


# -- heatmaps ----------------------------------------------------------------------


def test_heatmap_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.random((3, 5))
    w /= w.sum(axis=1, keepdims=True)
    rows, cols = ["a", "b", "c"], ["v", "w", "x", "y", "z"]
    img, tsv = export_heatmap(w, rows, cols, tmp_path / "attn")
    pixels = read_pgm(img)
    assert pixels.shape == (3, 5)
    np.testing.assert_array_equal(pixels, np.rint(255 * w).astype(np.uint8))
    back, r, c = read_matrix(tsv)
    assert np.array_equal(back, w) and r == rows and c == cols


def test_heatmap_one_hot_and_warning(tmp_path, caplog):
    img, _ = export_heatmap(np.eye(2), ["a", "b"], ["x", "y"], tmp_path / "eye")
    assert read_pgm(img).tolist() == [[255, 0], [0, 255]]
    export_heatmap(np.full((1, 2), 0.9), ["a"], ["x", "y"], tmp_path / "bad")
    assert "sum to 1" in caplog.text
    with pytest.raises(ValueError):
        export_heatmap(np.eye(2), ["a"], ["x", "y"], tmp_path / "shape")


# -- model metrics and ablation table --------------------------------------------------


def test_teacher_forced_accuracy_is_a_fraction():
    batches = make_batches([([5, 6], [7, 8]), ([9], [10, 11, 5])], 100)
    acc = teacher_forced_accuracy(tiny_model(), batches)
    assert 0.0 <= acc <= 1.0


def test_ablation_table_renders_every_variant():
    rows = [AblationRow(name, 50.0 - i, None if i == 0 else -float(i), 100 - i) for i, (name, _) in enumerate(VARIANTS)]
    table = AblationTable(rows)
    text = table.text()
    assert all(name in text for name, _ in VARIANTS)
    assert "--" in text and "-1.00" in text
    assert len(table.jsonl().splitlines()) == len(VARIANTS)
