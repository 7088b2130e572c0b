import json
import math

import numpy as np
import pytest

from conftest import tiny_batch, tiny_model
from dimnmt.config import RunConfig, TrainConfig
from dimnmt.tensor import Tensor
from dimnmt.training import (
    Adam, CheckpointError, NumericAbort, adam_step, agreement_l2, alignment_index, joint_loss,
    load_model, lr_at, read_checkpoint, restore, save_checkpoint, smoothed_nll, train_loop, train_step,
)

# -- smoothed NLL ------------------------------------------------------------------


def test_nll_without_smoothing_is_cross_entropy():
    logits = np.array([[2.0, 0.5, -1.0]])
    expected = -(logits[0, 0] - np.log(np.exp(logits).sum()))
    assert smoothed_nll(Tensor(logits), np.array([0]), 0.0).item() == pytest.approx(expected, abs=1e-12)


def test_smoothed_target_distribution():
    # with V=4, u=0.1 the target is [0.925, 0.025, 0.025, 0.025]
    logits = np.array([[0.3, -0.2, 1.1, 0.0]])
    logp = logits[0] - np.log(np.exp(logits[0]).sum())
    expected = -(0.925 * logp[0] + 0.025 * logp[1:].sum())
    assert smoothed_nll(Tensor(logits), np.array([0]), 0.1).item() == pytest.approx(expected, abs=1e-12)


def test_uniform_logits_give_log_vocab_size():
    V = 7
    for u in (0.0, 0.1, 0.5):
        assert smoothed_nll(Tensor(np.zeros((3, V))), np.array([1, 2, 3]), u).item() == pytest.approx(math.log(V))


def test_nll_masking_and_errors():
    logits = Tensor(np.random.default_rng(0).normal(size=(1, 3, 5)))
    gold = np.array([[1, 2, 0]])
    a = smoothed_nll(logits, gold, 0.1, np.array([[1.0, 1.0, 0.0]])).item()
    b = smoothed_nll(logits[:, :2], gold[:, :2], 0.1).item()
    assert a == pytest.approx(b, abs=1e-12)
    with pytest.raises(ValueError):
        smoothed_nll(logits, gold, 0.1, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        smoothed_nll(logits, gold, 1.0)


# -- agreement ---------------------------------------------------------------------


def test_agreement_zero_for_reversed_copy():
    rng = np.random.default_rng(1)
    l2r = rng.normal(size=(4, 6))
    assert agreement_l2(Tensor(l2r[::-1].copy()), Tensor(l2r)).item() == 0.0


def test_agreement_constant_offset():
    l2r = np.random.default_rng(2).normal(size=(3, 5))
    delta = 0.7
    value = agreement_l2(Tensor(l2r[::-1] + delta), Tensor(l2r)).item()
    assert value == pytest.approx(delta**2, abs=1e-12)


def test_alignment_keeps_eos_and_padding_in_place():
    idx = alignment_index(np.array([3, 1]), 5)
    assert idx.tolist() == [[2, 1, 0, 3, 4], [0, 1, 2, 3, 4]]


def test_agreement_ignores_masked_positions():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(1, 4, 3)), rng.normal(size=(1, 4, 3))
    mask = np.array([[1.0, 1.0, 1.0, 0.0]])
    base = agreement_l2(Tensor(a), Tensor(b), np.array([2]), mask).item()
    b2 = b.copy()
    b2[0, 3] += 100.0
    assert agreement_l2(Tensor(a), Tensor(b2), np.array([2]), mask).item() == base


def test_joint_loss_without_agreement():
    batch = tiny_batch()
    out = tiny_model().forward_train(batch)
    on = joint_loss(out, TrainConfig(agreement=1.0))
    off = joint_loss(out, TrainConfig(no_agreement=True))
    assert off.agreement == 0.0
    assert off.total.item() == pytest.approx(on.nll_r2l + on.nll_l2r, abs=1e-12)
    assert on.total.item() == pytest.approx(on.nll_r2l + on.nll_l2r + on.agreement, abs=1e-12)


# -- schedule and optimizer ----------------------------------------------------------


def test_schedule_anchor_values():
    cfg = TrainConfig(lr0=1e-3, warmup=500, decay_start=8000, decay_end=64000, replicas=1)
    assert abs(lr_at(0, cfg) - 1e-3) <= 1e-12
    assert abs(lr_at(64000, cfg) - 5e-4) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 4])
def test_schedule_continuous_at_warmup_end(n):
    cfg = TrainConfig(replicas=n)
    t = n * cfg.warmup
    eps = 1e-7
    assert abs(lr_at(t - eps, cfg) - lr_at(t + eps, cfg)) < 1e-9
    assert lr_at(t, cfg) == pytest.approx(n * cfg.lr0)


def test_schedule_scale_compresses_steps():
    full, small = TrainConfig(), TrainConfig(schedule_scale=0.1)
    for t in (0, 100, 1000, 5000):
        assert lr_at(t / 10, small) == pytest.approx(lr_at(t, full), rel=1e-12)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 1e-3])
    adam = Adam({"p": p}, eps=1e-6)
    adam.step(0.01)
    g = np.array([0.5, -4.0, 1e-3])
    np.testing.assert_allclose(p.data, [1.0, -2.0, 3.0] - 0.01 * g / (np.abs(g) + 1e-6), atol=1e-15)


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    Adam({"p": p}).step(0.1)
    assert p.data.tolist() == [1.0, 2.0]


def test_adam_step_reports_preclip_norm():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([30.0, 40.0])
    norm = adam_step(Adam({"p": p}), 0.0, clip_norm=5.0)
    assert norm == 50.0 and np.allclose(p.grad, [3.0, 4.0])


def test_training_steps_reduce_loss():
    model = tiny_model(seed=1, dropout_emb=0.0, dropout_enc=0.0, dropout_out=0.0)
    batch = tiny_batch()
    cfg = TrainConfig(lr0=1e-2, warmup=1, decay_start=1000, decay_end=2000)
    adam = Adam(dict(model.named_parameters()))
    first = train_step(model, adam, batch, 0, cfg)["loss"]
    for step in range(1, 30):
        last = train_step(model, adam, batch, step, cfg)["loss"]
    assert last < 0.8 * first


# -- checkpoints and reproducibility ---------------------------------------------------


def small_run(**train):
    run = RunConfig()
    run.model.src_vocab = run.model.tgt_vocab = 12
    for k in ("d_emb", "d_enc", "d_dec", "d_att"):
        setattr(run.model, k, 8)
    run.model.heads = 2
    run.train.token_budget = 24
    run.train.max_steps = 6
    for k, v in train.items():
        setattr(run.train, k, v)
    return run


PAIRS = [([5, 6, 7], [8, 9]), ([10, 11], [5, 6, 7, 8]), ([9], [9, 10]), ([5, 5, 6, 7], [11])]


def test_checkpoint_round_trip_is_byte_exact(tmp_path):
    run = small_run()
    res = train_loop(PAIRS, run, tmp_path)
    path = res.checkpoints[-1]
    model, loaded_run, ckpt = load_model(path)
    adam = Adam(dict(model.named_parameters()))
    restore(ckpt, model, adam)
    save_checkpoint(tmp_path / "again.bin", model, adam, ckpt.step, loaded_run.to_dict())
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()
    for name, p in res.model.named_parameters():
        assert np.array_equal(p.data, dict(model.named_parameters())[name].data)


def test_resume_is_bit_exact(tmp_path):
    straight = train_loop(PAIRS, small_run(max_steps=8), tmp_path / "a")
    train_loop(PAIRS, small_run(max_steps=8, checkpoint_every=3), tmp_path / "b")
    resumed = train_loop(PAIRS, small_run(max_steps=8), tmp_path / "c", resume=tmp_path / "b" / "ckpt_0000003.bin")
    for (name, p), (_, q) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert np.array_equal(p.data, q.data), name
    assert straight.metrics[3:] == resumed.metrics


def test_equal_seeds_give_identical_logs(tmp_path):
    train_loop(PAIRS, small_run(seed=5), tmp_path / "a")
    train_loop(PAIRS, small_run(seed=5), tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    train_loop(PAIRS, small_run(seed=6), tmp_path / "c")
    assert a != (tmp_path / "c" / "metrics.jsonl").read_bytes()
    header = json.loads(a.splitlines()[0])
    assert header["seed"] == 5 and header["config"]["train"]["seed"] == 5


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    res = train_loop(PAIRS, small_run(max_steps=1), tmp_path)
    ckpt = read_checkpoint(res.checkpoints[-1])
    with pytest.raises(CheckpointError, match="shape"):
        restore(ckpt, tiny_model(d_dec=4))
    raw = bytearray(res.checkpoints[-1].read_bytes())
    raw[8] = 99
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(bad)


def test_ablation_flags_shrink_the_model(tmp_path):
    full = train_loop(PAIRS, small_run(max_steps=1)).model
    no_dim = train_loop(PAIRS, small_run(max_steps=1, no_dim=True)).model
    assert no_dim.num_parameters() < full.num_parameters()


def test_non_finite_loss_aborts_and_dumps_batch(tmp_path):
    model = train_loop(PAIRS, small_run(max_steps=1)).model
    model.l2r.b_r.data[...] = np.nan
    with pytest.raises(NumericAbort):
        train_loop(PAIRS, small_run(max_steps=2), tmp_path, model=model)
    dump = json.loads((tmp_path / "nan_batch.json").read_text())
    assert set(dump) >= {"src", "tgt", "corpus_index"}
