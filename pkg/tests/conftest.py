import os

# single-threaded BLAS keeps timings honest and float results reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from dimnmt.config import ModelConfig
from dimnmt.model import BiDecModel
from dimnmt.text import make_batches


def tiny_config(**kw) -> ModelConfig:
    base = dict(src_vocab=12, tgt_vocab=12, d_emb=8, d_enc=8, d_dec=8, d_att=8, heads=2, init_scale=0.3)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, **kw) -> BiDecModel:
    return BiDecModel(tiny_config(**kw), seed=seed)


def tiny_batch(pairs=(([5, 6, 7], [8, 9]), ([10, 11], [5, 6, 7, 8]))):
    (batch,) = make_batches(list(pairs), 1000)
    return batch


@pytest.fixture
def batch():
    return tiny_batch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
