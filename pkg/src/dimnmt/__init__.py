"""Asynchronous bidirectional NMT with a dynamic interaction memory, on a numpy autodiff core."""

from .config import DecodeConfig, ModelConfig, RunConfig, TrainConfig
from .decoding import beam_l2r, greedy_r2l, translate
from .evaluation import bleu
from .model import BiDecModel
from .training import train_loop

__all__ = [
    "BiDecModel", "DecodeConfig", "ModelConfig", "RunConfig", "TrainConfig",
    "beam_l2r", "bleu", "greedy_r2l", "train_loop", "translate",
]
__version__ = "0.1.0"
