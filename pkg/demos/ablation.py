"""Compare the full model with its ablations on a noisy reverse task.

Each variant is trained with the same seeds and step budget, then scored
with beam search on clean validation pairs.  The table reports the median
BLEU over seeds and the change relative to the full model.

    python demos/ablation.py [steps] [seeds]
"""

import sys

from dimnmt.config import RunConfig
from dimnmt.evaluation import ablation_suite
from dimnmt.tasks import noisy_reverse_task, symbols
from dimnmt.text import Vocabulary

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
seeds = [int(s) for s in (sys.argv[2] if len(sys.argv) > 2 else "1,2,3").split(",")]

vocab = Vocabulary(symbols(12))
train, valid = noisy_reverse_task()

run = RunConfig()
run.model.src_vocab = run.model.tgt_vocab = len(vocab)
run.train.lr0 = 3e-3
run.train.schedule_scale = 0.1
run.train.token_budget = 256
run.train.max_steps = steps

table = ablation_suite(train, valid, vocab, vocab, run, seeds=seeds, beam=5)
print(table.text())
