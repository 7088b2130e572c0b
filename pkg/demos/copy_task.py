"""Train the bidirectional model on a toy copy task and watch it learn.

The copy task (target = source) is the smallest problem on which every
component has to work: the encoder must remember the sentence, the R2L
decoder produces a reversed draft, and the L2R decoder reads that draft
through the interaction memory while it writes the final output.

    python demos/copy_task.py [seconds]
"""

import sys
import time

from dimnmt.config import RunConfig
from dimnmt.decoding import translate
from dimnmt.evaluation import teacher_forced_accuracy, valid_bleu
from dimnmt.tasks import copy_task, symbols, to_ids
from dimnmt.text import Vocabulary, make_batches
from dimnmt.training import Adam, build_model, train_step

budget = float(sys.argv[1]) if len(sys.argv) > 1 else 120.0

# one shared vocabulary of 16 word symbols plus the specials
vocab = Vocabulary(symbols(16))
train, valid = copy_task()

run = RunConfig()
run.model.src_vocab = run.model.tgt_vocab = len(vocab)
# the default schedule is tuned for a large corpus; compress it for a toy run
run.train.lr0 = 3e-3
run.train.schedule_scale = 0.1
run.train.token_budget = 512

batches = make_batches(to_ids(train, vocab, vocab), run.train.token_budget)
model = build_model(run)
adam = Adam(dict(model.named_parameters()))
print(f"{len(train)} training pairs in {len(batches)} batches, {model.num_parameters()} parameters")

start = time.time()
step = 0
while time.time() - start < budget:
    rec = train_step(model, adam, batches[step % len(batches)], step, run.train)
    step += 1
    if step % 100 == 0:
        print(f"step {step:5d}  loss {rec['loss']:.3f}  lr {rec['lr']:.2e}")

print(f"\ntrained {step} steps in {time.time() - start:.0f}s")
print(f"teacher-forced accuracy (train): {teacher_forced_accuracy(model, batches):.4f}")
print(f"valid BLEU (beam 10):            {valid_bleu(model, valid, vocab, vocab, beam=10):.2f}")

# the R2L draft is what the L2R decoder attends to through the memory
for src, _ in valid[:3]:
    t = translate(model, " ".join(src), vocab, vocab, beam=5)
    print(f"\nsource : {' '.join(src)}\nR2L    : {' '.join(t.r2l_tokens)}\noutput : {t.text}")
