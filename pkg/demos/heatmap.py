"""Export memory-attention heatmaps for a few translations.

While the L2R decoder writes output token j it addresses the memory rows
built from the R2L draft.  On a reversal task a well-trained model should
put its weight on the anti-diagonal of that matrix, because the draft is
already in source order.  Each heatmap is written as a PGM image plus a TSV
matrix with row and column labels.

    python demos/heatmap.py [out_dir] [steps]
"""

import sys
from pathlib import Path

from dimnmt.config import RunConfig
from dimnmt.decoding import translate
from dimnmt.evaluation import export_heatmap
from dimnmt.tasks import noisy_reverse_task, symbols, to_ids
from dimnmt.text import Vocabulary
from dimnmt.training import train_loop

out = Path(sys.argv[1] if len(sys.argv) > 1 else "heatmaps")
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 400

vocab = Vocabulary(symbols(12))
train, valid = noisy_reverse_task()

run = RunConfig()
run.model.src_vocab = run.model.tgt_vocab = len(vocab)
run.train.lr0 = 3e-3
run.train.schedule_scale = 0.1
run.train.token_budget = 256
run.train.max_steps = steps
model = train_loop(to_ids(train, vocab, vocab), run).model

out.mkdir(parents=True, exist_ok=True)
for i, (src, ref) in enumerate(valid[:3]):
    t = translate(model, " ".join(src), vocab, vocab, beam=5, with_attention=True)
    print(f"source {' '.join(src)}\nref    {' '.join(ref)}\noutput {t.text}\n")
    if t.tgt_attention is not None and len(t.tokens):
        img, tsv = export_heatmap(t.tgt_attention, t.tokens, t.r2l_tokens + ["</s>"], out / f"memory_{i}")
        print(f"  wrote {img} and {tsv}")
    img, _ = export_heatmap(t.src_attention, t.tokens, src + ["</s>"], out / f"source_{i}")
    print(f"  wrote {img}")
