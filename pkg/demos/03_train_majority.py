"""Training parity on an order-insensitive task.

The multiset-majority task labels each sequence by its most frequent
token id (mod n_classes), so nothing about the answer depends on token
order. Both attention mechanisms learn it; the sorting model does so
without any query/key parameters. Positional encodings are switched off
since order carries no information here.

Run: python3 demos/03_train_majority.py   (about a minute)
(the CLI equivalent is `sortattn train --use_positional=false ...`)
"""

import time

from sortattn.data import Rng, gen_multiset_majority
from sortattn.encoder import (
    AttentionKind,
    EncoderConfig,
    count_params,
    init_encoder_params,
)
from sortattn.training import TrainSettings, train_loop

data = gen_multiset_majority(0, 400, 31, 8, 4)
train, test = data[:300], data[300:]
print(f"task: {len(train)} train / {len(test)} test, 31 tokens, vocab 8, 4 classes")

for kind in (AttentionKind.SLICE_SORT, AttentionKind.SOFTMAX):
    config = EncoderConfig(
        layers=2, d_model=32, heads=4, head_dim=8, vocab=8, seq_len=32,
        n_classes=4, attention=kind, use_positional=False,
    )
    params = init_encoder_params(Rng(0).split(1).generator, config)
    print(f"\n{kind.value}: {count_params(params)} parameters")
    started = time.perf_counter()
    log = train_loop(TrainSettings(batch_size=32, seed=0), params, train,
                     epochs=10, eval_dataset=test)
    for entry in log:
        if entry.epoch % 2 == 0 or entry.epoch == 1:
            print(f"  epoch {entry.epoch:>2}: loss {entry.loss:.4f} "
                  f"train {entry.train_acc:.3f} test {entry.test_acc:.3f}")
    best = max(e.test_acc for e in log)
    print(f"  best test accuracy {best:.3f} in {time.perf_counter() - started:.0f}s")
