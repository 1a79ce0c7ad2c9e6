"""Singular spectra of the attention-sublayer outputs after training.

A mechanism that averages rows together pushes its output toward low
rank: the singular values after the first one collapse. Sorting only
permutes rows, so its output keeps more of the spectrum. We train two
small matched models and compare the normalized spectra per layer. The
singular values come from the package's own one-sided Jacobi routine.

Run: python3 demos/05_spectra.py   (about 20 seconds)
(the CLI equivalent is `sortattn spectrum`)
"""

import numpy as np

from sortattn.analysis import spectrum_area, spectrum_experiment
from sortattn.data import Rng, gen_multiset_majority
from sortattn.encoder import AttentionKind, EncoderConfig, init_encoder_params
from sortattn.training import TrainSettings, train_loop

data = gen_multiset_majority(5, 260, 15, 8, 4)
models = []
for kind in (AttentionKind.SLICE_SORT, AttentionKind.SOFTMAX):
    config = EncoderConfig(
        layers=2, d_model=16, heads=2, head_dim=8, vocab=8, seq_len=16,
        n_classes=4, attention=kind, use_positional=False,
    )
    params = init_encoder_params(Rng(0).split(1).generator, config)
    log = train_loop(TrainSettings(batch_size=32, seed=0), params, data[:256],
                     epochs=8)
    print(f"trained {kind.value}: final loss {log[-1].loss:.4f}")
    models.append((kind.value, params))

probe = np.stack([s.tokens for s in data[256:]])
reports = spectrum_experiment(models, probe)

print("\nnormalized singular values (sigma / sigma_max), averaged over the probe:")
for report in reports:
    head = "  ".join(f"{v:.3f}" for v in report.sigma[:8])
    print(f"  {report.mechanism:>9} layer {report.layer}: {head} ...")

print("\narea under the normalized spectrum (higher = slower decay):")
for report in reports:
    print(f"  {report.mechanism:>9} layer {report.layer}: {spectrum_area(report):.3f}")
