"""Adam training and evaluation for the encoder classifier.

Runs are deterministic given (seed, settings): the per-epoch shuffle
seeds are drawn from one explicit stream and everything downstream is
pure. Wall times in the log are the only nondeterministic fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledSequence, Rng, batch_iterator
from .encoder import EncoderParams, model_logits_batch
from .tensor import Tensor, backward, cross_entropy


@dataclass
class AdamState:
    """First/second moment accumulators aligned with a fixed parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    Raises FloatingPointError naming the offending parameter if any
    gradient contains NaN or infinity.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"mismatched lengths: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment slots"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {p.name or f'param {i}'}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0  # 0 disables clipping
    batch_size: int = 32
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    seconds: float


def train_loop(
    settings: TrainSettings,
    params: EncoderParams,
    dataset: list[LabeledSequence],
    epochs: int,
    eval_dataset: list[LabeledSequence] | None = None,
) -> list[EpochLog]:
    """Minimise cross-entropy over shuffled batches; one log row per epoch.

    ``test_acc`` is NaN when no eval set is given. Zero epochs returns an
    empty log and leaves the parameters untouched.
    """
    tensors = params.tensors()
    state = init_adam(tensors, lr=settings.lr, beta1=settings.beta1,
                      beta2=settings.beta2, eps=settings.eps)
    seed_stream = Rng(settings.seed).generator
    log: list[EpochLog] = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        epoch_seed = int(seed_stream.integers(2**63))
        loss_sum = 0.0
        hits = 0
        for tokens, labels in batch_iterator(dataset, settings.batch_size, epoch_seed):
            params.zero_grads()
            logits = model_logits_batch(tokens, params, params.config)
            loss = cross_entropy(logits, labels)
            backward(loss)
            loss_sum += float(loss.data) * len(labels)
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in tensors]
            clip_global_norm(grads, settings.clip_norm)
            adam_step(tensors, grads, state)
        test_acc = evaluate(params, eval_dataset) if eval_dataset else float("nan")
        log.append(EpochLog(
            epoch=epoch,
            loss=loss_sum / len(dataset),
            train_acc=hits / len(dataset),
            test_acc=test_acc,
            seconds=time.perf_counter() - started,
        ))
    return log


def evaluate(params: EncoderParams, dataset: list[LabeledSequence]) -> float:
    """Argmax accuracy (ties resolve to the lowest class index); mutates nothing."""
    if not dataset:
        return float("nan")
    hits = 0
    for start in range(0, len(dataset), 64):
        chunk = dataset[start:start + 64]
        tokens = np.stack([s.tokens for s in chunk])
        labels = np.array([s.label for s in chunk])
        logits = model_logits_batch(tokens, params, params.config)
        hits += int((logits.data.argmax(axis=1) == labels).sum())
    return hits / len(dataset)
