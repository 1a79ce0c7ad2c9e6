"""A small pre-norm encoder classifier over either attention mechanism.

Input ids get a classification slot prepended (reserved vocab id 0),
token embeddings plus fixed sinusoidal position codes, then L blocks of

    x = x + attention(layer_norm(x))
    x = x + ffn(layer_norm(x))

and a linear classifier reads the residual-stream row at the
classification slot. That row index is fixed: sorting layers permute
rows inside their sublayer only, and the residual path is what keeps a
dedicated readout position meaningful. Readout never consults a
PermutationRecord.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .attention import (
    MhaParams,
    SliceSortParams,
    SortKind,
    SortStrategy,
    init_mha_params,
    init_slice_sort_params,
    mha_forward,
    slice_sort_forward,
)
from .tensor import ShapeError, Tensor

CLS_ID = 0


class AttentionKind(Enum):
    SOFTMAX = "softmax"
    SLICE_SORT = "slicesort"


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    d_model: int
    heads: int
    head_dim: int
    vocab: int
    seq_len: int
    n_classes: int
    attention: AttentionKind = AttentionKind.SLICE_SORT
    sort_kind: SortKind = SortKind.ASCENDING
    ffn_mult: int = 2
    use_output_projection: bool = True
    use_positional: bool = True

    def __post_init__(self):
        if self.heads * self.head_dim != self.d_model:
            raise ValueError(
                f"heads * head_dim must equal d_model: "
                f"{self.heads} * {self.head_dim} != {self.d_model}"
            )
        if self.seq_len < 2:
            raise ValueError("seq_len must be at least 2 (classification slot plus one token)")
        if self.use_positional and self.d_model % 2 != 0:
            raise ValueError("sinusoidal position codes need an even d_model")
        if self.layers < 0 or self.vocab < 2 or self.n_classes < 2 or self.ffn_mult < 1:
            raise ValueError("layers >= 0, vocab >= 2, n_classes >= 2, ffn_mult >= 1 required")

    def strategy_for(self, layer: int) -> SortStrategy:
        """Sort strategy for 1-based block index ``layer``."""
        return SortStrategy(kind=self.sort_kind, layer=layer, total_layers=max(self.layers, 1))


@dataclass
class LayerParams:
    attn: MhaParams | SliceSortParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.attn.named(f"{prefix}.attn")
        for key in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
                    "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            yield f"{prefix}.{key}", getattr(self, key)


@dataclass
class EncoderParams:
    config: EncoderConfig
    embedding: Tensor
    blocks: list[LayerParams] = field(default_factory=list)
    cls_w: Tensor | None = None
    cls_b: Tensor | None = None

    def named(self) -> Iterator[tuple[str, Tensor]]:
        """All trainable tensors, in a fixed deterministic order."""
        yield "embedding", self.embedding
        for i, block in enumerate(self.blocks, start=1):
            yield from block.named(f"layer{i}")
        yield "classifier.w", self.cls_w
        yield "classifier.b", self.cls_b

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.zero_grad()


def sinusoidal_pe(seq_len: int, d_model: int) -> Tensor:
    """Fixed sin/cos position codes: channel 2i is sin(p / 10000^(2i/d)), 2i+1 the cos."""
    if d_model % 2 != 0:
        raise ShapeError(f"d_model must be even for sin/cos pairs, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    denom = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(pos / denom)
    pe[:, 1::2] = np.cos(pos / denom)
    return Tensor(pe, name="positional")


def init_encoder_params(rng: np.random.Generator, config: EncoderConfig) -> EncoderParams:
    d, mult = config.d_model, config.ffn_mult
    embedding = Tensor(rng.standard_normal((config.vocab, d)) / np.sqrt(d), name="embedding")
    blocks = []
    for i in range(1, config.layers + 1):
        if config.attention is AttentionKind.SOFTMAX:
            attn = init_mha_params(rng, d, config.heads, config.head_dim, prefix=f"layer{i}.attn")
        else:
            attn = init_slice_sort_params(
                rng, d, config.heads, config.head_dim,
                use_output_projection=config.use_output_projection,
                prefix=f"layer{i}.attn",
            )
        blocks.append(LayerParams(
            attn=attn,
            ln1_gamma=Tensor(np.ones(d), name=f"layer{i}.ln1_gamma"),
            ln1_beta=Tensor(np.zeros(d), name=f"layer{i}.ln1_beta"),
            ln2_gamma=Tensor(np.ones(d), name=f"layer{i}.ln2_gamma"),
            ln2_beta=Tensor(np.zeros(d), name=f"layer{i}.ln2_beta"),
            ffn_w1=Tensor(rng.standard_normal((d, mult * d)) * np.sqrt(2.0 / (d + mult * d)),
                          name=f"layer{i}.ffn_w1"),
            ffn_b1=Tensor(np.zeros(mult * d), name=f"layer{i}.ffn_b1"),
            ffn_w2=Tensor(rng.standard_normal((mult * d, d)) * np.sqrt(2.0 / (d + mult * d)),
                          name=f"layer{i}.ffn_w2"),
            ffn_b2=Tensor(np.zeros(d), name=f"layer{i}.ffn_b2"),
        ))
    cls_w = Tensor(rng.standard_normal((d, config.n_classes)) * np.sqrt(2.0 / (d + config.n_classes)),
                   name="classifier.w")
    cls_b = Tensor(np.zeros(config.n_classes), name="classifier.b")
    return EncoderParams(config=config, embedding=embedding, blocks=blocks,
                         cls_w=cls_w, cls_b=cls_b)


def encoder_block_forward(
    x: Tensor,
    block: LayerParams,
    config: EncoderConfig,
    layer_index: int,
    tap: list[Tensor] | None = None,
) -> Tensor:
    """One pre-norm block; ``layer_index`` is 1-based and drives the sort schedule.

    When ``tap`` is given, the attention sublayer output (before the
    residual add) is appended to it.
    """
    h1 = T.layer_norm(x, block.ln1_gamma, block.ln1_beta)
    if isinstance(block.attn, MhaParams):
        attn = mha_forward(h1, block.attn)
    else:
        attn, _ = slice_sort_forward(h1, block.attn, config.strategy_for(layer_index))
    if tap is not None:
        tap.append(attn)
    x = T.add(x, attn)
    h2 = T.layer_norm(x, block.ln2_gamma, block.ln2_beta)
    hidden = T.gelu(T.add(T.matmul(h2, block.ffn_w1), block.ffn_b1))
    ffn = T.add(T.matmul(hidden, block.ffn_w2), block.ffn_b2)
    return T.add(x, ffn)


def _logits_row(
    ids: Sequence[int] | np.ndarray,
    params: EncoderParams,
    config: EncoderConfig,
    tap: list[Tensor] | None = None,
) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64).ravel()
    if idx.size != config.seq_len - 1:
        raise ShapeError(
            f"expected {config.seq_len - 1} tokens (seq_len {config.seq_len} minus "
            f"the classification slot), got {idx.size}"
        )
    tokens = np.concatenate(([CLS_ID], idx))
    h = T.embedding_lookup(params.embedding, tokens)
    if config.use_positional:
        h = T.add(h, sinusoidal_pe(config.seq_len, config.d_model))
    for i, block in enumerate(params.blocks, start=1):
        h = encoder_block_forward(h, block, config, i, tap=tap)
    readout = T.embedding_lookup(h, np.array([0]))
    return T.add(T.matmul(readout, params.cls_w), params.cls_b)


def model_forward(
    ids: Sequence[int] | np.ndarray,
    params: EncoderParams,
    config: EncoderConfig,
    tap: list[Tensor] | None = None,
) -> Tensor:
    """Logits (length n_classes) for one sequence of seq_len - 1 token ids."""
    return T.reshape(_logits_row(ids, params, config, tap=tap), (config.n_classes,))


def model_logits_batch(
    token_matrix: np.ndarray, params: EncoderParams, config: EncoderConfig
) -> Tensor:
    """Stacked logits, one row per sequence in an integer (B, seq_len-1) matrix."""
    rows = [_logits_row(row, params, config) for row in np.asarray(token_matrix)]
    return T.concat_rows(rows)


def count_params(params: EncoderParams) -> int:
    """Total trainable scalar count."""
    return sum(t.data.size for _, t in params.named())
