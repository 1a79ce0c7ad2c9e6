"""Two attention mechanisms over a shared value projection.

``mha_forward`` is standard multi-head softmax attention: per head,
P = softmax(Q K^T / sqrt(D)) applied to V, heads concatenated column-wise
and mixed by an output projection. The N x N map P is data-dependent,
dense, and row-stochastic only.

``slice_sort_forward`` replaces the whole Q/K machinery with a sort:
project the input to N x (M*D) values, then sort each column
independently. Sorting column i is applying a permutation matrix P_i,
so the implicit attention map is sparse (N nonzeros), doubly
stochastic, and full rank, and it is never materialised here; only the
integer index lists are kept. ``extract_permutation_matrix`` builds the
dense P_i on demand for analysis, nothing in the forward or backward
path does.

Sort directions come from a ``SortStrategy``: plain ascending, a
max-exchange transposition (swap the column maximum to the front), or a
layer-interleaved schedule that flips direction per channel block so
that consecutive layers do not undo each other's ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import Tensor, _make, _note_alloc, concat_cols, matmul, scale, softmax_rows, transpose


class SortKind(Enum):
    ASCENDING = "ascending"
    INTERLEAVE = "interleave"
    MAX_EXCHANGE = "maxexchange"


@dataclass(frozen=True)
class SortStrategy:
    """Which per-channel ordering a sorting layer uses.

    ``layer`` and ``total_layers`` are 1-based and only consulted by the
    interleave schedule; the last layer of that schedule sorts every
    channel ascending so the network's final ordering is coherent.
    """

    kind: SortKind = SortKind.ASCENDING
    layer: int = 1
    total_layers: int = 1

    def __post_init__(self):
        if self.total_layers < 1 or not (1 <= self.layer <= self.total_layers):
            raise ValueError(
                f"invalid layer index {self.layer} of {self.total_layers}"
            )

    @classmethod
    def ascending(cls) -> "SortStrategy":
        return cls(SortKind.ASCENDING)

    @classmethod
    def max_exchange(cls) -> "SortStrategy":
        return cls(SortKind.MAX_EXCHANGE)

    @classmethod
    def interleave(cls, layer: int, total_layers: int) -> "SortStrategy":
        return cls(SortKind.INTERLEAVE, layer=layer, total_layers=total_layers)


def sort_direction(channel: int, layer: int, total_layers: int, channels: int) -> bool:
    """True when ``channel`` sorts ascending under the interleaved schedule.

    The rule is the sign of sin(2^(total_layers - layer) * pi * channel /
    channels) with 1-based ``channel`` and ``layer``; zero counts as
    ascending. When the sine argument is an exact multiple of pi the
    float sine is a tiny signed residue rather than zero, so that case
    is decided exactly in integers first.
    """
    if not 1 <= layer <= total_layers:
        raise ValueError(f"layer must be in 1..{total_layers}, got {layer}")
    if not 1 <= channel <= channels:
        raise ValueError(f"channel must be in 1..{channels}, got {channel}")
    k = (1 << (total_layers - layer)) * channel
    if k % channels == 0:
        return True
    return math.sin(math.pi * k / channels) >= 0.0


def max_exchange(column: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swap the column maximum (lowest index on ties) with element 0.

    Returns ``(exchanged, perm)`` where ``exchanged = column[perm]``.
    The permutation is a single transposition, or the identity when the
    maximum already sits at the front.
    """
    col = np.asarray(column, dtype=np.float64)
    if col.ndim != 1 or col.size == 0:
        raise ValueError(f"max_exchange expects a nonempty 1-d column, got shape {col.shape}")
    j = int(np.argmax(col))
    perm = np.arange(col.size, dtype=np.int64)
    if j != 0:
        perm[0], perm[j] = j, 0
    return col[perm], perm


@dataclass(frozen=True)
class PermutationRecord:
    """Per-channel row permutations captured by a sorting layer.

    ``perms[c]`` maps output position r to input position perms[c][r],
    i.e. sorted[r, c] = values[perms[c][r], c]. Each row must be a
    bijection, checked at construction.
    """

    perms: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perms)
        if p.ndim != 2 or not np.issubdtype(p.dtype, np.integer):
            raise ValueError(f"perms must be a 2-d integer array, got {p.dtype} {p.shape}")
        n = p.shape[1]
        if not np.array_equal(np.sort(p, axis=1), np.tile(np.arange(n), (p.shape[0], 1))):
            raise ValueError("each permutation row must be a bijection on 0..N-1")
        object.__setattr__(self, "perms", np.ascontiguousarray(p, dtype=np.int64))

    @property
    def channels(self) -> int:
        return self.perms.shape[0]

    @property
    def seq_len(self) -> int:
        return self.perms.shape[1]


@dataclass
class MhaParams:
    """Per-head query/key/value projections plus the output mix.

    ``w_q[m]``, ``w_k[m]``, ``w_v[m]`` are d_model x head_dim; ``w_o``
    is (heads * head_dim) square.
    """

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def head_dim(self) -> int:
        return self.w_q[0].shape[1]

    def named(self, prefix: str = "mha"):
        for m in range(self.heads):
            yield f"{prefix}.w_q[{m}]", self.w_q[m]
            yield f"{prefix}.w_k[{m}]", self.w_k[m]
            yield f"{prefix}.w_v[{m}]", self.w_v[m]
        yield f"{prefix}.w_o", self.w_o


@dataclass
class SliceSortParams:
    """Value projection (d_model x M*D) and optional post-sort mix."""

    w_v: Tensor
    w_o: Tensor | None = None

    def named(self, prefix: str = "slicesort"):
        yield f"{prefix}.w_v", self.w_v
        if self.w_o is not None:
            yield f"{prefix}.w_o", self.w_o


def _xavier(rng, fan_in: int, fan_out: int, name: str) -> Tensor:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.standard_normal((fan_in, fan_out)) * std, name=name)


def init_mha_params(rng, d_model: int, heads: int, head_dim: int, prefix: str = "mha") -> MhaParams:
    wq = [_xavier(rng, d_model, head_dim, f"{prefix}.w_q[{m}]") for m in range(heads)]
    wk = [_xavier(rng, d_model, head_dim, f"{prefix}.w_k[{m}]") for m in range(heads)]
    wv = [_xavier(rng, d_model, head_dim, f"{prefix}.w_v[{m}]") for m in range(heads)]
    wo = _xavier(rng, heads * head_dim, heads * head_dim, f"{prefix}.w_o")
    return MhaParams(w_q=wq, w_k=wk, w_v=wv, w_o=wo)


def init_slice_sort_params(
    rng, d_model: int, heads: int, head_dim: int,
    use_output_projection: bool = True, prefix: str = "slicesort",
) -> SliceSortParams:
    width = heads * head_dim
    wv = _xavier(rng, d_model, width, f"{prefix}.w_v")
    wo = _xavier(rng, width, width, f"{prefix}.w_o") if use_output_projection else None
    return SliceSortParams(w_v=wv, w_o=wo)


def mha_forward(x: Tensor, params: MhaParams) -> Tensor:
    """Softmax attention, all heads, output projection applied.

    The 1/sqrt(D) temperature is folded into Q before the N x N score
    matrix is formed.
    """
    inv_temp = 1.0 / math.sqrt(params.head_dim)
    heads = []
    for m in range(params.heads):
        q = scale(matmul(x, params.w_q[m]), inv_temp)
        k = matmul(x, params.w_k[m])
        v = matmul(x, params.w_v[m])
        p = softmax_rows(matmul(q, transpose(k)))
        heads.append(matmul(p, v))
    return matmul(concat_cols(heads), params.w_o)


def _strategy_perms(values: np.ndarray, strategy: SortStrategy) -> np.ndarray:
    """Index lists realising the strategy on each column of ``values`` (N x C)."""
    n, channels = values.shape
    if strategy.kind == SortKind.MAX_EXCHANGE:
        perms = np.tile(np.arange(n, dtype=np.int64), (channels, 1))
        tops = np.argmax(values, axis=0)
        rows = np.arange(channels)
        perms[rows, 0] = tops
        perms[rows, tops] = 0
        return perms
    if strategy.kind == SortKind.ASCENDING:
        keyed = values
    else:
        signs = np.array(
            [
                1.0 if sort_direction(c + 1, strategy.layer, strategy.total_layers, channels) else -1.0
                for c in range(channels)
            ]
        )
        # Descending sort of a column is the stable ascending sort of its
        # negation, so ties keep their original relative order either way.
        keyed = values * signs
    return np.ascontiguousarray(np.argsort(keyed, axis=0, kind="stable").T)


def slice_sort_forward(
    x: Tensor, params: SliceSortParams, strategy: SortStrategy
) -> tuple[Tensor, PermutationRecord]:
    """Project to values and sort each column per the strategy.

    Returns the layer output and the permutations actually applied. The
    sort itself is a row gather; its backward pass scatters gradients
    through the inverse index lists, so nothing quadratic in N is ever
    allocated.
    """
    v = matmul(x, params.w_v)
    perms = _strategy_perms(v.data, strategy)
    record = PermutationRecord(perms=perms)
    gather = np.ascontiguousarray(record.perms.T)
    inverse = np.ascontiguousarray(np.argsort(record.perms, axis=1).T)
    _note_alloc(gather.nbytes)
    _note_alloc(inverse.nbytes)
    sorted_data = np.take_along_axis(v.data, gather, axis=0)

    def bwd(g: np.ndarray):
        return (np.take_along_axis(g, inverse, axis=0),)

    out = _make(sorted_data, (v,), bwd, "slice_sort")
    if params.w_o is not None:
        out = matmul(out, params.w_o)
    return out, record


def slice_sort_backward(upstream: np.ndarray, record: PermutationRecord) -> np.ndarray:
    """Gradient of the sort alone: route row r of channel c back to perms[c][r].

    ``upstream`` is the gradient at the sorted output, shape
    (seq_len, channels); the result has the same shape.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (record.seq_len, record.channels):
        raise ValueError(
            f"upstream shape {g.shape} does not match record "
            f"({record.seq_len}, {record.channels})"
        )
    inverse = np.ascontiguousarray(np.argsort(record.perms, axis=1).T)
    return np.take_along_axis(g, inverse, axis=0)


def extract_permutation_matrix(record: PermutationRecord, channel: int) -> np.ndarray:
    """Dense N x N permutation matrix for one channel; analysis only.

    Row r has its single 1 at column perms[channel][r], so
    P @ values[:, channel] equals the sorted column.
    """
    if not 0 <= channel < record.channels:
        raise IndexError(f"channel {channel} out of range for {record.channels} channels")
    n = record.seq_len
    dense = np.zeros((n, n))
    dense[np.arange(n), record.perms[channel]] = 1.0
    return dense
