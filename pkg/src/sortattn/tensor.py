"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a C-contiguous numpy array. Every operation in this
module builds a new Tensor whose ``_record`` remembers the input tensors
and a backward rule; ``backward`` on a scalar walks those records in
reverse topological order and accumulates gradients additively.

Backward rules must return freshly allocated arrays, one per input,
never a view of saved state or of the upstream gradient and never the
same array object twice. ``_accumulate`` relies on that ownership
contract so it can bind the first contribution without copying.

All data is float64 and row-major. There is no global graph: the graph
is whatever ``Graph.from_root`` can reach from the loss tensor.
"""

from __future__ import annotations

import itertools
import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have shapes the requested operation cannot accept."""


_node_ids = itertools.count()


class AllocationTracker:
    """Tallies buffers allocated by ops while installed (see ``track_allocations``).

    ``largest_single`` is the size in bytes of the biggest single buffer
    seen, which is the quantity of interest when asking whether a code
    path ever materialises a quadratic-size intermediate.
    """

    def __init__(self) -> None:
        self.total_bytes = 0
        self.largest_single = 0
        self.count = 0

    def note(self, nbytes: int) -> None:
        self.total_bytes += nbytes
        self.count += 1
        if nbytes > self.largest_single:
            self.largest_single = nbytes


_active_tracker: ContextVar[AllocationTracker | None] = ContextVar(
    "sortattn_alloc_tracker", default=None
)


class track_allocations:
    """Context manager installing an AllocationTracker for the enclosed ops."""

    def __init__(self) -> None:
        self.tracker = AllocationTracker()
        self._token = None

    def __enter__(self) -> AllocationTracker:
        self._token = _active_tracker.set(self.tracker)
        return self.tracker

    def __exit__(self, *exc) -> None:
        _active_tracker.reset(self._token)


def _note_alloc(nbytes: int) -> None:
    tracker = _active_tracker.get()
    if tracker is not None:
        tracker.note(nbytes)


@dataclass
class OpRecord:
    """One executed operation: inputs, output node id, and a backward rule.

    The backward rule maps the output gradient to one gradient array per
    input (saved forward state lives in its closure). The record holds
    the output's id rather than the output tensor so records never form
    reference cycles.
    """

    op: str
    inputs: tuple["Tensor", ...]
    output_id: int
    backward_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]]


class Tensor:
    """A float64 array plus an optional gradient and graph record."""

    __slots__ = ("data", "grad", "name", "_record", "_node_id")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self._record: OpRecord | None = None
        self._node_id: int = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def node_id(self) -> int:
        return self._node_id

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        op = f" op={self._record.op!r}" if self._record else ""
        return f"Tensor(shape={self.data.shape}{tag}{op})"


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(out_data)
    out._record = OpRecord(op=op, inputs=inputs, output_id=out._node_id, backward_fn=backward_fn)
    _note_alloc(out.data.nbytes)
    return out


@dataclass
class Graph:
    """Operations reachable from a root, in topological (execution) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        # Iterative DFS; recursion depth would otherwise track graph depth.
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node._node_id in seen:
                continue
            seen.add(node._node_id)
            stack.append((node, True))
            if node._record is not None:
                for parent in node._record.inputs:
                    if parent._node_id not in seen:
                        stack.append((parent, False))
        return cls(nodes=order)

    def records(self) -> list[OpRecord]:
        return [n._record for n in self.nodes if n._record is not None]


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if grad.shape != tensor.data.shape:
        raise ShapeError(
            f"gradient shape {grad.shape} does not match tensor shape {tensor.data.shape}"
        )
    if tensor.grad is None:
        tensor.grad = grad
        _note_alloc(grad.nbytes)
    else:
        tensor.grad += grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar ``loss``.

    Gradients accumulate additively; callers reset them between passes
    with ``zero_grad``. Raises ShapeError when ``loss`` is not a scalar.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar, got shape {loss.data.shape}")
    graph = Graph.from_root(loss)
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        record = node._record
        if record is None or node.grad is None:
            continue
        grads = record.backward_fn(node.grad)
        if len(grads) != len(record.inputs):
            raise ShapeError(
                f"{record.op}: backward returned {len(grads)} gradients "
                f"for {len(record.inputs)} inputs"
            )
        for parent, g in zip(record.inputs, grads):
            _accumulate(parent, g)


# ---------------------------------------------------------------------------
# operations


def _as2d(t: Tensor, op: str) -> np.ndarray:
    if t.data.ndim != 2:
        raise ShapeError(f"{op} expects a 2-d tensor, got shape {t.data.shape}")
    return t.data


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    ad, bd = _as2d(a, "matmul"), _as2d(b, "matmul")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {ad.shape} by {bd.shape}")
    out = ad @ bd

    def bwd(g: np.ndarray):
        return g @ bd.T, ad.T @ g

    return _make(out, (a, b), bwd, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-d bias added to every row of 2-d ``a``."""
    if a.data.shape == b.data.shape:
        out = a.data + b.data

        def bwd(g: np.ndarray):
            return g.copy(), g.copy()

        return _make(out, (a, b), bwd, "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        out = a.data + b.data

        def bwd_bias(g: np.ndarray):
            return g.copy(), g.sum(axis=0)

        return _make(out, (a, b), bwd_bias, "add")
    raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    out = a.data * b.data

    def bwd(g: np.ndarray):
        return g * b.data, g * a.data

    return _make(out, (a, b), bwd, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = a.data * c

    def bwd(g: np.ndarray):
        return (g * c,)

    return _make(out, (a,), bwd, "scale")


def transpose(a: Tensor) -> Tensor:
    ad = _as2d(a, "transpose")
    out = np.ascontiguousarray(ad.T)

    def bwd(g: np.ndarray):
        return (np.ascontiguousarray(g.T),)

    return _make(out, (a,), bwd, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    out = a.data.reshape(shape).copy()

    def bwd(g: np.ndarray):
        return (g.reshape(a.data.shape).copy(),)

    return _make(out, (a,), bwd, "reshape")


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = np.asarray(a.data.sum())

    def bwd(g: np.ndarray):
        return (np.full(a.data.shape, float(g)),)

    return _make(out, (a,), bwd, "sum_all")


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor.

    The row maximum is subtracted before exponentiation, so any finite
    input is safe; non-finite inputs raise FloatingPointError.
    """
    xd = _as2d(x, "softmax_rows")
    if not np.isfinite(xd).all():
        raise FloatingPointError("softmax_rows: input contains non-finite values")
    shifted = xd - xd.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    p = shifted

    def bwd(g: np.ndarray):
        # d_x = p * (g - sum_j g_j p_j), row-wise.
        dot = np.einsum("ij,ij->i", g, p)
        dx = g - dot[:, None]
        dx *= p
        return (dx,)

    return _make(p, (x,), bwd, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalisation to zero mean and unit variance, then affine.

    Uses the population variance (1/m) and adds ``eps`` inside the
    square root, so constant rows normalise to zeros rather than NaN.
    """
    xd = _as2d(x, "layer_norm")
    m = xd.shape[1]
    if gamma.data.shape != (m,) or beta.data.shape != (m,):
        raise ShapeError(
            f"layer_norm: gamma/beta must have shape ({m},), "
            f"got {gamma.data.shape} and {beta.data.shape}"
        )
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g: np.ndarray):
        dgamma = np.einsum("ij,ij->j", g, xhat)
        dbeta = g.sum(axis=0)
        gx = g * gamma.data
        dx = gx - gx.mean(axis=1, keepdims=True)
        dx -= xhat * np.einsum("ij,ij->i", gx, xhat)[:, None] / m
        dx *= inv
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bwd, "layer_norm")


# tanh-form gelu constants: sqrt(2/pi) and the cubic coefficient from the
# usual polynomial fit. The exact-erf form is not used anywhere.
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    inner = _GELU_K * (xd + _GELU_C * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bwd(g: np.ndarray):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * xd**2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * dinner
        dx *= g
        return (dx,)

    return _make(out, (x,), bwd, "gelu")


def _check_perm(perm: np.ndarray, n: int, op: str) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer):
        raise ValueError(f"{op}: permutation must be {n} integers, got shape {perm.shape}")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"{op}: index list is not a bijection on 0..{n - 1}")
    return perm.astype(np.int64)


def permute_rows(x: Tensor, perm) -> Tensor:
    """Reorder rows: output row r is input row perm[r].

    ``perm`` must be a bijection on the row indices; the backward pass
    scatters gradients through the inverse permutation.
    """
    xd = _as2d(x, "permute_rows")
    perm = _check_perm(perm, xd.shape[0], "permute_rows")
    out = xd[perm]
    inv = np.argsort(perm)

    def bwd(g: np.ndarray):
        return (np.ascontiguousarray(g[inv]),)

    return _make(out, (x,), bwd, "permute_rows")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer id; repeated ids sum their gradients."""
    td = _as2d(table, "embedding_lookup")
    idx = np.asarray(ids)
    if idx.ndim != 1 or (idx.size and not np.issubdtype(idx.dtype, np.integer)):
        raise IndexError(f"embedding_lookup: ids must be a 1-d integer array, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= td.shape[0]):
        raise IndexError(
            f"embedding_lookup: id out of range for table with {td.shape[0]} rows"
        )
    idx = idx.astype(np.int64)
    out = td[idx]

    def bwd(g: np.ndarray):
        dt = np.zeros_like(td)
        np.add.at(dt, idx, g)
        return (dt,)

    return _make(out, (table,), bwd, "embedding_lookup")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row-wise softmax.

    Computed in log space (shifted log-sum-exp), so large logits do not
    overflow. Returns a scalar tensor.
    """
    ld = _as2d(logits, "cross_entropy")
    if ld.shape[0] < 1:
        raise ShapeError("cross_entropy: batch must contain at least one row")
    tgt = np.asarray(targets)
    if tgt.ndim != 1 or tgt.shape[0] != ld.shape[0]:
        raise ShapeError(
            f"cross_entropy: need one target per row, got {tgt.shape} for {ld.shape}"
        )
    if not np.issubdtype(tgt.dtype, np.integer):
        raise IndexError("cross_entropy: targets must be integers")
    if tgt.min() < 0 or tgt.max() >= ld.shape[1]:
        raise IndexError(f"cross_entropy: target out of range for {ld.shape[1]} classes")
    if not np.isfinite(ld).all():
        raise FloatingPointError("cross_entropy: logits contain non-finite values")
    n = ld.shape[0]
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    out = np.asarray(-logp[rows, tgt].mean())

    def bwd(g: np.ndarray):
        dx = np.exp(logp)
        dx[rows, tgt] -= 1.0
        dx *= float(g) / n
        return (dx,)

    return _make(out, (logits,), bwd, "cross_entropy")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors left to right (equal row counts)."""
    return _concat(parts, axis=1, op="concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors top to bottom (equal column counts)."""
    return _concat(parts, axis=0, op="concat_rows")


def _concat(parts: Sequence[Tensor], axis: int, op: str) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError(f"{op}: nothing to concatenate")
    datas = [_as2d(p, op) for p in parts]
    other = 1 - axis
    if len({d.shape[other] for d in datas}) != 1:
        raise ShapeError(f"{op}: mismatched shapes {[d.shape for d in datas]}")
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: np.ndarray):
        pieces = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            sl = g[:, lo:hi] if axis == 1 else g[lo:hi, :]
            pieces.append(np.ascontiguousarray(sl))
        return tuple(pieces)

    return _make(out, parts, bwd, op)
