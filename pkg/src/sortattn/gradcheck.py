"""Central finite-difference verification of every backward rule.

Each op is wrapped in a scalar loss sum(op(...) * R) with a fixed random
R so the check does not sit in a degenerate direction (plain sums of
softmax rows, for instance, are constant). Analytic gradients from
``backward`` are compared coordinate-wise against central differences
with a guarded relative error |a - n| / max(1, |n|).

Sorting layers are piecewise linear: a finite-difference probe that
crosses a sort boundary measures the kink, not the derivative. Checks
that involve a sort therefore redraw their inputs until every sorted
column has adjacent gaps above 1e-3, comfortably beyond the 1e-5 step.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .attention import MhaParams, SliceSortParams, SortStrategy, slice_sort_forward, mha_forward
from .data import Rng
from .encoder import (
    AttentionKind,
    EncoderConfig,
    LayerParams,
    encoder_block_forward,
    init_encoder_params,
    model_logits_batch,
)
from .tensor import Graph, Tensor, backward

STEP = 1e-5
OP_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
_MIN_SORT_GAP = 1e-3


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                     step: float = STEP) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray | None, numeric: np.ndarray) -> float:
    if analytic is None:
        analytic = np.zeros_like(numeric)
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0


def check_gradients(build: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    step: float = STEP) -> float:
    """Max relative error between backward and finite differences.

    ``build`` maps leaf tensors (one per entry of ``arrays``) to a
    scalar loss; it is re-invoked on perturbed copies for every
    coordinate, so it must be deterministic.
    """
    leaves = [Tensor(np.array(a)) for a in arrays]
    loss = build(*leaves)
    backward(loss)
    worst = 0.0
    for i in range(len(arrays)):
        def f(x: np.ndarray, i: int = i) -> float:
            trial = [Tensor(np.array(a)) for a in arrays]
            trial[i] = Tensor(np.array(x))
            return float(build(*trial).data)

        numeric = numeric_gradient(f, np.array(arrays[i]), step)
        worst = max(worst, max_relative_error(leaves[i].grad, numeric))
    return worst


def _min_sort_gap(loss: Tensor) -> float:
    """Smallest adjacent gap over all sorted columns reachable from ``loss``."""
    gaps = []
    for rec in Graph.from_root(loss).records():
        if rec.op == "slice_sort":
            v = rec.inputs[0].data
            d = np.diff(np.sort(v, axis=0), axis=0)
            if d.size:
                gaps.append(float(d.min()))
    return min(gaps, default=np.inf)


def _loss_through(out: Tensor, r: np.ndarray) -> Tensor:
    return T.sum_all(T.mul(out, Tensor(r)))


# --- op specs: seed generator -> (leaf arrays, loss builder) ---------------


def _spec_matmul(g):
    r = g.standard_normal((4, 5))
    return [g.standard_normal((4, 3)), g.standard_normal((3, 5))], (
        lambda a, b: _loss_through(T.matmul(a, b), r))


def _spec_add(g):
    r = g.standard_normal((4, 3))
    return [g.standard_normal((4, 3)), g.standard_normal((4, 3))], (
        lambda a, b: _loss_through(T.add(a, b), r))


def _spec_add_bias(g):
    r = g.standard_normal((4, 3))
    return [g.standard_normal((4, 3)), g.standard_normal(3)], (
        lambda a, b: _loss_through(T.add(a, b), r))


def _spec_add_self(g):
    # the same tensor on both sides exercises repeated-input accumulation
    r = g.standard_normal((3, 3))
    return [g.standard_normal((3, 3))], (lambda a: _loss_through(T.add(a, a), r))


def _spec_mul(g):
    r = g.standard_normal((4, 3))
    return [g.standard_normal((4, 3)), g.standard_normal((4, 3))], (
        lambda a, b: _loss_through(T.mul(a, b), r))


def _spec_scale(g):
    r = g.standard_normal((3, 4))
    return [g.standard_normal((3, 4))], (lambda a: _loss_through(T.scale(a, -1.7), r))


def _spec_transpose(g):
    r = g.standard_normal((4, 3))
    return [g.standard_normal((3, 4))], (lambda a: _loss_through(T.transpose(a), r))


def _spec_reshape(g):
    r = g.standard_normal((2, 6))
    return [g.standard_normal((3, 4))], (lambda a: _loss_through(T.reshape(a, (2, 6)), r))


def _spec_sum_all(g):
    return [g.standard_normal((3, 5))], (lambda a: T.sum_all(a))


def _spec_softmax_rows(g):
    r = g.standard_normal((5, 4))
    return [3.0 * g.standard_normal((5, 4))], (
        lambda a: _loss_through(T.softmax_rows(a), r))


def _spec_layer_norm(g):
    r = g.standard_normal((4, 6))
    arrays = [g.standard_normal((4, 6)), 1.0 + 0.3 * g.standard_normal(6),
              0.3 * g.standard_normal(6)]
    return arrays, (lambda x, gm, bt: _loss_through(T.layer_norm(x, gm, bt), r))


def _spec_gelu(g):
    r = g.standard_normal((4, 5))
    return [2.0 * g.standard_normal((4, 5))], (lambda a: _loss_through(T.gelu(a), r))


def _spec_permute_rows(g):
    r = g.standard_normal((6, 3))
    perm = g.permutation(6)
    return [g.standard_normal((6, 3))], (
        lambda a: _loss_through(T.permute_rows(a, perm), r))


def _spec_embedding_lookup(g):
    ids = np.array([0, 2, 2, 4, 1, 2])  # repeats must sum their gradients
    r = g.standard_normal((6, 4))
    return [g.standard_normal((5, 4))], (
        lambda t: _loss_through(T.embedding_lookup(t, ids), r))


def _spec_cross_entropy(g):
    targets = g.integers(3, size=4)
    return [2.0 * g.standard_normal((4, 3))], (lambda a: T.cross_entropy(a, targets))


def _spec_concat_cols(g):
    r = g.standard_normal((4, 5))
    return [g.standard_normal((4, 2)), g.standard_normal((4, 3))], (
        lambda a, b: _loss_through(T.concat_cols([a, b]), r))


def _spec_concat_rows(g):
    r = g.standard_normal((5, 3))
    return [g.standard_normal((2, 3)), g.standard_normal((3, 3))], (
        lambda a, b: _loss_through(T.concat_rows([a, b]), r))


def _slice_spec(strategy: SortStrategy, project: bool):
    def spec(g):
        r = g.standard_normal((5, 6))
        arrays = [g.standard_normal((5, 4)), g.standard_normal((4, 6))]
        if project:
            arrays.append(g.standard_normal((6, 6)))

        def build(x, wv, wo=None):
            params = SliceSortParams(w_v=wv, w_o=wo)
            out, _ = slice_sort_forward(x, params, strategy)
            return _loss_through(out, r)

        return arrays, build

    return spec


def _spec_mha(g):
    r = g.standard_normal((5, 6))
    arrays = [g.standard_normal((5, 6))]
    for _ in range(2):  # two heads of width 3
        arrays += [g.standard_normal((6, 3)) for _ in range(3)]
    arrays.append(g.standard_normal((6, 6)))

    def build(x, q0, k0, v0, q1, k1, v1, wo):
        params = MhaParams(w_q=[q0, q1], w_k=[k0, k1], w_v=[v0, v1], w_o=wo)
        return _loss_through(mha_forward(x, params), r)

    return arrays, build


OP_SPECS: dict[str, Callable] = {
    "matmul": _spec_matmul,
    "add": _spec_add,
    "add_bias": _spec_add_bias,
    "add_self": _spec_add_self,
    "mul": _spec_mul,
    "scale": _spec_scale,
    "transpose": _spec_transpose,
    "reshape": _spec_reshape,
    "sum_all": _spec_sum_all,
    "softmax_rows": _spec_softmax_rows,
    "layer_norm": _spec_layer_norm,
    "gelu": _spec_gelu,
    "permute_rows": _spec_permute_rows,
    "embedding_lookup": _spec_embedding_lookup,
    "cross_entropy": _spec_cross_entropy,
    "concat_cols": _spec_concat_cols,
    "concat_rows": _spec_concat_rows,
    "slice_sort": _slice_spec(SortStrategy.ascending(), project=False),
    "slice_sort_interleave": _slice_spec(SortStrategy.interleave(1, 2), project=False),
    "slice_sort_maxexchange": _slice_spec(SortStrategy.max_exchange(), project=False),
    "slice_sort_projected": _slice_spec(SortStrategy.ascending(), project=True),
    "mha": _spec_mha,
}


def _draw_separated(make, seed: int):
    """Run a spec, redrawing until any sorted columns are well separated."""
    for attempt in range(50):
        g = Rng(seed).split(attempt).generator
        arrays, build = make(g)
        loss = build(*[Tensor(np.array(a)) for a in arrays])
        if _min_sort_gap(loss) > _MIN_SORT_GAP:
            return arrays, build
    raise RuntimeError(f"no well-separated draw found for seed {seed}")


def check_op(name: str, seed: int) -> float:
    arrays, build = _draw_separated(OP_SPECS[name], seed)
    return check_gradients(build, arrays)


def run_op_checks(seeds: Sequence[int]) -> dict[str, float]:
    """Max relative error per op across all seeds."""
    return {name: max(check_op(name, s) for s in seeds) for name in OP_SPECS}


def check_block(seed: int, kind: AttentionKind) -> float:
    """Finite-difference check of one pre-norm block, N=4, d_model=6."""
    config = EncoderConfig(
        layers=1, d_model=6, heads=3, head_dim=2, vocab=4, seq_len=5, n_classes=2,
        attention=kind,
    )

    def make(g):
        r = g.standard_normal((4, 6))
        arrays = [g.standard_normal((4, 6))]
        if kind is AttentionKind.SOFTMAX:
            for _ in range(3):
                arrays += [g.standard_normal((6, 2)) for _ in range(3)]
            arrays.append(g.standard_normal((6, 6)))
            n_attn = 10
        else:
            arrays += [g.standard_normal((6, 6)), g.standard_normal((6, 6))]
            n_attn = 2
        arrays += [1.0 + 0.2 * g.standard_normal(6), 0.2 * g.standard_normal(6),
                   1.0 + 0.2 * g.standard_normal(6), 0.2 * g.standard_normal(6),
                   g.standard_normal((6, 12)), 0.2 * g.standard_normal(12),
                   g.standard_normal((12, 6)), 0.2 * g.standard_normal(6)]

        def build(x, *rest):
            if kind is AttentionKind.SOFTMAX:
                attn = MhaParams(
                    w_q=[rest[0], rest[3], rest[6]],
                    w_k=[rest[1], rest[4], rest[7]],
                    w_v=[rest[2], rest[5], rest[8]],
                    w_o=rest[9],
                )
            else:
                attn = SliceSortParams(w_v=rest[0], w_o=rest[1])
            ln = rest[n_attn:]
            block = LayerParams(
                attn=attn, ln1_gamma=ln[0], ln1_beta=ln[1], ln2_gamma=ln[2], ln2_beta=ln[3],
                ffn_w1=ln[4], ffn_b1=ln[5], ffn_w2=ln[6], ffn_b2=ln[7],
            )
            out = encoder_block_forward(x, block, config, layer_index=1)
            return _loss_through(out, r)

        return arrays, build

    arrays, build = _draw_separated(make, seed)
    return check_gradients(build, arrays)


def check_model(seed: int, kind: AttentionKind, n_coords: int = 50,
                config: EncoderConfig | None = None) -> float:
    """Spot-check the full 1-layer classifier: FD on sampled parameter coords."""
    if config is None:
        config = EncoderConfig(
            layers=1, d_model=8, heads=2, head_dim=4, vocab=6, seq_len=5, n_classes=3,
            attention=kind,
        )
    for attempt in range(50):
        g = Rng(seed).split(1000 + attempt).generator
        params = init_encoder_params(g, config)
        tokens = g.integers(1, config.vocab, size=(2, config.seq_len - 1))
        labels = g.integers(config.n_classes, size=2)

        def loss_tensor() -> Tensor:
            return T.cross_entropy(model_logits_batch(tokens, params, config), labels)

        loss = loss_tensor()
        if _min_sort_gap(loss) > _MIN_SORT_GAP:
            break
    else:
        raise RuntimeError(f"no well-separated model draw for seed {seed}")

    params.zero_grads()
    loss = loss_tensor()
    backward(loss)
    tensors = params.tensors()
    sizes = np.array([t.data.size for t in tensors])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    picks = g.integers(total, size=min(n_coords, total))
    worst = 0.0
    for pos in picks:
        ti = int(np.searchsorted(bounds, pos, side="right"))
        k = int(pos - (bounds[ti - 1] if ti else 0))
        t = tensors[ti]
        orig = t.data.flat[k]
        t.data.flat[k] = orig + STEP
        fp = float(loss_tensor().data)
        t.data.flat[k] = orig - STEP
        fm = float(loss_tensor().data)
        t.data.flat[k] = orig
        numeric = (fp - fm) / (2.0 * STEP)
        analytic = float(t.grad.flat[k])
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst


def run_all(seeds: Sequence[int], model_coords: int = 50) -> dict[str, float]:
    """Every op, both block kinds, both full models; max error across seeds."""
    results = run_op_checks(seeds)
    for kind in (AttentionKind.SOFTMAX, AttentionKind.SLICE_SORT):
        results[f"block/{kind.value}"] = max(check_block(s, kind) for s in seeds)
        results[f"model/{kind.value}"] = max(
            check_model(s, kind, n_coords=model_coords) for s in seeds)
    return results
