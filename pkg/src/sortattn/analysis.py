"""Diagnostics: over-smoothing curve, spectra, map structure, scaling benchmarks.

Everything here is pure given (inputs, seed) except wall-clock fields of
bench records. Singular values come from an in-house one-sided Jacobi
iteration; the benchmark pins BLAS to one thread so asymptotic slopes
are not distorted by threading effects, and it measures memory by the
allocation hooks in the tensor layer rather than process RSS.
"""

from __future__ import annotations

import math
import timeit
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import (
    SortStrategy,
    init_mha_params,
    init_slice_sort_params,
    mha_forward,
    slice_sort_forward,
)
from .data import Rng
from .encoder import EncoderParams, model_forward
from .tensor import Tensor, backward, sum_all, track_allocations


def softmax_std_curve(
    n_list: Sequence[int], trials: int, seed: int
) -> list[tuple[int, float]]:
    """Mean sample std of softmax over N iid standard normals, per N.

    The sample standard deviation uses squared deviations divided by
    N - 1. As N grows the softmax output flattens toward uniform and
    the std shrinks; this is the smoothing effect the sorting mechanism
    avoids.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    for n in n_list:
        if n < 2:
            raise ValueError(f"sample std needs N >= 2, got {n}")
    g = Rng(seed).generator
    rows = []
    for n in n_list:
        total = 0.0
        for _ in range(trials):
            x = g.standard_normal(n)
            e = np.exp(x - x.max())
            y = e / e.sum()
            total += float(y.std(ddof=1))
        rows.append((int(n), total / trials))
    return rows


def singular_spectrum(mtx, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Singular values by one-sided Jacobi, sorted nonincreasing.

    Rotates column pairs until every pair is orthogonal to within
    ``tol`` relative to the column norms; the singular values are then
    the column norms. Raises FloatingPointError if ``max_sweeps`` passes
    over all pairs do not reach that state.
    """
    a = np.array(mtx, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"need a nonempty 2-d matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise FloatingPointError("matrix contains non-finite entries")
    if a.shape[0] < a.shape[1]:
        a = a.T
    a = np.asfortranarray(a)
    m = a.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(m - 1):
            for j in range(i + 1, m):
                ai, aj = a[:, i], a[:, j]
                aii = float(ai @ ai)
                ajj = float(aj @ aj)
                aij = float(ai @ aj)
                if aii * ajj == 0.0 or abs(aij) <= tol * math.sqrt(aii * ajj):
                    continue
                theta = 0.5 * math.atan2(2.0 * aij, aii - ajj)
                c, s = math.cos(theta), math.sin(theta)
                rot_i = c * ai + s * aj
                a[:, j] = c * aj - s * ai
                a[:, i] = rot_i
                rotated = True
        if not rotated:
            break
    else:
        raise FloatingPointError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    sigma = np.sqrt((a * a).sum(axis=0))
    sigma.sort()
    return sigma[::-1].copy()


@dataclass(frozen=True)
class StructureReport:
    row_stochastic: bool
    col_stochastic: bool
    nnz: int
    rank: int


def structure_check(p, tol: float = 1e-9) -> StructureReport:
    """Stochasticity flags, nonzero count, and numerical rank of a square map.

    Row/column sums are compared to 1 within ``tol``; entries count as
    nonzero above ``tol``; rank counts singular values above
    ``tol * sigma_max``.
    """
    mat = np.asarray(p, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"structure_check needs a square matrix, got shape {mat.shape}")
    row = bool(np.all(np.abs(mat.sum(axis=1) - 1.0) <= tol))
    col = bool(np.all(np.abs(mat.sum(axis=0) - 1.0) <= tol))
    nnz = int((np.abs(mat) > tol).sum())
    sigma = singular_spectrum(mat)
    rank = int((sigma > tol * sigma[0]).sum()) if sigma[0] > 0 else 0
    return StructureReport(row_stochastic=row, col_stochastic=col, nnz=nnz, rank=rank)


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    n: int
    fwd_s: float
    fwdbwd_s: float
    peak_bytes: int


def _median_call_time(fn, repeats: int, target: float = 0.004) -> float:
    """Median per-call time: each repeat times an inner loop sized from one
    probe call so short calls are not lost in timer noise."""
    probe = timeit.timeit(fn, number=1)
    inner = max(1, min(64, math.ceil(target / max(probe, 1e-9))))
    samples = [timeit.timeit(fn, number=inner) / inner for _ in range(repeats)]
    samples.sort()
    return samples[len(samples) // 2]


def bench_attention(
    n_list: Sequence[int], d: int, heads: int, head_dim: int, repeats: int, seed: int
) -> list[BenchRecord]:
    """Median forward and forward+backward times per mechanism and N.

    Warmup runs are excluded from timing; the warmup is instrumented and
    its largest single allocated buffer is reported as peak_bytes. BLAS
    is pinned to one thread for the duration.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    records = []
    with threadpool_limits(limits=1):
        for mechanism in ("softmax", "slicesort"):
            for n in n_list:
                g = Rng(seed).split(n).generator
                x = Tensor(g.standard_normal((n, d)))
                if mechanism == "softmax":
                    params = init_mha_params(g, d, heads, head_dim)

                    def fwd():
                        return mha_forward(x, params)
                else:
                    params = init_slice_sort_params(g, d, heads, head_dim)
                    strategy = SortStrategy.ascending()

                    def fwd():
                        return slice_sort_forward(x, params, strategy)[0]

                def fwdbwd():
                    backward(sum_all(fwd()))

                with track_allocations() as tracker:
                    fwdbwd()
                records.append(BenchRecord(
                    mechanism=mechanism,
                    n=int(n),
                    fwd_s=_median_call_time(fwd, repeats),
                    fwdbwd_s=_median_call_time(fwdbwd, repeats),
                    peak_bytes=tracker.largest_single,
                ))
    return records


def loglog_slope(ns: Sequence[int], times: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(N)."""
    lx = np.log(np.asarray(ns, dtype=np.float64))
    ly = np.log(np.asarray(times, dtype=np.float64))
    lx -= lx.mean()
    return float((lx * ly).sum() / (lx * lx).sum())


@dataclass(frozen=True)
class SpectrumReport:
    """Normalized singular spectrum of one layer's attention-sublayer output."""

    mechanism: str
    layer: int
    sigma: np.ndarray


def spectrum_experiment(
    models: Sequence[tuple[str, EncoderParams]], probe: np.ndarray
) -> list[SpectrumReport]:
    """Per-layer attention-output spectra, normalized by the top value.

    ``models`` pairs a mechanism tag with trained parameters; all models
    must agree on depth and width. ``probe`` is an integer batch of
    shape (B, seq_len - 1); spectra are averaged over the batch after
    normalization, so every report starts at 1 and is nonincreasing.
    """
    probe = np.asarray(probe)
    if probe.ndim != 2 or probe.shape[0] == 0:
        raise ValueError(f"probe must be a nonempty 2-d token batch, got shape {probe.shape}")
    if not models:
        raise ValueError("no models given")
    shapes = {(p.config.layers, p.config.d_model) for _, p in models}
    if len(shapes) != 1:
        raise ValueError(f"models are not matched in depth/width: {sorted(shapes)}")
    reports = []
    for tag, params in models:
        cfg = params.config
        acc = [np.zeros(min(cfg.seq_len, cfg.d_model)) for _ in range(cfg.layers)]
        for row in probe:
            tap: list[Tensor] = []
            model_forward(row, params, cfg, tap=tap)
            for idx, attn in enumerate(tap):
                sigma = singular_spectrum(attn.data)
                acc[idx] += sigma / sigma[0] if sigma[0] > 0 else sigma
        for idx in range(cfg.layers):
            reports.append(SpectrumReport(
                mechanism=tag, layer=idx + 1, sigma=acc[idx] / probe.shape[0]
            ))
    return reports


def spectrum_area(report: SpectrumReport) -> float:
    """Mean of the normalized spectrum; higher means slower decay."""
    return float(report.sigma.mean())
