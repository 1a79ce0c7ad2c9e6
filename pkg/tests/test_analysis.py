"""Diagnostics tests: smoothing curve, Jacobi spectra, structure reports,
scaling benchmarks.

The spectral oracle is numpy's symmetric eigensolver applied to the Gram
matrix; the implementation under test never calls it.
"""

import math

import numpy as np
import pytest

from sortattn.analysis import (
    BenchRecord,
    SpectrumReport,
    bench_attention,
    loglog_slope,
    singular_spectrum,
    softmax_std_curve,
    spectrum_area,
    spectrum_experiment,
    structure_check,
)
from sortattn.attention import (
    SortStrategy,
    extract_permutation_matrix,
    init_slice_sort_params,
    slice_sort_forward,
)
from sortattn.data import Rng, gen_multiset_majority
from sortattn.encoder import AttentionKind, EncoderConfig, init_encoder_params
from sortattn.tensor import Tensor


# ------------------------------------------------------------ smoothing


def test_softmax_of_constant_vector_has_zero_std():
    for n in (2, 5, 100):
        x = np.full(n, 3.7)
        e = np.exp(x - x.max())
        y = e / e.sum()
        # output is exactly uniform, so every deviation from an entry is 0
        assert np.all(y == y[0])
        assert float(np.sqrt(((y - y[0]) ** 2).sum() / (n - 1))) == 0.0


def test_two_point_analytic_case():
    # softmax([ln 3, 0]) = [0.75, 0.25]; sample std = sqrt(2*(0.25)^2/1)
    x = np.array([math.log(3.0), 0.0])
    e = np.exp(x - x.max())
    y = e / e.sum()
    np.testing.assert_allclose(y, [0.75, 0.25], atol=1e-15)
    assert float(y.std(ddof=1)) == pytest.approx(0.3535533905932738, abs=1e-12)


def test_std_curve_decreasing_and_deterministic():
    rows = softmax_std_curve([10, 100, 1000], trials=20, seed=0)
    assert [n for n, _ in rows] == [10, 100, 1000]
    stds = [s for _, s in rows]
    assert stds[0] > stds[1] > stds[2]
    again = softmax_std_curve([10, 100, 1000], trials=20, seed=0)
    assert rows == again


def test_std_curve_contract_errors():
    with pytest.raises(ValueError, match="trials"):
        softmax_std_curve([10], trials=0, seed=0)
    with pytest.raises(ValueError, match="N >= 2"):
        softmax_std_curve([1], trials=5, seed=0)


# ------------------------------------------------------------ spectra


def test_identity_spectrum_is_ones():
    np.testing.assert_array_equal(singular_spectrum(np.eye(5)), np.ones(5))


def test_diagonal_spectrum_takes_absolute_values():
    sigma = singular_spectrum(np.diag([3.0, -2.0]))
    np.testing.assert_allclose(sigma, [3.0, 2.0], atol=1e-12)


def test_random_rectangular_matches_gram_eigenvalues():
    a = Rng(42).generator.standard_normal((6, 4))
    sigma = singular_spectrum(a)
    # oracle: eigenvalues of the 4x4 Gram matrix, independent solver
    evals = np.linalg.eigh(a.T @ a)[0][::-1]
    np.testing.assert_allclose(sigma**2, evals, atol=1e-9)
    assert np.all(np.diff(sigma) <= 0)


def test_wide_matrix_equals_transposed_spectrum():
    a = Rng(7).generator.standard_normal((3, 8))
    np.testing.assert_allclose(singular_spectrum(a), singular_spectrum(a.T), atol=1e-10)
    assert singular_spectrum(a).shape == (3,)


def test_row_shuffle_leaves_spectrum_unchanged():
    g = Rng(3).generator
    a = g.standard_normal((7, 5))
    shuffled = a[g.permutation(7)]
    np.testing.assert_allclose(
        singular_spectrum(a), singular_spectrum(shuffled), atol=1e-9
    )


def test_zero_matrix_spectrum():
    np.testing.assert_array_equal(singular_spectrum(np.zeros((4, 3))), np.zeros(3))


def test_spectrum_rejects_nonfinite_and_bad_shape():
    with pytest.raises(FloatingPointError, match="non-finite"):
        singular_spectrum(np.array([[1.0, np.inf], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="2-d"):
        singular_spectrum(np.ones(4))
    with pytest.raises(ValueError, match="2-d"):
        singular_spectrum(np.ones((0, 3)))


# ------------------------------------------------------------ structure


def test_extracted_permutation_reports_clean_structure():
    n, width = 12, 6
    g = Rng(0).generator
    x = Tensor(g.standard_normal((n, width)))
    params = init_slice_sort_params(g, width, heads=2, head_dim=3)
    _, record = slice_sort_forward(x, params, SortStrategy.ascending())
    for ch in range(width):
        rep = structure_check(extract_permutation_matrix(record, ch))
        assert rep.row_stochastic and rep.col_stochastic
        assert rep.nnz == n
        assert rep.rank == n


def test_uniform_matrix_is_doubly_stochastic_rank_one():
    rep = structure_check(np.full((6, 6), 1.0 / 6.0))
    assert rep.row_stochastic and rep.col_stochastic
    assert rep.rank == 1
    assert rep.nnz == 36


def test_random_softmax_map_is_row_but_not_col_stochastic():
    g = Rng(5).generator
    q = g.standard_normal((8, 4))
    k = g.standard_normal((8, 4))
    scores = q @ k.T / math.sqrt(4)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    rep = structure_check(p)
    assert rep.row_stochastic
    assert not rep.col_stochastic


def test_structure_check_rejects_nonsquare():
    with pytest.raises(ValueError, match="square"):
        structure_check(np.ones((3, 4)))


# ------------------------------------------------------------ benchmarks


def test_bench_smoke_records_and_linear_slicesort_memory():
    records = bench_attention([32, 64], d=16, heads=2, head_dim=8, repeats=3, seed=0)
    assert len(records) == 4
    assert {r.mechanism for r in records} == {"softmax", "slicesort"}
    for r in records:
        assert r.fwd_s > 0 and r.fwdbwd_s > 0
        assert r.peak_bytes > 0
    by_key = {(r.mechanism, r.n): r for r in records}
    for n in (32, 64):
        # index buffers and sorted copies are O(N*MD); nothing quadratic
        assert by_key[("slicesort", n)].peak_bytes <= 24 * n * 16


def test_bench_rejects_too_few_repeats():
    with pytest.raises(ValueError, match="repeats"):
        bench_attention([32], d=8, heads=1, head_dim=8, repeats=2, seed=0)


def test_repeated_medians_are_stable():
    from sortattn.analysis import _median_call_time

    fn = lambda: np.sort(np.arange(2048) % 7)
    times = [_median_call_time(fn, repeats=5) for _ in range(3)]
    assert max(times) / min(times) < 3.0


def test_loglog_slope_recovers_power_laws():
    ns = [256, 512, 1024, 2048]
    assert loglog_slope(ns, [1e-6 * n**2 for n in ns]) == pytest.approx(2.0, abs=1e-12)
    assert loglog_slope(ns, [3e-7 * n for n in ns]) == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------------ spectrum experiment


def _tiny_models(layers=2):
    cfgs = {}
    for kind in (AttentionKind.SOFTMAX, AttentionKind.SLICE_SORT):
        cfgs[kind] = EncoderConfig(
            layers=layers, d_model=8, heads=2, head_dim=4, vocab=6,
            seq_len=5, n_classes=3, attention=kind,
        )
    return [
        ("softmax", init_encoder_params(Rng(1).generator, cfgs[AttentionKind.SOFTMAX])),
        ("slicesort", init_encoder_params(Rng(1).generator, cfgs[AttentionKind.SLICE_SORT])),
    ]


def test_spectrum_reports_are_well_formed():
    models = _tiny_models(layers=2)
    probe = np.stack([s.tokens for s in gen_multiset_majority(0, 4, 4, 6, 3)])
    reports = spectrum_experiment(models, probe)
    assert len(reports) == 4  # 2 models x 2 layers
    for rep in reports:
        assert rep.mechanism in ("softmax", "slicesort")
        assert rep.sigma[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(rep.sigma) <= 1e-12)
        assert np.all(rep.sigma >= -1e-15)
    assert [r.layer for r in reports if r.mechanism == "softmax"] == [1, 2]
    assert 0.0 < spectrum_area(reports[0]) <= 1.0


def test_spectrum_experiment_is_deterministic():
    models = _tiny_models(layers=1)
    probe = np.stack([s.tokens for s in gen_multiset_majority(2, 3, 4, 6, 3)])
    a = spectrum_experiment(models, probe)
    b = spectrum_experiment(models, probe)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.sigma, rb.sigma)


def test_spectrum_experiment_validates_inputs():
    models = _tiny_models(layers=1)
    with pytest.raises(ValueError, match="2-d"):
        spectrum_experiment(models, np.array([1, 2, 3, 4]))
    with pytest.raises(ValueError, match="no models"):
        spectrum_experiment([], np.ones((1, 4), dtype=np.int64))
    other = EncoderConfig(layers=1, d_model=4, heads=1, head_dim=4, vocab=6,
                          seq_len=5, n_classes=3, attention=AttentionKind.SOFTMAX)
    mismatched = models + [("odd", init_encoder_params(Rng(2).generator, other))]
    with pytest.raises(ValueError, match="matched"):
        spectrum_experiment(mismatched, np.ones((1, 4), dtype=np.int64))
