import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from narrative_attn.errors import DimensionError, InvalidInputError
from narrative_attn.numkernel import (
    matmul,
    nn_resize,
    read_matrix_csv,
    row_softmax,
    thin_svd,
    top_k_indices,
    write_matrix_csv,
)

from oracles import nn_index_loop, softmax_rows, topk_bruteforce

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# matmul

def test_matmul_identity_and_hand_values(rng):
    M = rng.normal(size=(3, 4))
    assert np.array_equal(matmul(np.eye(3), M), M)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])
    assert not matmul(np.zeros((2, 3)), M).any()


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


# softmax

def test_softmax_examples():
    assert np.allclose(row_softmax([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(row_softmax([[1000.0, 1000.0]]), [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(row_softmax([[math.log(2), 0.0]]), [[2 / 3, 1 / 3]], atol=1e-15)


def test_softmax_nan_rejected():
    with pytest.raises(InvalidInputError):
        row_softmax([[0.0, float("nan")]])


def test_softmax_does_not_modify_input():
    x = np.array([[1.0, 2.0, 3.0]])
    row_softmax(x)
    assert np.array_equal(x, [[1.0, 2.0, 3.0]])


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=finite), finite)
def test_softmax_rows_sum_and_shift_invariance(x, c):
    a = row_softmax(x)
    assert np.all(a >= 0)
    assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-12)
    assert np.allclose(row_softmax(x + c), a, atol=1e-12, rtol=0)
    assert np.allclose(a, softmax_rows(x), atol=1e-14, rtol=0)


# thin SVD

def _svd_errors(x, res):
    rec = np.linalg.norm(res.reconstruct() - x) / max(np.linalg.norm(x), 1e-300)
    m = res.sigma.size
    ortho_u = np.abs(res.U.T @ res.U - np.eye(m)).max()
    ortho_v = np.abs(res.Vt @ res.Vt.T - np.eye(m)).max()
    return rec, ortho_u, ortho_v


def test_svd_examples():
    assert np.allclose(thin_svd(np.eye(4)).sigma, 1.0, atol=1e-15)
    assert np.allclose(thin_svd(np.diag([3.0, 2.0])).sigma, [3.0, 2.0], atol=1e-15)
    x = np.random.default_rng(1).normal(size=(8, 5))
    rec, ou, ov = _svd_errors(x, thin_svd(x))
    assert rec <= 1e-8 and ou <= 1e-9 and ov <= 1e-9


def test_svd_matches_lapack_singular_values(rng):
    for _ in range(50):
        D, T = rng.integers(1, 65), rng.integers(1, 78)
        x = rng.normal(size=(D, T))
        res = thin_svd(x)
        ref = np.linalg.svd(x, compute_uv=False)
        assert np.allclose(res.sigma, ref, atol=1e-10 * ref[0], rtol=0)
        assert np.all(np.diff(res.sigma) <= 0)


def test_svd_sign_convention(rng):
    x = rng.normal(size=(12, 7))
    res = thin_svd(x)
    lead = np.argmax(np.abs(res.U), axis=0)
    assert np.all(res.U[lead, np.arange(res.U.shape[1])] >= 0)


def test_svd_rank_deficient_still_orthonormal(rng):
    a = rng.normal(size=(10, 2)) @ rng.normal(size=(2, 6))
    res = thin_svd(a)
    rec, ou, ov = _svd_errors(a, res)
    assert rec <= 1e-8 and ou <= 1e-9 and ov <= 1e-9
    assert res.sigma[2:].max() < 1e-12 * res.sigma[0]
    rec, ou, ov = _svd_errors(np.zeros((3, 4)), thin_svd(np.zeros((3, 4))))
    assert ou <= 1e-9 and ov <= 1e-9


def test_svd_double_run_bit_equal(rng):
    x = rng.normal(size=(30, 40))
    a, b = thin_svd(x), thin_svd(x.copy())
    for f in ("U", "sigma", "Vt"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


def test_svd_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        thin_svd([[1.0, float("inf")]])
    with pytest.raises(InvalidInputError):
        thin_svd(np.zeros((0, 3)))


@settings(max_examples=40)
@given(st.integers(1, 64), st.integers(1, 77), st.integers(0, 2**32 - 1))
def test_svd_invariants_property(D, T, seed):
    x = np.random.default_rng(seed).normal(size=(D, T))
    rec, ou, ov = _svd_errors(x, thin_svd(x))
    assert rec <= 1e-8
    assert ou <= 1e-9 and ov <= 1e-9


# top-k

def test_topk_examples():
    assert list(top_k_indices([1, 2, 3], 5)) == [0, 1, 2]
    assert list(top_k_indices([0.5, 0.9, 0.1, 0.9], 2)) == [1, 3]
    assert list(top_k_indices([7, 7, 7, 7], 2)) == [0, 1]
    assert top_k_indices([], 3).size == 0


def test_topk_matches_bruteforce_on_1000_vectors(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        # coarse values so ties are common
        s = rng.integers(0, 6, size=n).astype(float)
        k = int(rng.integers(1, 45))
        assert list(top_k_indices(s, k)) == topk_bruteforce(list(s), k)


# nearest-neighbour resize

def test_nn_resize_examples():
    v = np.arange(6.0)
    assert np.array_equal(nn_resize(v, (2, 3), (2, 3)), v)
    up = nn_resize([1.0, 2.0, 3.0, 4.0], (2, 2), (4, 4)).reshape(4, 4)
    assert np.array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    assert np.all(nn_resize(np.full(12, 2.5), (3, 4), (7, 5)) == 2.5)
    with pytest.raises(DimensionError):
        nn_resize([1.0], (1, 1), (0, 3))


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12))
def test_nn_resize_index_map(hs, ws, hd, wd):
    src = np.arange(hs * ws, dtype=float)
    out = nn_resize(src, (hs, ws), (hd, wd)).reshape(hd, wd)
    iy, ix = nn_index_loop(hd, hs), nn_index_loop(wd, ws)
    ref = np.array([[iy[y] * ws + ix[x] for x in range(wd)] for y in range(hd)], dtype=float)
    assert np.array_equal(out, ref)


# CSV

def test_matrix_csv_round_trip(tmp_path, rng):
    m = rng.normal(size=(4, 3))
    p = tmp_path / "m.csv"
    write_matrix_csv(p, m)
    assert p.read_text().splitlines()[0] == "4,3"
    assert np.array_equal(read_matrix_csv(p), m)


def test_matrix_csv_ragged(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("2,2\n1,2\n3\n")
    with pytest.raises(InvalidInputError):
        read_matrix_csv(p)
