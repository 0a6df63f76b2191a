import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from wmf_lab.sparse import (
    BinaryInteractionMatrix,
    DimensionError,
    gram_dense,
    sddmm,
    sddmm_t,
    spmm,
    spmm_t,
    unvec,
    vec,
)

from conftest import random_binary, rel_err


def test_vec_stacks_columns():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(vec(M), [1, 3, 2, 4])


def test_vec_zero_matrix():
    np.testing.assert_array_equal(vec(np.zeros((2, 3))), np.zeros(6))


def test_vec_is_a_view_for_fortran_arrays():
    M = np.asfortranarray(np.arange(12.0).reshape(3, 4))
    assert np.shares_memory(vec(M), M)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=7),
                  elements=st.floats(-1e6, 1e6)))
def test_vec_unvec_roundtrip(M):
    np.testing.assert_array_equal(unvec(vec(M), *M.shape), M)


def test_unvec_rejects_wrong_length():
    with pytest.raises(DimensionError):
        unvec(np.zeros(5), 2, 3)


def test_construction_dedups_and_views_agree():
    X = BinaryInteractionMatrix.from_coordinates([0, 0, 1, 2, 0], [1, 1, 0, 2, 2], 3, 3)
    assert X.nnz == 4
    assert set(X.csr.data) == {1.0}
    coo_r = sorted(zip(*X.csr.nonzero()))
    coo_c = sorted(zip(*X.csc.nonzero()))
    assert coo_r == coo_c


def test_construction_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        BinaryInteractionMatrix.from_coordinates([0, 3], [0, 0], 3, 2)


def test_spmm_identity():
    X = BinaryInteractionMatrix.from_dense(np.eye(2))
    D = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(spmm(X, D), D)


def test_spmm_single_coordinate():
    X = BinaryInteractionMatrix.from_coordinates([0], [1], 2, 2)
    out = spmm(X, np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out, [[3, 4], [0, 0]])


def test_spmm_matches_dense(rng):
    Xd = random_binary(rng, 6, 4)
    X = BinaryInteractionMatrix.from_dense(Xd)
    D = rng.normal(size=(4, 3))
    np.testing.assert_allclose(spmm(X, D), Xd @ D, rtol=1e-14)
    E = rng.normal(size=(6, 3))
    np.testing.assert_allclose(spmm_t(X, E), Xd.T @ E, rtol=1e-14)


def test_spmm_dimension_mismatch(small_X):
    _, X = small_X
    with pytest.raises(DimensionError):
        spmm(X, np.zeros((X.n_items + 1, 2)))
    with pytest.raises(DimensionError):
        spmm_t(X, np.zeros((X.n_items, 2)))


def test_sddmm_identity():
    X = BinaryInteractionMatrix.from_dense(np.eye(2))
    S = sddmm(X, np.eye(2), np.eye(2))
    np.testing.assert_array_equal(S.toarray(), np.eye(2))


def test_sddmm_single_inner_product():
    X = BinaryInteractionMatrix.from_coordinates([0], [1], 2, 2)
    A = np.array([[1.0, 2.0], [0.0, 0.0]])
    Bt = np.array([[0.0, 0.0], [3.0, 4.0]])
    S = sddmm(X, A, Bt)
    assert S.values.tolist() == [11.0]


def test_sddmm_masks_dense_product(rng):
    Xd = random_binary(rng, 5, 4, 0.5)
    X = BinaryInteractionMatrix.from_dense(Xd)
    A, Bt = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    expected = Xd * (A @ Bt.T)
    assert rel_err(sddmm(X, A, Bt).toarray(), expected) < 1e-12
    # transposed pattern: Xᵀ ⊙ (C Dᵀ)
    C, D = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    assert rel_err(sddmm_t(X, C, D).toarray(), Xd.T * (C @ D.T)) < 1e-12


def test_sddmm_dimension_mismatch(small_X):
    _, X = small_X
    with pytest.raises(DimensionError):
        sddmm(X, np.zeros((X.n_users, 2)), np.zeros((X.n_items, 3)))


def test_gram_dense_examples():
    np.testing.assert_array_equal(gram_dense(BinaryInteractionMatrix.from_dense(np.eye(3))), np.eye(3))
    ones = BinaryInteractionMatrix.from_dense(np.ones((2, 2)))
    np.testing.assert_array_equal(gram_dense(ones), [[2, 2], [2, 2]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sparse_invariants(seed):
    rng = np.random.default_rng(seed)
    Xd = random_binary(rng, 8, 5, 0.4)
    X = BinaryInteractionMatrix.from_dense(Xd)
    G = gram_dense(X)
    assert rel_err(G, Xd.T @ Xd) == 0.0
    np.testing.assert_array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-10
    D = rng.normal(size=(5, 3))
    assert rel_err(spmm_t(X, spmm(X, D)), G @ D) <= 1e-12
