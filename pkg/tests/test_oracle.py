import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmf_lab import oracle
from wmf_lab.models import ModelKind
from wmf_lab.oracle import DenseProblem, OracleSizeError

from conftest import random_binary, rel_err


def test_assemble_identity_examples():
    H = oracle.dense_gram_assemble(DenseProblem.from_alpha(np.eye(2), 1.0, 0.0, ModelKind.FULL_RANK), "B")
    np.testing.assert_array_equal(H, np.eye(4))
    H = oracle.dense_gram_assemble(DenseProblem.from_alpha(np.eye(2), 3.0, 1.0, ModelKind.FULL_RANK), "B")
    np.testing.assert_array_equal(H, np.diag([4.0, 2.0, 2.0, 4.0]))


def test_size_guard():
    with pytest.raises(OracleSizeError):
        DenseProblem.from_alpha(np.zeros((101, 100)), 2.0, 1.0, ModelKind.FULL_RANK)


def test_weights_must_be_positive():
    with pytest.raises(ValueError):
        DenseProblem(np.eye(2), np.zeros((2, 2)), 1.0, ModelKind.FULL_RANK)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_assembled_gram_spd(rng, kind):
    Xd = random_binary(rng, 10, 4, full_column_rank=True)
    lam = 0.5
    p = DenseProblem.from_alpha(Xd, 5.0, lam, kind)
    for side, fixed in (("B", None), ("U", rng.normal(size=(4 if kind is not ModelKind.WMF else 4, 2))),
                        ("V", rng.normal(size=(10 if kind is ModelKind.WMF else 4, 2)))):
        if side == "B" and kind is not ModelKind.FULL_RANK:
            continue
        H = oracle.dense_gram_assemble(p, side, fixed)
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        if kind is not ModelKind.AWMF_DATA_WEIGHT_DECAY or side != "U":
            assert np.linalg.eigvalsh(H).min() >= lam - 1e-10


def test_closed_form_ridge_at_alpha_one(rng):
    Xd = random_binary(rng, 12, 4)
    p = DenseProblem.from_alpha(Xd, 1.0, 2.0, ModelKind.FULL_RANK)
    G = Xd.T @ Xd
    np.testing.assert_allclose(oracle.dense_closed_form(p, "B"),
                               np.linalg.solve(G + 2.0 * np.eye(4), G), atol=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 3.0, 21.0])
def test_closed_form_exact_fit_on_identity(alpha):
    p = DenseProblem.from_alpha(np.eye(2), alpha, 0.0, ModelKind.FULL_RANK)
    np.testing.assert_allclose(oracle.dense_closed_form(p, "B"), np.eye(2), atol=1e-14)


def test_closed_form_singular_raises():
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    p = DenseProblem.from_alpha(X, 2.0, 0.0, ModelKind.FULL_RANK)
    with pytest.raises(np.linalg.LinAlgError):
        oracle.dense_closed_form(p, "B")


def test_zero_point_objective():
    X = np.array([[1.0, 0.0], [1.0, 1.0]])
    p = DenseProblem.from_alpha(X, 1.0, 3.0, ModelKind.FULL_RANK)
    assert oracle.dense_objective(p, np.zeros((2, 2))) == 3.0


@pytest.mark.parametrize("kind", list(ModelKind))
def test_closed_form_half_step_zeroes_partial_gradient(rng, kind):
    Xd = random_binary(rng, 10, 4, full_column_rank=True)
    p = DenseProblem.from_alpha(Xd, 4.0, 0.5, kind)
    if kind is ModelKind.FULL_RANK:
        B = oracle.dense_closed_form(p, "B")
        assert np.abs(oracle.dense_gradient(p, B)).max() <= 1e-8
        return
    n_u = 10 if kind is ModelKind.WMF else 4
    V = rng.normal(size=(4, 2))
    U = oracle.dense_closed_form(p, "U", V)
    assert U.shape == (n_u, 2)
    assert np.abs(oracle.dense_gradient(p, (U, V))[0]).max() <= 1e-8
    V = oracle.dense_closed_form(p, "V", U)
    assert np.abs(oracle.dense_gradient(p, (U, V))[1]).max() <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(ModelKind)))
def test_analytic_gradient_matches_finite_differences(seed, kind):
    rng = np.random.default_rng(seed)
    Xd = random_binary(rng, 8, 4)
    W = rng.uniform(0.5, 3.0, size=Xd.shape)
    p = DenseProblem(Xd, W, 0.3, kind)
    if kind is ModelKind.FULL_RANK:
        point = rng.normal(size=(4, 4))
        assert rel_err(oracle.finite_difference_gradient(p, point), oracle.dense_gradient(p, point)) <= 1e-5
        return
    point = (rng.normal(size=(8 if kind is ModelKind.WMF else 4, 2)), rng.normal(size=(4, 2)))
    fd = oracle.finite_difference_gradient(p, point)
    an = oracle.dense_gradient(p, point)
    assert rel_err(np.concatenate([fd[0].ravel(), fd[1].ravel()]),
                   np.concatenate([an[0].ravel(), an[1].ravel()])) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kron_identities_arbitrary_positive_weights(seed):
    rng = np.random.default_rng(seed)
    m, n, k, d = rng.integers(1, 6, size=4)
    A, B, C = rng.normal(size=(m, n)), rng.normal(size=(n, d)), rng.normal(size=(k, d))
    W = rng.uniform(0.01, 10.0, size=(m, k))
    assert rel_err(*oracle.kron_identity_1(A, B, C, W)) <= 1e-10
    assert rel_err(*oracle.kron_identity_2(A, B, C, W)) <= 1e-10
