import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndpp import (BlockC, InferenceKernel, NdppParams, check_p0, check_psd_quadratic,
                  kernel_from_matrix, load_model, save_model, skew_factorize,
                  to_inference_kernel)
from ndpp.errors import DimensionError, FormatError, NotSkewSymmetric, TooLarge
from ndpp.kernel import model_from_bytes, model_to_bytes, principal_minors

from conftest import random_params

COUNTER = np.array([[1, 5 / 3], [1 / 2, 1]])


def test_zero_kernel():
    p = NdppParams(v=np.zeros((4, 2)), d=np.zeros((2, 2)))
    np.testing.assert_array_equal(p.materialize(), np.zeros((4, 4)))


def test_one_by_one():
    p = NdppParams(v=[[2.0]], d=[[0.0]])
    np.testing.assert_array_equal(p.c, [[0.0]])
    np.testing.assert_array_equal(p.materialize(), [[4.0]])


@pytest.mark.parametrize("tied", [True, False])
def test_inference_form_matches(rng, tied):
    p = random_params(rng, 6, 2, tied)
    bf = p.v if tied else p.b
    direct = p.v @ p.v.T + bf @ (p.d - p.d.T) @ bf.T
    kern = to_inference_kernel(p)
    assert kern.r == 4 and kern.latent_rank == 2
    np.testing.assert_allclose(kern.materialize(), direct, atol=1e-12)
    np.testing.assert_allclose(kern.diagonal(), np.diag(direct), atol=1e-12)
    np.testing.assert_allclose(kern.minor([4, 1]), direct[np.ix_([4, 1], [4, 1])], atol=1e-12)


def test_params_validation():
    with pytest.raises(DimensionError):
        NdppParams(v=np.ones((3, 2)), d=np.ones((3, 3)))
    with pytest.raises(ValueError):
        NdppParams(v=np.ones((3, 2)), d=np.ones((2, 2)), tied=False)
    with pytest.raises(ValueError):
        NdppParams(v=np.ones((3, 2)), d=np.ones((2, 2)), alpha=-1)
    with pytest.raises(DimensionError):
        InferenceKernel(np.ones((3, 2)), np.ones((3, 3)))


def test_kernel_from_matrix():
    kern = kernel_from_matrix(COUNTER)
    np.testing.assert_array_equal(kern.materialize(), COUNTER)
    with pytest.raises(DimensionError):
        kernel_from_matrix(np.ones((2, 3)))


def test_skew_factorize_zero():
    b, c = skew_factorize(np.zeros((3, 3)))
    assert c.ell == 0 and c.lambdas == () and b.shape == (3, 0)


def test_skew_factorize_two_by_two():
    b, c = skew_factorize(np.array([[0.0, 2.0], [-2.0, 0.0]]))
    assert c.ell == 2
    np.testing.assert_allclose(c.lambdas, [2.0])
    np.testing.assert_allclose(b.T @ b, np.eye(2), atol=1e-12)


def _reconstruct(b, c):
    return b @ c.materialize() @ b.T


def test_skew_factorize_rank_four():
    rng = np.random.default_rng(4)
    f = rng.standard_normal((6, 4))
    core = rng.standard_normal((4, 4))
    a = f @ (core - core.T) @ f.T
    b, c = skew_factorize(a)
    assert c.ell == 4
    assert np.all(np.diff(c.lambdas) <= 0)
    np.testing.assert_allclose(_reconstruct(b, c), a, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 31))
def test_skew_factorize_property(m, seed):
    g = np.random.default_rng(seed).standard_normal((m, m))
    a = g - g.T
    b, c = skew_factorize(a)
    assert c.ell % 2 == 0 and c.ell == np.linalg.matrix_rank(a)
    assert np.max(np.abs(_reconstruct(b, c) - a)) < 1e-8
    np.testing.assert_allclose(b.T @ b, np.eye(c.ell), atol=1e-8)


def test_skew_factorize_rejects_nonskew():
    with pytest.raises(NotSkewSymmetric):
        skew_factorize(np.eye(2))


def test_block_c():
    c = BlockC([3.0, 1.0]).materialize()
    np.testing.assert_array_equal(c, [[0, 3, 0, 0], [-3, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]])


def test_p0_checks():
    assert check_p0(COUNTER)
    assert not check_psd_quadratic(COUNTER)
    x = np.array([-1.0, 1.0])
    assert x @ COUNTER @ x == pytest.approx(-1 / 6)
    assert not check_p0(-np.eye(2))
    assert check_psd_quadratic(np.eye(2))
    with pytest.raises(TooLarge):
        check_p0(np.eye(26))


def test_principal_minors_count():
    l = np.diag([1.0, 2.0, 3.0])
    dets = [d for _, d in principal_minors(l)]
    assert len(dets) == 7
    assert sorted(np.round(dets, 12)) == [1, 2, 2, 3, 3, 6, 6]


@pytest.mark.parametrize("tied", [True, False])
def test_model_round_trip(tmp_path, rng, tied):
    p = random_params(rng, 7, 3, tied, alpha=0.5, beta=0.25)
    path = tmp_path / "m.ndpp"
    save_model(p, path)
    q = load_model(path)
    assert q == p
    assert model_to_bytes(q) == path.read_bytes()


def test_model_format_errors(rng):
    blob = model_to_bytes(random_params(rng, 4, 2))
    with pytest.raises(FormatError):
        model_from_bytes(blob[:-3])
    with pytest.raises(FormatError):
        model_from_bytes(blob[:10])
    with pytest.raises(FormatError):
        model_from_bytes(blob[:4] + (2).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError):
        model_from_bytes(b"XXXX" + blob[4:])
