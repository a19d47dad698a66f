import math

import numpy as np
import pytest

from viscolab.exceptions import DomainError
from viscolab.utils.tensor_calculus import (
    G_sigma,
    SymMat,
    apply_fn,
    apply_fn_batch,
    chi_sigma,
    chi_sigma_batch,
    deviatoric,
    deviatoric_batch,
    eig_batch,
    eig_sym,
    full_to_sym,
    min_eig,
    min_eig_batch,
    sym_to_full,
    trace_G_sigma,
    trace_G_sigma_batch,
)

BATCH = 10_000


def _random_symmetric(rng, dim, size=BATCH):
    a = rng.uniform(-1.0, 1.0, size=(size, dim, dim))
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _random_spd(rng, dim, size=BATCH):
    b = rng.uniform(-1.0, 1.0, size=(size, dim, dim))
    return b @ np.swapaxes(b, -1, -2) + 0.1 * np.eye(dim)


def test_symmat_validation():
    with pytest.raises(DomainError):
        SymMat(4, (1.0,) * 10)
    with pytest.raises(DomainError):
        SymMat(2, (1.0, 2.0))
    P = SymMat.from_matrix([[1.0, 2.0], [2.0, 3.0]])
    assert P[1, 0] == P[0, 1] == 2.0
    assert P.trace == 4.0


def test_sym_storage_round_trip(rng):
    full = np.moveaxis(_random_symmetric(rng, 3, size=5), 0, -1)
    assert np.array_equal(sym_to_full(full_to_sym(full, 3), 3), full)


def test_eig_of_diagonal_matrix():
    decomp = eig_sym(SymMat.diag(3.0, 1.0, -2.0))
    assert np.allclose(decomp.eigvals, [3.0, 1.0, -2.0], atol=1e-14)
    assert np.allclose(decomp.reconstruct(), np.diag([3.0, 1.0, -2.0]), atol=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_eig_batch_reconstruction_and_orthogonality(rng, dim):
    mats = _random_symmetric(rng, dim)
    vals, vecs = eig_batch(mats)

    rebuilt = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    scale = 1.0 + np.abs(mats).max(axis=(-2, -1))
    assert np.all(np.abs(rebuilt - mats).max(axis=(-2, -1)) <= 1e-10 * scale)

    gram = np.swapaxes(vecs, -1, -2) @ vecs
    assert np.abs(gram - np.eye(dim)).max() <= 1e-12

    assert np.all(np.diff(vals, axis=-1) <= 0)
    reference = np.linalg.eigvalsh(mats)[..., ::-1]
    assert np.abs(vals - reference).max() <= 1e-10


@pytest.mark.parametrize("dim", [2, 3])
def test_exp_log_round_trip(rng, dim):
    mats = _random_spd(rng, dim)
    back = apply_fn_batch(np.exp, apply_fn_batch(np.log, mats))
    scale = 1.0 + np.abs(mats).max(axis=(-2, -1))
    assert np.all(np.abs(back - mats).max(axis=(-2, -1)) <= 1e-9 * scale)


@pytest.mark.parametrize("dim", [2, 3])
def test_polynomial_matches_matrix_arithmetic(rng, dim):
    mats = _random_symmetric(rng, dim)
    identity = np.eye(dim)
    square = mats @ mats
    expected = identity + 2.0 * mats - square + 0.5 * square @ mats
    got = apply_fn_batch(lambda s: 1.0 + 2.0 * s - s ** 2 + 0.5 * s ** 3, mats)
    assert np.abs(got - expected).max() <= 1e-9


def test_apply_fn_is_conjugation_invariant(rng):
    P = _random_symmetric(rng, 3, size=1)[0]
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    lhs = apply_fn_batch(np.exp, Q @ P @ Q.T)
    rhs = Q @ apply_fn_batch(np.exp, P) @ Q.T
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_apply_fn_square_of_symmat():
    P = SymMat.from_matrix([[2.0, 1.0], [1.0, 3.0]])
    squared = apply_fn(lambda s: s ** 2, P)
    assert np.allclose(squared.to_matrix(), P.to_matrix() @ P.to_matrix(), atol=1e-12)


def test_log_of_identity_is_zero():
    assert np.allclose(apply_fn(np.log, SymMat.identity(3)).to_matrix(), 0.0, atol=1e-15)


@pytest.mark.parametrize("fn", [np.log, math.log])
def test_log_outside_domain_raises(fn):
    with pytest.raises(DomainError):
        apply_fn(fn, SymMat.diag(1.0, -1.0))


def test_chi_sigma_floors_eigenvalues():
    floored = chi_sigma(SymMat.diag(2.0, -1.0), 0.5)
    assert np.allclose(floored.to_matrix(), np.diag([2.0, 0.5]), atol=1e-14)


def test_chi_sigma_leaves_admissible_matrix_unchanged():
    P = SymMat.from_matrix([[2.0, 0.3], [0.3, 1.0]])
    assert chi_sigma(P, 0.5) == P


@pytest.mark.parametrize("dim", [2, 3])
def test_chi_sigma_batch_minimum_eigenvalue(rng, dim):
    sigma = 0.1
    floored = chi_sigma_batch(_random_symmetric(rng, dim), sigma)
    assert min_eig_batch(floored).min() >= sigma - 1e-12


def test_trace_G_sigma_values():
    assert abs(trace_G_sigma(SymMat.identity(2), 0.5)) <= 1e-15
    sigma = 0.25
    assert math.isclose(trace_G_sigma(SymMat.identity(2, sigma), sigma), 2 * math.log(sigma), rel_tol=1e-14)


def test_G_sigma_is_C1_at_the_seam():
    sigma, h = 0.3, 1e-6
    left, right = G_sigma(sigma - h, sigma), G_sigma(sigma + h, sigma)
    assert abs(right - left) <= 1e-5
    slope = (right - left) / (2 * h)
    assert math.isclose(slope, 1.0 / sigma, rel_tol=1e-5)
    assert math.isclose(float(G_sigma(0.1, sigma)), 0.1 / sigma + math.log(sigma) - 1.0, rel_tol=1e-14)


def test_G_sigma_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        G_sigma(1.0, 0.0)


def test_trace_G_sigma_is_monotone_in_loewner_order(rng):
    lower = rng.uniform(-1.0, 3.0, size=(BATCH, 3))
    upper = lower + rng.uniform(0.0, 1.0, size=(BATCH, 3))
    rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    embed = lambda vals: rotation @ (vals[..., None] * np.eye(3)) @ rotation.T
    sigma = 0.2
    assert np.all(trace_G_sigma_batch(embed(upper), sigma) >= trace_G_sigma_batch(embed(lower), sigma) - 1e-12)


def test_deviatoric_examples():
    assert np.allclose(deviatoric(np.eye(3)).to_matrix(), 0.0)
    e12 = np.zeros((3, 3))
    e12[0, 1] = 1.0
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = 0.5
    assert np.allclose(deviatoric(e12).to_matrix(), expected)


@pytest.mark.parametrize("dim", [2, 3])
def test_deviatoric_is_traceless_and_idempotent(rng, dim):
    grads = rng.uniform(-1.0, 1.0, size=(BATCH, dim, dim))
    dev = deviatoric_batch(grads)
    assert np.abs(np.trace(dev, axis1=-2, axis2=-1)).max() <= 1e-14
    assert np.abs(deviatoric_batch(dev) - dev).max() <= 1e-15


def test_min_eig():
    assert min_eig(SymMat.identity(3)) == pytest.approx(1.0, abs=1e-15)
    assert min_eig(SymMat.diag(3.0, -5.0, 1.0)) == pytest.approx(-5.0, abs=1e-14)
