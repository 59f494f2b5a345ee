import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from beris import tensor as T
from beris.errors import InvalidInputError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
coeffs = arrays(np.float64, (5,), elements=finite)
mats = arrays(np.float64, (3, 3), elements=finite)


def antisym(v):
    return np.array([[0, v[0], v[1]], [-v[0], 0, v[2]], [-v[1], -v[2], 0]])


def test_project_traceless_examples():
    assert np.allclose(T.project_traceless(np.eye(3)), 0, atol=1e-15)
    out = T.project_traceless(np.diag([1.0, 0, 0]))
    assert np.allclose(out, np.diag([2 / 3, -1 / 3, -1 / 3]), atol=1e-15)
    with pytest.raises(InvalidInputError):
        T.project_traceless(np.full((3, 3), np.nan))


@given(mats)
def test_project_traceless_idempotent(M):
    P = T.project_traceless(M)
    assert np.abs(T.project_traceless(P) - P).max() <= 1e-14 * max(1, np.abs(M).max())
    assert abs(np.trace(P)) <= 1e-13 * max(1, np.linalg.norm(P))


@given(coeffs, arrays(np.float64, (3,), elements=finite))
def test_commutator_symmetric_traceless_and_orthogonal(q, w):
    Q, W = T.from_coeffs(q), antisym(w)
    C = T.commutator_with_antisym(Q, W)
    dense = W @ Q - Q @ W
    assert np.allclose(C, dense, atol=1e-14)
    scale = max(1.0, np.abs(C).max())
    assert abs(np.trace(C)) <= 1e-14 * scale
    assert np.abs(C - C.T).max() <= 1e-14 * scale
    assert abs(T.ddot(C, Q)) <= 1e-13 * max(1.0, T.ddot(Q, Q) * np.linalg.norm(W))


def test_commutator_trivial_and_rejects_symmetric_w():
    rng = np.random.default_rng(0)
    Q = T.random_qtensor(rng)
    assert np.all(T.commutator_with_antisym(Q, np.zeros((3, 3))) == 0)
    assert np.all(T.commutator_with_antisym(np.zeros((3, 3)), antisym([1, 2, 3])) == 0)
    with pytest.raises(InvalidInputError):
        T.commutator_with_antisym(Q, np.eye(3))


def test_invariants():
    assert np.allclose(T.invariants(np.zeros((3, 3))), 0)
    Q = T.uniaxial(1.0, [1, 0, 0])
    tr2, tr3, nrm = T.invariants(Q)
    assert np.isclose(tr2, 2 / 3, atol=1e-15) and np.isclose(tr3, 2 / 9, atol=1e-15)
    assert np.isclose(nrm, np.sqrt(2 / 3), atol=1e-15)
    rng = np.random.default_rng(1)
    Qs = T.random_qtensor(rng, 50)
    tr2, tr3, _ = T.invariants(Qs)
    for Q, a, b in zip(Qs, tr2, tr3):
        assert np.isclose(a, np.trace(Q @ Q), rtol=1e-13)
        assert np.isclose(b, np.trace(Q @ Q @ Q), rtol=1e-13, atol=1e-14)


def test_eigenvalue_examples():
    assert np.all(T.eigenvalues(np.zeros((3, 3))) == 0)
    rng = np.random.default_rng(2)
    for d in rng.standard_normal((5, 3)):
        lam = T.eigenvalues(T.uniaxial(1.0, d / np.linalg.norm(d)))
        assert np.allclose(lam, [-1 / 3, -1 / 3, 2 / 3], atol=1e-12)


@settings(max_examples=200)
@given(coeffs)
def test_eigenvalues_against_companion_matrix(q):
    Q = T.from_coeffs(q)
    lam = T.eigenvalues(Q)
    nrm = np.linalg.norm(Q)
    assert abs(lam.sum()) <= 1e-12 * max(1, nrm)
    assert np.all(np.diff(lam) >= -1e-12 * max(1, nrm))
    assert np.all(np.abs(lam) <= nrm * (1 + 1e-12) + 1e-15)
    tr2, det = np.trace(Q @ Q), np.linalg.det(Q)
    roots = np.sort(np.roots([1.0, 0.0, -tr2 / 2, -det]).real)
    assert np.allclose(lam, roots, atol=1e-7 * max(1, nrm))
    assert T.char_poly_residual(Q, lam).max() <= 1e-12


def test_eigenvalues_near_degenerate():
    Q = T.uniaxial(0.3, [0, 0, 1.0]) + 1e-9 * T.from_coeffs([1, 0, 0, 0, 0])
    lam = T.eigenvalues(Q)
    assert np.allclose(lam, np.linalg.eigvalsh(Q), atol=1e-12)


def test_uniaxial():
    assert np.all(T.uniaxial(0.0, [0, 0, 1.0]) == 0)
    assert np.allclose(T.uniaxial(1.0, [0, 0, 1.0]), np.diag([-1 / 3, -1 / 3, 2 / 3]))
    lam = T.eigenvalues(T.uniaxial(0.7, [0.6, 0.8, 0.0]))
    assert np.allclose(lam, [-0.7 / 3, -0.7 / 3, 1.4 / 3], atol=1e-12)
    with pytest.raises(InvalidInputError):
        T.uniaxial(1.0, [1.0, 1.0, 0.0])


@given(coeffs)
def test_storage_round_trips(q):
    Q = T.from_coeffs(q)
    assert np.allclose(T.to_coeffs(Q), q, atol=1e-13)
    assert np.array_equal(T.from_sym6(T.to_sym6(Q)), Q)
    assert np.isclose(T.frobenius(Q) ** 2, (q**2).sum(), rtol=1e-12, atol=1e-14)


def test_basis_orthonormal_traceless():
    G = np.einsum("aij,bij->ab", T.BASIS, T.BASIS)
    assert np.allclose(G, np.eye(5), atol=1e-15)
    assert np.allclose(np.trace(T.BASIS, axis1=1, axis2=2), 0)


def test_random_rotation_is_proper():
    R = T.random_rotation(np.random.default_rng(3), 20)
    assert np.allclose(R @ np.swapaxes(R, 1, 2), np.eye(3), atol=1e-13)
    assert np.allclose(np.linalg.det(R), 1.0)
