"""Algebra of traceless symmetric 3x3 tensors.

All functions are batched: a Q-tensor is an array whose trailing two axes are
``(3, 3)``, and any leading axes are treated as independent points. Fields on a
grid use the 5-coefficient expansion in the orthonormal basis :data:`BASIS`
(``|Q|^2`` equals the sum of squared coefficients).
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

I3 = np.eye(3)

_S2, _S6 = np.sqrt(2.0), np.sqrt(6.0)
#: Orthonormal basis of the traceless symmetric matrices, shape (5, 3, 3).
BASIS = np.array(
    [
        np.diag([1.0, -1.0, 0.0]) / _S2,
        np.diag([-1.0, -1.0, 2.0]) / _S6,
        np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]) / _S2,
        np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]]) / _S2,
        np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]]) / _S2,
    ],
    dtype=float,
)

_UPPER = (np.array([0, 0, 0, 1, 1, 2]), np.array([0, 1, 2, 1, 2, 2]))


def _check_finite(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.shape[-2:] != (3, 3):
        raise InvalidInputError(f"{name} must have trailing shape (3, 3), got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def trace(M):
    return np.trace(M, axis1=-2, axis2=-1)


def sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def ddot(A, B):
    """Full contraction ``A:B = A_ij B_ij`` over the trailing matrix axes."""
    return np.einsum("...ij,...ij->...", A, B)


def project_traceless(M):
    """Return ``<M> = (M + M^T)/2 - tr(M)/3 I``."""
    M = _check_finite(M)
    S = sym(M)
    return S - (trace(S) / 3.0)[..., None, None] * I3


def retrace(Q):
    """Cheap re-projection used after long arithmetic chains (no validation)."""
    S = sym(Q)
    return S - (trace(S) / 3.0)[..., None, None] * I3


def commutator_with_antisym(Q, W, tol=1e-13):
    """Return ``W Q - Q W`` for symmetric ``Q`` and antisymmetric ``W``."""
    Q = _check_finite(Q, "Q")
    W = _check_finite(W, "W")
    scale = np.maximum(1.0, np.max(np.abs(W), axis=(-2, -1)))
    defect = np.max(np.abs(W + np.swapaxes(W, -1, -2)), axis=(-2, -1))
    if np.any(defect > tol * scale):
        raise InvalidInputError("W is not antisymmetric")
    return W @ Q - Q @ W


def invariants(Q):
    """Return ``(tr Q^2, tr Q^3, |Q|)``."""
    Q = _check_finite(Q, "Q")
    Q2 = Q @ Q
    tr2 = trace(Q2)
    tr3 = ddot(Q2, np.swapaxes(Q, -1, -2))
    return tr2, tr3, np.sqrt(tr2)


def frobenius(Q):
    return np.sqrt(ddot(Q, Q))


def eigenvalues(Q):
    """Sorted eigenvalues of a traceless symmetric tensor (closed form).

    Uses the trigonometric solution of the depressed cubic
    ``l^3 - (tr Q^2 / 2) l - det Q = 0`` followed by Newton refinement of the
    two outer roots; the middle root is recovered from ``sum = 0``.
    """
    Q = _check_finite(Q, "Q")
    # unit scale avoids under/overflow in det / p^3
    scale = np.max(np.abs(Q), axis=(-2, -1))
    scale = np.where(scale > 0, scale, 1.0)
    Q = retrace(Q) / scale[..., None, None]
    tr2 = ddot(Q, Q)
    det = np.linalg.det(Q)
    p = np.sqrt(tr2 / 6.0)
    safe = p > 0
    ps = np.where(safe, p, 1.0)
    r = np.where(safe, det / (2.0 * ps**3), 0.0)
    r = np.clip(r, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = 2.0 * ps * np.cos(phi)
    lo = 2.0 * ps * np.cos(phi + 2.0 * np.pi / 3.0)
    half_tr2 = 0.5 * tr2
    # Newton polish; stalls harmlessly at (near-)double roots where chi' ~ 0
    def polish(root):
        chi = root**3 - half_tr2 * root - det
        dchi = 3.0 * root**2 - half_tr2
        ok = np.abs(dchi) > 1e-10 * np.maximum(tr2, 1e-300)
        return root - np.where(ok, chi / np.where(ok, dchi, 1.0), 0.0)

    for _ in range(2):
        hi, lo = polish(hi), polish(lo)
    hi = np.where(safe, hi, 0.0)
    lo = np.where(safe, lo, 0.0)
    mid = -(hi + lo)
    return np.stack([lo, mid, hi], axis=-1) * scale[..., None]


def char_poly_residual(Q, lam):
    """Residual of ``det(l I - Q)`` at each eigenvalue, relative to ``|Q|^3``."""
    tr2 = ddot(Q, Q)
    det = np.linalg.det(Q)
    chi = lam**3 - 0.5 * tr2[..., None] * lam - det[..., None]
    return np.abs(chi) / np.maximum(1.0, tr2[..., None] ** 1.5)


def uniaxial(s, d, tol=1e-12):
    """Return ``s (d d^T - I/3)`` for a unit director ``d``."""
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    if d.shape[-1] != 3:
        raise InvalidInputError("director must be a 3-vector")
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > tol):
        raise InvalidInputError("director must have unit length")
    dd = d[..., :, None] * d[..., None, :]
    return s[..., None, None] * (dd - I3 / 3.0)


def to_coeffs(Q):
    """Coefficients of ``Q`` in :data:`BASIS`; shape ``(..., 5)``."""
    return np.einsum("...ij,aij->...a", Q, BASIS)


def from_coeffs(q):
    """Inverse of :func:`to_coeffs`; ``q`` has trailing axis 5."""
    return np.einsum("...a,aij->...ij", q, BASIS)


def to_sym6(M):
    """Upper-triangle storage ``(xx, xy, xz, yy, yz, zz)``."""
    return np.asarray(M)[..., _UPPER[0], _UPPER[1]]


def from_sym6(v):
    v = np.asarray(v, dtype=float)
    M = np.zeros(v.shape[:-1] + (3, 3))
    M[..., _UPPER[0], _UPPER[1]] = v
    M[..., _UPPER[1], _UPPER[0]] = v
    return M


def random_rotation(rng, size=None):
    """Haar-distributed rotation matrices via QR of a Gaussian matrix."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    A = rng.standard_normal(shape + (3, 3))
    q, r = np.linalg.qr(A)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    flip = np.linalg.det(q) < 0
    q[flip, :, 0] *= -1
    return q


def random_qtensor(rng, size=None, scale=1.0):
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    return from_coeffs(scale * rng.standard_normal(shape + (5,)))
