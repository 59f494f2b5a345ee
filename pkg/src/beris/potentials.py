"""Bulk potentials: Landau-de Gennes and the Ball-Majumdar entropy.

The Ball-Majumdar entropy ``G(Q)`` is evaluated through its convex dual

    G(Q) = sup_B  B:Q - log Z(B),     Z(B) = int_{S^2} exp(B:pp) dsigma(p),

and the Moreau envelope ``G^m(Q) = inf_A m|A - Q|^2 + G(A)`` through

    G^m(Q) = sup_B  B:Q - log Z(B) - |B|^2 / (4m).

Both problems are isotropic, so they are solved in the eigenframe of ``Q``
where ``B`` is diagonal and has two free coordinates. The envelope maximiser
``B`` is the gradient of ``G^m`` and the proximal point is
``A* = Q - B/(2m)``. The Bingham solve is the limit ``1/m = 0``.

All functions accept batches of tensors with trailing shape ``(3, 3)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import quadrature, tensor
from .errors import (
    ConditionViolatedError,
    ConvergenceError,
    DomainError,
    InvalidInputError,
    WrongVariantError,
)

LOG4PI = np.log(4.0 * np.pi)
G0 = LOG4PI

# orthonormal basis of the plane sum(beta) = 0 in eigenvalue space
_E = np.array([[1.0, -1.0, 0.0], [-1.0, -1.0, 2.0]]).T / np.array([np.sqrt(2.0), np.sqrt(6.0)])


# ---------------------------------------------------------------------------
# potential parameter sets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LdG:
    """Landau-de Gennes quartic ``a/2 trQ^2 - b/3 trQ^3 + c/4 (trQ^2)^2``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInputError(f"LdG parameter {name} must be positive, got {v}")

    @property
    def variant(self):
        return "ldg"


@dataclass(frozen=True)
class BM:
    """Ball-Majumdar potential ``nu G^m(Q) - kappa/2 |Q|^2``.

    ``m`` is the Moreau regularisation parameter; ``quad_degree`` and
    ``quad_kind`` select the spherical rule used for ``Z``.
    """

    nu: float
    kappa: float
    m: float = 100.0
    quad_degree: int = 35
    quad_kind: str = "lebedev"
    newton_tol: float = 1e-10
    newton_max_iter: int = 60

    def __post_init__(self):
        for name in ("nu", "kappa", "m", "newton_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInputError(f"BM parameter {name} must be positive, got {v}")
        if self.newton_max_iter < 1:
            raise InvalidInputError("newton_max_iter must be >= 1")
        quadrature.sphere_rule(self.quad_degree, self.quad_kind)

    @property
    def variant(self):
        return "bm"

    @property
    def rule(self):
        return quadrature.folded_squares(self.quad_degree, self.quad_kind)


PotentialSpec = Union[LdG, BM]


@dataclass
class BinghamSolution:
    B: np.ndarray
    logZ: np.ndarray
    moment_residual: np.ndarray
    iterations: np.ndarray
    dual: np.ndarray = field(repr=False, default=None)


@dataclass
class MoreauResult:
    value: np.ndarray
    prox: np.ndarray
    gradient: np.ndarray
    iterations: np.ndarray
    dual: np.ndarray = field(repr=False, default=None)
    residual: np.ndarray = field(repr=False, default=None)
    prox_margin: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# Landau-de Gennes
# ---------------------------------------------------------------------------
def _require(spec, cls):
    if not isinstance(spec, cls):
        raise WrongVariantError(f"expected {cls.__name__} spec, got {type(spec).__name__}")


def ldg_hat(Q, spec: LdG):
    _require(spec, LdG)
    tr2, tr3, _ = tensor.invariants(Q)
    return 0.5 * spec.a * tr2 - spec.b / 3.0 * tr3 + 0.25 * spec.c * tr2**2


def ldg_uniaxial(s, spec: LdG):
    """``F_hat`` along ``s (dd - I/3)``: ``a s^2/3 - 2 b s^3/27 + c s^4/9``."""
    s = np.asarray(s, dtype=float)
    return spec.a * s**2 / 3.0 - 2.0 * spec.b * s**3 / 27.0 + spec.c * s**4 / 9.0


def ldg_min(spec: LdG, fallback=False):
    """Return ``(s_plus, min_value)``.

    Raises ``ConditionViolatedError`` when ``a >= b^2/(27c)`` unless
    ``fallback`` is set, in which case the minimum over the real critical
    points of the uniaxial profile and ``s = 0`` is returned.
    """
    _require(spec, LdG)
    a, b, c = spec.a, spec.b, spec.c
    if a < b * b / (27.0 * c):
        s_plus = (b + np.sqrt(b * b - 24.0 * a * c)) / (4.0 * c)
        return s_plus, min(float(ldg_uniaxial(s_plus, spec)), 0.0)
    if not fallback:
        raise ConditionViolatedError(f"closed-form minimiser requires a < b^2/(27c) = {b*b/(27*c):.6g}")
    cands = [0.0]
    disc = b * b - 24.0 * a * c
    if disc >= 0:
        cands += [(b + np.sqrt(disc)) / (4 * c), (b - np.sqrt(disc)) / (4 * c)]
    vals = [float(ldg_uniaxial(s, spec)) for s in cands]
    k = int(np.argmin(vals))
    return cands[k], vals[k]


def ldg_shift(spec: LdG):
    return ldg_min(spec, fallback=True)[1]


def f_ldg(Q, spec: LdG):
    _require(spec, LdG)
    Q = np.asarray(Q, dtype=float)
    tr2 = tensor.ddot(Q, Q)[..., None, None]
    Q2 = Q @ Q
    out = spec.a * Q - spec.b * (Q2 - tr2 / 3.0 * tensor.I3) + spec.c * tr2 * Q
    return tensor.retrace(out)


# ---------------------------------------------------------------------------
# eigenframe dual solve
# ---------------------------------------------------------------------------
def _eig(Q):
    Q = tensor.retrace(np.asarray(Q, dtype=float))
    lam, R = np.linalg.eigh(Q)
    # exact zero trace in the frame
    lam = lam - lam.mean(axis=-1, keepdims=True)
    return lam, R


def physicality_margin(Q):
    """``min(lambda_min + 1/3, 2/3 - lambda_max)``."""
    lam = tensor.eigenvalues(Q)
    return np.minimum(lam[..., 0] + 1.0 / 3.0, 2.0 / 3.0 - lam[..., 2])


def _margin_of(lam):
    return np.minimum(lam[..., 0] + 1.0 / 3.0, 2.0 / 3.0 - lam[..., 2])


class _Moments:
    """Log-partition function and its first two derivatives on a folded rule."""

    def __init__(self, squares, weights):
        self.S = squares            # (K, 3)
        self.SE = squares @ _E      # (K, 2)
        self.w = weights
        se = self.SE
        # columns: s (3), s_E (2), s_E s_E^T packed (3)
        self.cols = np.column_stack([squares, se, se[:, 0] ** 2, se[:, 0] * se[:, 1], se[:, 1] ** 2])

    def log_z(self, c):
        x = c @ self.SE.T
        xm = x.max(axis=-1, keepdims=True)
        e = np.exp(x - xm)
        return np.log(e @ self.w) + xm[..., 0]

    def all(self, c):
        """Return ``logZ``, ``mean(s)`` (N, 3) and the covariance in E coordinates (N, 2, 2)."""
        x = c @ self.SE.T
        xm = x.max(axis=-1, keepdims=True)
        e = np.exp(x - xm) * self.w
        z = e.sum(axis=-1)
        M = (e @ self.cols) / z[:, None]
        mean, mE = M[:, :3], M[:, 3:5]
        cov = np.empty((len(c), 2, 2))
        cov[:, 0, 0] = M[:, 5] - mE[:, 0] ** 2
        cov[:, 0, 1] = cov[:, 1, 0] = M[:, 6] - mE[:, 0] * mE[:, 1]
        cov[:, 1, 1] = M[:, 7] - mE[:, 1] ** 2
        return np.log(z) + xm[:, 0], mean, cov

    def mean(self, c):
        return self.all(c)[1]


def _simplex_project(lam, margin):
    """Euclidean projection of ``lam`` onto ``{mu >= -1/3 + margin, sum mu = 0}``."""
    lo = -1.0 / 3.0 + margin
    v = lam - lo
    total = 1.0 - 3.0 * margin
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - total
    idx = np.arange(1, 4)
    cond = u - css / idx > 0
    rho = cond.sum(axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(v - theta, 0.0) + lo


def _quad(inv2m, c):
    return 0.5 * inv2m * (c * c).sum(-1) if inv2m > 0 else 0.0


def _newton(mom, lamE, inv2m, c, tol, max_iter):
    with np.errstate(over="ignore", invalid="ignore"):
        return _newton_impl(mom, lamE, inv2m, c, tol, max_iter)


def _newton_impl(mom, lamE, inv2m, c, tol, max_iter):
    """Damped Newton for ``min_c logZ(c) + inv2m |c|^2/2 - c.lamE`` on all rows.

    Returns ``c, logZ, residual, iterations, converged``.
    """
    n = len(c)
    iters = np.zeros(n, dtype=int)
    done = np.zeros(n, dtype=bool)
    res = np.full(n, np.inf)
    logz = np.zeros(n)
    act = np.arange(n)
    lz, mean, cov = mom.all(c)
    for it in range(max_iter + 1):
        ca, la = c[act], lamE[act]
        lz_a, mean_a, cov_a = lz, mean, cov
        r = mean_a @ _E - la + inv2m * ca
        rn = np.sqrt((r * r).sum(axis=-1))
        res[act] = rn
        logz[act] = lz_a
        conv = rn <= tol
        if it == max_iter or conv.all():
            done[act[conv]] = True
            break
        nc = ~conv
        done[act[conv]] = True
        act, ca, la, r = act[nc], ca[nc], la[nc], r[nc]
        cov_a, lz_a = cov_a[nc], lz_a[nc]
        iters[act] += 1
        J = cov_a + inv2m * np.eye(2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] ** 2
        det = np.where(det > 1e-300, det, 1e-300)
        step = -np.stack(
            [J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1],
             -J[:, 0, 1] * r[:, 0] + J[:, 0, 0] * r[:, 1]], axis=-1) / det[:, None]
        psi0 = lz_a + _quad(inv2m, ca) - (ca * la).sum(-1)
        slope = (r * step).sum(-1)
        t = np.ones(len(act))
        pending = np.ones(len(act), dtype=bool)
        cn = ca + step
        lz_n = np.empty(len(act))
        mean_n = np.empty((len(act), 3))
        cov_n = np.empty((len(act), 2, 2))
        for _ in range(31):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            trial = ca[idx] + t[idx, None] * step[idx]
            lzt, mt, ct = mom.all(trial)
            psit = lzt + _quad(inv2m, trial) - (trial * la[idx]).sum(-1)
            rt = mt @ _E - la[idx] + inv2m * trial
            ok = (psit <= psi0[idx] + 1e-4 * t[idx] * slope[idx]) | (
                (rt * rt).sum(-1) < 0.25 * (r[idx] * r[idx]).sum(-1))
            # after 30 halvings take the last trial regardless
            ok |= t[idx] < 2.0**-29
            j = idx[ok]
            cn[j], lz_n[j], mean_n[j], cov_n[j] = trial[ok], lzt[ok], mt[ok], ct[ok]
            pending[j] = False
            t[idx[~ok]] *= 0.5
        c[act] = cn
        lz, mean, cov = lz_n, mean_n, cov_n
    return c, logz, res, iters, done


def _dual_solve(lam, inv2m, spec: BM, warm=None):
    """Solve the eigenframe dual problem for ascending eigenvalues ``lam (N,3)``."""
    mom = _Moments(*spec.rule)
    lamE = lam @ _E
    n = len(lam)
    if warm is not None:
        c = np.array(warm, dtype=float).reshape(n, 2)
    else:
        c = np.zeros((n, 2))
        if inv2m > 0:
            # outside (or near the edge of) D start from the projected point
            far = _margin_of(lam) < 0.02
            if far.any():
                A0 = _simplex_project(lam[far], 0.02)
                c[far] = ((lam[far] - A0) / inv2m) @ _E
    c, logz, res, iters, ok = _newton(mom, lamE, inv2m, c, spec.newton_tol, spec.newton_max_iter)
    if not ok.all():
        bad = np.nonzero(~ok)[0]
        cb = np.zeros((len(bad), 2))
        conv_all = np.ones(len(bad), dtype=bool)
        extra = np.zeros(len(bad), dtype=int)
        for s in np.linspace(0.125, 1.0, 8):
            tgt = s * lamE[bad]
            cb, lzb, rb, ib, okb = _newton(mom, tgt, inv2m, cb, spec.newton_tol, spec.newton_max_iter)
            extra += ib
            conv_all = okb
        c[bad], logz[bad], res[bad], iters[bad] = cb, lzb, rb, iters[bad] + extra
        ok[bad] = conv_all
    if not ok.all():
        k = int(np.argmax(np.where(ok, -np.inf, res)))
        err = ConvergenceError(
            f"dual Newton solve failed at {int((~ok).sum())} point(s); worst residual "
            f"{res[k]:.3e} at flat index {k}", residual=float(res[k]), iterations=int(iters[k]))
        err.index = k
        raise err
    return c, logz, res, iters


def _flatten(Q):
    Q = np.asarray(Q, dtype=float)
    if Q.shape[-2:] != (3, 3):
        raise InvalidInputError(f"Q must have trailing shape (3, 3), got {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise InvalidInputError("Q has non-finite entries")
    return Q.reshape(-1, 3, 3), Q.shape[:-2]


def _rotate_diag(beta, R):
    return np.einsum("...ik,...k,...jk->...ij", R, beta, R)


def solve_bingham(Q, spec: BM, warm=None, min_margin=1e-6):
    """Bingham dual variable ``B`` with ``<pp - I/3>_rho = Q``, ``rho = exp(B:pp)/Z``."""
    _require(spec, BM)
    Qf, shape = _flatten(Q)
    lam, R = _eig(Qf)
    marg = _margin_of(lam)
    if np.any(marg < min_margin):
        k = int(np.argmin(marg))
        raise DomainError(
            f"Q outside the physical domain or within {min_margin:g} of its boundary "
            f"(margin {marg[k]:.3e} at index {k})")
    c, logz, res, iters = _dual_solve(lam, 0.0, spec, warm)
    beta = c @ _E.T
    B = tensor.retrace(_rotate_diag(beta, R))
    return BinghamSolution(
        B.reshape(shape + (3, 3)), logz.reshape(shape), res.reshape(shape),
        iters.reshape(shape), c.reshape(shape + (2,)))


def g_bm(Q, spec: BM, warm=None):
    """Ball-Majumdar entropy ``B:Q - log Z``."""
    Qf, shape = _flatten(Q)
    sol = solve_bingham(Qf, spec, warm)
    val = tensor.ddot(sol.B, Qf) - sol.logZ
    return val.reshape(shape)


def grad_g_bm(Q, spec: BM, warm=None):
    """Tangent gradient of ``G_BM``; equal to the dual variable ``B``."""
    return solve_bingham(Q, spec, warm).B


def moreau(Q, m, spec: BM, warm=None, with_prox=True):
    """Moreau envelope ``inf_A m|A-Q|^2 + G_BM(A)``, its prox and gradient.

    The prox is the second moment of the optimal Bingham density, so it lies
    in the closed physical domain; ``prox_margin`` is its physicality margin
    computed from the moments without cancellation.
    """
    _require(spec, BM)
    if not (np.isfinite(m) and m > 0):
        raise InvalidInputError(f"m must be positive, got {m}")
    Qf, shape = _flatten(Q)
    lam, R = _eig(Qf)
    inv2m = 0.5 / m
    c, logz, res, iters = _dual_solve(lam, inv2m, spec, warm)
    beta = c @ _E.T
    lamE = lam @ _E
    value = (c * lamE).sum(-1) - logz - 0.5 * inv2m * (c * c).sum(-1)
    grad = tensor.retrace(_rotate_diag(beta, R))
    out = MoreauResult(value.reshape(shape), None, grad.reshape(shape + (3, 3)),
                       iters.reshape(shape), c.reshape(shape + (2,)))
    out.residual = res.reshape(shape)
    if with_prox:
        s = _Moments(*spec.rule).mean(c)
        prox = tensor.retrace(_rotate_diag(s - 1.0 / 3.0, R))
        out.prox = prox.reshape(shape + (3, 3))
        out.prox_margin = np.minimum(s[:, 0], s[:, 0] + s[:, 1]).reshape(shape)
    return out


# ---------------------------------------------------------------------------
# f_bulk and F_bulk
# ---------------------------------------------------------------------------
def bulk(Q, spec: PotentialSpec, warm=None):
    """Return ``(F_bulk(Q), f_bulk(Q), dual)`` in one pass.

    ``dual`` is the eigenframe dual coordinate array for BM (usable as a warm
    start on the next call) and ``None`` for LdG.
    """
    Q = np.asarray(Q, dtype=float)
    if isinstance(spec, LdG):
        return ldg_hat(Q, spec) - ldg_shift(spec), f_ldg(Q, spec), None
    if isinstance(spec, BM):
        r = moreau(Q, spec.m, spec, warm, with_prox=False)
        tr2 = tensor.ddot(Q, Q)
        value = spec.nu * r.value - 0.5 * spec.kappa * tr2
        grad = tensor.retrace(spec.nu * r.gradient - spec.kappa * Q)
        return value, grad, r.dual
    raise WrongVariantError(f"unknown potential spec {spec!r}")


def f_bulk(Q, spec: PotentialSpec, warm=None):
    return bulk(Q, spec, warm)[1]


def f_bulk_value(Q, spec: PotentialSpec, warm=None):
    return bulk(Q, spec, warm)[0]


def bulk_minimum(spec: PotentialSpec):
    """Value and a minimising tensor of ``F_bulk`` (uniaxial along ``e_3``)."""
    if isinstance(spec, LdG):
        s, v = ldg_min(spec, fallback=True)
        return float(ldg_hat(tensor.uniaxial(s, [0, 0, 1.0]), spec) - ldg_shift(spec)), tensor.uniaxial(s, [0, 0, 1.0])
    raise WrongVariantError("bulk_minimum is only tabulated for LdG")


# ---------------------------------------------------------------------------
# sampling helpers and tabulation
# ---------------------------------------------------------------------------
def random_interior_q(rng, size, margin=0.05):
    """Random tensors with ``physicality_margin >= margin`` (uniform eigenvalues)."""
    size = int(size)
    # uniform on the shrunk simplex, then random orientation
    e = rng.exponential(size=(size, 3))
    mu = e / e.sum(-1, keepdims=True)
    lam = (1.0 - 3.0 * margin) * mu + margin - 1.0 / 3.0
    R = tensor.random_rotation(rng, size)
    return tensor.retrace(_rotate_diag(lam, R))


def eigen_sample_plan(n_side=6, margin=0.02):
    """Ordered eigenvalue triples on a triangular lattice inside the shrunk simplex.

    Isotropy makes permuted triples redundant, so only ``l1 <= l2 <= l3`` is kept.
    """
    pts = []
    for i in range(n_side + 1):
        for j in range(i, n_side + 1 - i):
            k = n_side - i - j
            if k < j:
                continue
            mu = np.array([i, j, k], dtype=float) / n_side
            pts.append((1.0 - 3.0 * margin) * mu + margin - 1.0 / 3.0)
    return np.array(pts)


TABLE_COLUMNS = ("lambda1", "lambda2", "lambda3", "value", "grad_norm", "margin", "iterations", "status")


def potential_table(spec: PotentialSpec, eigs, m_sweep=()):
    """CSV text of potential values over eigenvalue triples ``eigs (N, 3)``.

    For BM, ``m_sweep`` adds columns ``env_m<m>`` with the envelope value and
    ``gap_m<m>`` with ``G_BM - G^m`` at each point. Per-row solver errors are
    recorded in the ``status`` column.
    """
    cols = list(TABLE_COLUMNS)
    if isinstance(spec, BM):
        for m in m_sweep:
            cols += [f"env_m{m:g}", f"gap_m{m:g}"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for lam in np.asarray(eigs, dtype=float):
        Q = np.diag(lam - lam.mean())
        row = [f"{x:.12g}" for x in np.sort(np.diag(Q))]
        marg = float(physicality_margin(Q))
        try:
            if isinstance(spec, LdG):
                val, grad, _ = bulk(Q, spec)
                its = 0
            else:
                r = moreau(Q, spec.m, spec)
                val = spec.nu * r.value - 0.5 * spec.kappa * tensor.ddot(Q, Q)
                grad = spec.nu * r.gradient - spec.kappa * Q
                its = int(r.iterations)
            extra = []
            if isinstance(spec, BM) and m_sweep:
                gbm = float(g_bm(Q, spec)) if marg > 1e-6 else np.inf
                for m in m_sweep:
                    env = float(moreau(Q, m, spec).value)
                    extra += [f"{env:.12g}", f"{gbm - env:.12g}"]
            row += [f"{float(val):.12g}", f"{float(tensor.frobenius(grad)):.12g}",
                    f"{marg:.12g}", str(its), "ok"] + extra
        except (ConvergenceError, DomainError) as exc:
            row += ["nan", "nan", f"{marg:.12g}", "0", type(exc).__name__]
            row += ["nan"] * (len(cols) - len(row))
        w.writerow(row)
    return buf.getvalue()
