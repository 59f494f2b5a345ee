"""Algebraic cancellations behind the energy laws.

Both checks rest on the antisymmetry of the stress ``sigma = Q H - H Q``
with ``H = L lap Q - f_bulk(Q)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import SpectralGrid, qcoef, qmat
from ..solver import _bulk_field, _velocity_matrix


def molecular_field(q, spec, grid: SpectralGrid, L=1.0, dealias=True):
    """``H = L lap Q - f_bulk(Q)`` as a ``(..., 3, 3)`` field."""
    qh = grid.fft(np.asarray(q, dtype=float))
    if dealias:
        qh = grid.dealias(qh)
    Qm = qmat(grid.ifft(qh))
    _, f, _ = _bulk_field(grid, Qm, spec, None)
    fh = grid.fft(qcoef(f))
    if dealias:
        fh = grid.dealias(fh)
    return Qm, qmat(grid.ifft(L * grid.lap_hat(qh) - fh))


def div2_cancellation_residual(q1, q2, spec, grid: SpectralGrid, L=1.0, dealias=True):
    """``max|div div sigma| / max|sigma|`` for ``sigma = Q1 H2 - H2 Q1``.

    Only the spatial ``d x d`` block enters the double divergence. Returns 0
    when the stress vanishes identically.
    """
    d = grid.dim
    Q1 = qmat(grid.filt(q1) if dealias else np.asarray(q1, dtype=float))
    _, H2 = molecular_field(q2, spec, grid, L, dealias)
    sig = (Q1 @ H2 - H2 @ Q1)[..., :d, :d]
    sig = np.moveaxis(sig, (-2, -1), (0, 1))
    sh = grid.fft(sig)
    if dealias:
        sh = grid.dealias(sh)
    dd = -sum(grid.k[a] * grid.k[b] * sh[a, b] for a in range(d) for b in range(d))
    scale = float(np.abs(sig).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(grid.ifft(dd)).max() / scale)


@dataclass(frozen=True)
class CorotationalTerms:
    """Integrals entering the corotational cancellation.

    ``term1 = int (Q W - W Q):H phi`` and ``term2 = int sigma_ab d_a u_b phi``
    cancel pointwise. ``divergence_sum`` replaces ``term2`` by its integrated
    form ``-int d_a sigma_ab u_b phi``; it must equal ``correction =
    int sigma_ab u_b d_a phi``, which vanishes for constant ``phi``.
    """

    term1: float
    term2: float
    divergence_sum: float
    correction: float

    @property
    def relative(self):
        scale = max(abs(self.term1), abs(self.term2))
        return 0.0 if scale == 0.0 else abs(self.term1 + self.term2) / scale


def corotational_terms(u, q, spec, grid: SpectralGrid, phi=None, L=1.0) -> CorotationalTerms:
    d = grid.dim
    u = grid.filt(np.asarray(u, dtype=float))
    Qm, Hm = molecular_field(q, spec, grid, L)
    gu = grid.ifft(grid.grad_hat(grid.fft(u)))
    G = _velocity_matrix(gu, d)                  # G[..., a, b] = d_b u_a
    W = 0.5 * (G - np.swapaxes(G, -1, -2))
    sig = Qm @ Hm - Hm @ Qm
    phi = np.ones(grid.shape) if phi is None else np.asarray(phi, dtype=float)
    I = grid.integrate
    t1 = float(I(np.einsum("...ij,...ij->...", Qm @ W - W @ Qm, Hm) * phi))
    # sigma_ab d_a u_b = sigma_ab G_ba
    t2 = float(I(np.einsum("...ab,...ba->...", sig, G) * phi))
    s = np.moveaxis(sig[..., :d, :d], (-2, -1), (0, 1))
    div_s = [grid.ifft(sum(1j * grid.k[a] * grid.fft(s[a, b]) for a in range(d)))
             for b in range(d)]
    t2_div = -float(I(sum(div_s[b] * u[b] for b in range(d)) * phi))
    gphi = grid.ifft(grid.grad_hat(grid.fft(phi)))
    corr = float(I(sum(s[a, b] * u[b] * gphi[a] for a in range(d) for b in range(d))))
    return CorotationalTerms(t1, t2, t1 + t2_div, corr)


def corotational_cancellation_residual(u, q, spec, grid: SpectralGrid, phi=None, L=1.0):
    """Relative size ``|term1 + term2| / max(|term1|, |term2|)``."""
    return corotational_terms(u, q, spec, grid, phi, L).relative
