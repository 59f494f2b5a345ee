"""Localised energy balance for smooth trajectories.

With ``e = |u|^2 + |grad Q|^2``, ``sigma = Q H - H Q``, ``H = lap Q - f(Q)``
and a test function ``phi`` vanishing at the initial time, smooth solutions
(unit multipliers) satisfy

    int e phi(T) + 2 int int (|grad u|^2 + |lap Q|^2) phi = T1 + ... + T7

    T1 = int int e (phi_t + lap phi)
    T2 = int int (|u|^2 + 2 P) u . grad phi
    T3 = 2 int int (d_a Q : d_b Q) u_b d_a phi
    T4 = 2 int int (d_a Q : d_b Q - |grad Q|^2 delta_ab) d_a d_b phi
    T5 = -2 int int sigma_ab u_a d_b phi
    T6 = -2 int int (W Q - Q W) : d_a Q d_a phi
    T7 = -2 int int d_a f(Q) : d_a Q phi

where ``P`` is the zero-mean pressure and ``W`` the vorticity tensor. The
corotational and advective contributions cancel pointwise before this form
is reached. Time integrals use the trapezoid rule over the supplied slices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import potentials
from ..errors import ConfigurationError, InvalidInputError, InvalidTestFunctionError
from ..grid import SpectralGrid, qcoef, qmat
from ..solver import _velocity_matrix, pressure_field

TERMS = ("T1", "T2", "T3", "T4", "T5", "T6", "T7")
LEI_COLUMNS = ("lhs_terminal", "lhs_dissipation", "lhs", *TERMS, "rhs", "residual")


def _psi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _smoothstep(s):
    """C-infinity step from 0 (s <= 0) to 1 (s >= 1) and its derivative."""
    s = np.asarray(s, dtype=float)
    a, b = _psi(s), _psi(1.0 - s)
    den = a + b
    da = np.where(s > 0, a / np.where(s > 0, s, 1.0) ** 2, 0.0)
    db = np.where(s < 1, b / np.where(s < 1, 1.0 - s, 1.0) ** 2, 0.0)
    return a / den, (da * b + a * db) / den**2


@dataclass(frozen=True)
class Bump:
    """``phi(x, t) = b(|x - x0| / R) S((t - t_on) / (t_full - t_on))``.

    ``b(rho) = exp(1 - 1/(1 - rho^2))`` on ``rho < 1`` (so ``b(0) = 1``) and
    ``S`` a smooth step; ``phi`` vanishes for ``t <= t_on``.
    """

    center: tuple
    radius: float
    t_on: float
    t_full: float

    def __post_init__(self):
        if not 0 < self.radius < np.pi:
            raise InvalidTestFunctionError(
                f"bump radius {self.radius} must lie in (0, pi) to fit in the torus")
        if not self.t_full > self.t_on:
            raise InvalidTestFunctionError("t_full must exceed t_on")

    def space(self, grid: SpectralGrid):
        if len(self.center) != grid.dim:
            raise InvalidTestFunctionError(f"bump centre needs {grid.dim} coordinates")
        r2 = np.zeros(grid.shape)
        for X, c in zip(grid.coords, self.center):
            dx = np.abs(X - c) % (2 * np.pi)
            dx = np.minimum(dx, 2 * np.pi - dx)
            r2 = r2 + dx * dx
        return np.e * _psi(1.0 - r2 / self.radius**2)

    def time(self, t):
        s, ds = _smoothstep((t - self.t_on) / (self.t_full - self.t_on))
        return float(s), float(ds) / (self.t_full - self.t_on)


@dataclass
class LeiReport:
    bump: dict
    lhs: float
    rhs: float
    residual: float
    lhs_terminal: float
    lhs_dissipation: float
    terms: dict

    def row(self):
        return (self.lhs_terminal, self.lhs_dissipation, self.lhs,
                *(self.terms[k] for k in TERMS), self.rhs, self.residual)


class LocalEnergyAccumulator:
    """Feed snapshots in time order with :meth:`add`; :meth:`report` integrates."""

    def __init__(self, grid: SpectralGrid, bump: Bump, spec, L=1.0, Gamma=1.0, mu=1.0):
        if (L, Gamma, mu) != (1.0, 1.0, 1.0):
            raise ConfigurationError("the local energy balance is implemented for unit "
                                     "L, Gamma and mu")
        self.grid, self.bump, self.spec = grid, bump, spec
        b = bump.space(grid)
        bh = grid.fft(b)
        self._b = b
        self._gb = grid.ifft(grid.grad_hat(bh))
        d = grid.dim
        self._hb = np.stack([grid.ifft(1j * grid.k[a] * grid.grad_hat(bh)) for a in range(d)])
        self._lb = grid.ifft(grid.lap_hat(bh))
        self.times, self.rows, self._terminal = [], [], None

    def _integrands(self, t, u, q):
        g = self.grid
        d = g.dim
        I = g.integrate
        uh = g.dealias(g.fft(np.asarray(u, dtype=float)))
        qh = g.dealias(g.fft(np.asarray(q, dtype=float)))
        u = g.ifft(uh)
        q = g.ifft(qh)
        gu = g.ifft(g.grad_hat(uh))
        gq = g.ifft(g.grad_hat(qh))
        lq = g.ifft(g.lap_hat(qh))
        Qm = qmat(q)
        _, f, _ = potentials.bulk(Qm, self.spec)
        fc = qcoef(f)
        gf = g.ifft(g.grad_hat(g.fft(fc)))
        Hm = qmat(lq - fc)
        sig = Qm @ Hm - Hm @ Qm
        G = _velocity_matrix(gu, d)
        W = 0.5 * (G - np.swapaxes(G, -1, -2))
        corot = qcoef(W @ Qm - Qm @ W)
        P = pressure_field(u, q, g)
        s, ds = self.bump.time(t)
        b, gb, hb, lb = self._b, self._gb, self._hb, self._lb
        u2 = (u**2).sum(0)
        gg = np.einsum("aq...,bq...->ab...", gq, gq)
        g2 = sum(gg[a, a] for a in range(d))
        e = u2 + g2
        vals = {
            "T1": I(e * (ds * b + s * lb)),
            "T2": s * I((u2 + 2 * P) * sum(u[a] * gb[a] for a in range(d))),
            "T3": 2 * s * I(sum(gg[a, c] * u[c] * gb[a] for a in range(d) for c in range(d))),
            "T4": 2 * s * I(sum((gg[a, c] - (g2 if a == c else 0.0)) * hb[a, c]
                                for a in range(d) for c in range(d))),
            "T5": -2 * s * I(sum(sig[..., a, c] * u[a] * gb[c] for a in range(d) for c in range(d))),
            "T6": -2 * s * I(sum((corot * gq[a]).sum(0) * gb[a] for a in range(d))),
            "T7": -2 * s * I((gf * gq).sum((0, 1)) * b),
        }
        diss = 2 * s * I(((gu**2).sum((0, 1)) + (lq**2).sum(0)) * b)
        return {k: float(v) for k, v in vals.items()}, float(diss), float(s * I(e * b))

    def add(self, t, u, q):
        t = float(t)
        if self.times and not t > self.times[-1]:
            raise InvalidInputError("snapshot times must be strictly increasing")
        if not self.times:
            s, _ = self.bump.time(t)
            if s != 0.0 or t > self.bump.t_on:
                raise InvalidTestFunctionError(
                    f"test function must vanish at the first slice (t = {t:.6g}); "
                    f"choose t_on >= {t:.6g}")
        vals, diss, term = self._integrands(t, u, q)
        self.times.append(t)
        self.rows.append((vals, diss))
        self._terminal = term

    def report(self) -> LeiReport:
        if len(self.times) < 2:
            raise InvalidInputError("need at least two slices")
        w = np.zeros(len(self.times))
        dt = np.diff(self.times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        terms = {k: float(sum(wj * r[0][k] for wj, r in zip(w, self.rows))) for k in TERMS}
        diss = float(sum(wj * r[1] for wj, r in zip(w, self.rows)))
        rhs = float(sum(terms[k] for k in TERMS))
        lhs = self._terminal + diss
        return LeiReport(asdict(self.bump), lhs, rhs, rhs - lhs, self._terminal, diss, terms)


def local_energy_residual(trajectory, bump: Bump, spec, L=1.0, Gamma=1.0, mu=1.0) -> LeiReport:
    """Signed residual ``rhs - lhs`` of the localised energy balance on a trajectory."""
    snaps = list(trajectory)
    if not snaps:
        raise InvalidInputError("empty trajectory")
    u0 = np.asarray(snaps[0].u)
    acc = LocalEnergyAccumulator(SpectralGrid(u0.shape[0], u0.shape[-1]), bump, spec, L, Gamma, mu)
    for s in snaps:
        acc.add(s.t, s.u, s.q)
    return acc.report()
