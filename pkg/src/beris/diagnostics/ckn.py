"""Scale-invariant space-time norms over parabolic cylinders.

For a centre ``z0 = (x0, t0)`` and radius ``r`` the cylinder is
``P_r = B_r(x0) x (t0 - r^2, t0]``. In dimension ``d``

    A(r) = sup_t r^(2-d) int_{B_r} |u|^2 + |grad Q|^2
    B(r) = r^(2-d) int_{P_r} |grad u|^2 + |grad^2 Q|^2
    C(r) = r^(1-d) int_{P_r} |u|^3 + |grad Q|^3
    D(r) = r^(1-d) int_{P_r} |P|^(3/2)
    Phi  = C + D^2

are invariant under ``u -> lam u(lam x, lam^2 t)``, ``Q -> Q(lam x, lam^2 t)``
(for ``d = 3`` the weights are ``1/r`` and ``1/r^2``). Balls are restricted
to grid nodes at periodic distance ``< r``; in time the ball integrals are
interpolated linearly between snapshots and integrated exactly, while the
supremum in ``A`` runs over the stored slices.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidInputError, ResolutionError
from ..grid import SpectralGrid
from ..solver import pressure_field

MIN_CELLS = 4
MIN_SLICES = 4
DENSITIES = ("a", "b", "b_lap", "c", "d")
CKN_COLUMNS = ("x0", "t0", "r", "A", "B", "B_lap", "C", "D", "Phi")


def grid_of(snapshot) -> SpectralGrid:
    u = np.asarray(snapshot.u)
    return SpectralGrid(u.shape[0], u.shape[-1])


def densities(u, q, grid: SpectralGrid, L=1.0):
    """Pointwise integrands of the CKN quantities for one snapshot."""
    d = grid.dim
    uh = grid.dealias(grid.fft(np.asarray(u, dtype=float)))
    qh = grid.dealias(grid.fft(np.asarray(q, dtype=float)))
    uu = grid.ifft(uh)
    gu = grid.ifft(grid.grad_hat(uh))
    gqh = grid.grad_hat(qh)
    gq = grid.ifft(gqh)
    hess = grid.ifft(np.stack([1j * grid.k[a] * gqh for a in range(d)]))
    lap = grid.ifft(grid.lap_hat(qh))
    u2 = (uu**2).sum(0)
    g2 = (gq**2).sum((0, 1))
    P = pressure_field(uu, grid.ifft(qh), grid, L)
    return {
        "a": u2 + g2,
        "b": (gu**2).sum((0, 1)) + (hess**2).sum((0, 1, 2)),
        "b_lap": (gu**2).sum((0, 1)) + (lap**2).sum(0),
        "c": u2**1.5 + g2**1.5,
        "d": np.abs(P) ** 1.5,
    }


def ball_mask(grid: SpectralGrid, x0, r):
    """Grid nodes at periodic distance ``< r`` from ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (grid.dim,):
        raise InvalidInputError(f"centre must have {grid.dim} coordinates")
    r2 = np.zeros(grid.shape)
    for X, c in zip(grid.coords, x0):
        dx = np.abs(X - c) % (2 * np.pi)
        dx = np.minimum(dx, 2 * np.pi - dx)
        r2 = r2 + dx * dx
    return r2 < r * r


def _interp_integral(ts, gs, a, b):
    """Exact integral over ``[a, b]`` of the piecewise-linear interpolant."""
    grid_t = np.concatenate([[a], ts[(ts > a) & (ts < b)], [b]])
    vals = np.interp(grid_t, ts, gs)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid_t)))


@dataclass
class CknReport:
    """CKN quantities at one centre for strictly decreasing radii."""

    x0: list
    t0: float
    radii: list
    A: list
    B: list
    B_lap: list
    C: list
    D: list
    Phi: list
    slope_C: Optional[float]
    slope_Phi: Optional[float]
    eps0: Optional[float] = None
    flag: Optional[bool] = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, allow_nan=False)

    def rows(self):
        for i, r in enumerate(self.radii):
            yield (list(self.x0), self.t0, r, self.A[i], self.B[i], self.B_lap[i],
                   self.C[i], self.D[i], self.Phi[i])


def fitted_slope(radii, values):
    """Least-squares slope of ``log value`` against ``log r`` (positive values only)."""
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


class Trajectory:
    """Snapshots with lazily computed, cached CKN densities."""

    def __init__(self, snapshots, L=1.0):
        self.snaps = sorted(snapshots, key=lambda s: s.t)
        if not self.snaps:
            raise InvalidInputError("empty trajectory")
        self.times = np.array([s.t for s in self.snaps], dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("snapshot times must be strictly increasing")
        self.grid = grid_of(self.snaps[0])
        self.L = L
        self._dens = [None] * len(self.snaps)

    def dens(self, j):
        if self._dens[j] is None:
            s = self.snaps[j]
            self._dens[j] = densities(s.u, s.q, self.grid, self.L)
        return self._dens[j]

    def smallest_radius(self, t0):
        """Smallest radius meeting the space and time resolution rules at ``t0``."""
        before = self.times[self.times <= t0]
        r_space = MIN_CELLS * self.grid.h
        if len(before) < MIN_SLICES:
            return np.inf
        return max(r_space, float(np.sqrt(t0 - before[-MIN_SLICES])) * (1 + 1e-12))


def _as_traj(trajectory, L):
    return trajectory if isinstance(trajectory, Trajectory) else Trajectory(trajectory, L)


def ckn_quantities(trajectory, x0, t0, radii, L=1.0, eps0=None) -> CknReport:
    """Evaluate ``A, B, C, D, Phi`` at ``(x0, t0)`` for each radius.

    Raises
    ------
    ResolutionError
        A cylinder spans fewer than 4 cells or 4 stored slices; the error
        carries the smallest admissible radius.
    InvalidInputError
        Radii not strictly decreasing, or a cylinder leaves the recorded window.
    """
    tr = _as_traj(trajectory, L)
    g = tr.grid
    d = g.dim
    radii = [float(r) for r in radii]
    if not radii or any(b >= a for a, b in zip(radii, radii[1:])) or radii[-1] <= 0:
        raise InvalidInputError("radii must be positive and strictly decreasing")
    t0 = float(t0)
    ts = tr.times
    if t0 > ts[-1] + 1e-12:
        raise InvalidInputError(f"t0 = {t0} lies beyond the last snapshot {ts[-1]}")
    if radii[0] >= np.pi:
        raise InvalidInputError("radius must be below pi on the 2 pi torus")
    rmin = tr.smallest_radius(t0)
    out = {k: [] for k in ("A", "B", "B_lap", "C", "D")}
    for r in radii:
        if t0 - r * r < ts[0] - 1e-12:
            raise InvalidInputError(f"cylinder of radius {r} starts before the first snapshot")
        n_slices = int(np.sum((ts > t0 - r * r) & (ts <= t0)))
        if r < MIN_CELLS * g.h or n_slices < MIN_SLICES:
            raise ResolutionError(
                f"radius {r:.4g} is under-resolved ({r / g.h:.2f} cells, {n_slices} slices); "
                f"smallest admissible radius is {rmin:.4g}", smallest_radius=rmin)
        ball = ball_mask(g, x0, r)
        lo = t0 - r * r
        j_lo = max(int(np.searchsorted(ts, lo, side="right")) - 1, 0)
        j_hi = min(int(np.searchsorted(ts, t0, side="left")), len(ts) - 1)
        idx = np.arange(j_lo, j_hi + 1)
        sub_t = ts[idx]
        ints = {k: np.array([float(tr.dens(j)[k][ball].sum() * g.cell) for j in idx])
                for k in DENSITIES}
        in_cyl = (sub_t > lo) & (sub_t <= t0)
        w2, w1 = r ** (2 - d), r ** (1 - d)
        out["A"].append(w2 * float(ints["a"][in_cyl].max()))
        out["B"].append(w2 * _interp_integral(sub_t, ints["b"], lo, t0))
        out["B_lap"].append(w2 * _interp_integral(sub_t, ints["b_lap"], lo, t0))
        out["C"].append(w1 * _interp_integral(sub_t, ints["c"], lo, t0))
        out["D"].append(w1 * _interp_integral(sub_t, ints["d"], lo, t0))
    Phi = [c + dd * dd for c, dd in zip(out["C"], out["D"])]
    flag = None if eps0 is None else bool(Phi[-1] > eps0**3)
    return CknReport(list(map(float, np.asarray(x0, dtype=float))), t0, radii, out["A"],
                     out["B"], out["B_lap"], out["C"], out["D"], Phi,
                     fitted_slope(radii, out["C"]), fitted_slope(radii, Phi), eps0, flag)


@dataclass(frozen=True)
class ScalingEntry:
    """Observed constants for one pair ``r < rho``; ``None`` when the majorant is 0."""

    r: float
    rho: float
    ratio_C: Optional[float]
    ratio_D: Optional[float]


def _ratio(num, den):
    return None if den == 0 else float(num / den)


def ckn_scaling_check(report_fine: CknReport, report_coarse: Optional[CknReport] = None):
    """Ratios of ``C(r)``, ``D(r)`` to their interpolation majorants at ``rho > r``.

    With one report every pair of its radii is used; with two, ``r`` runs over
    the first report and ``rho`` over the second.
    """
    coarse = report_fine if report_coarse is None else report_coarse
    out = []
    for i, r in enumerate(report_fine.radii):
        for j, rho in enumerate(coarse.radii):
            if not r < rho:
                continue
            A, B, D = coarse.A[j], coarse.B[j], coarse.D[j]
            ab = A**0.75 * B**0.75
            mC = (r / rho) ** 3 * A**1.5 + (rho / r) ** 3 * ab
            mD = (r / rho) * D + (rho / r) ** 2 * ab
            out.append(ScalingEntry(r, rho, _ratio(report_fine.C[i], mC),
                                    _ratio(report_fine.D[i], mD)))
    return out


@dataclass
class ScanResult:
    x0: list
    t0: float
    r_min: float
    Phi: float
    B: float
    slope_Phi: Optional[float]
    flagged: bool
    reasons: list = field(default_factory=list)


def singularity_scan(trajectory, eps0, eps1, centers, radii, L=1.0):
    """Flag centres where ``Phi(r_min) > eps0^3`` or ``B(r_min) > eps1^2``.

    ``centers`` holds ``(x0, t0)`` pairs. Returns the per-centre results and
    the reports they were derived from.
    """
    if eps0 < 0 or eps1 < 0:
        raise InvalidInputError("thresholds must be nonnegative")
    tr = _as_traj(trajectory, L)
    results, reports = [], []
    for x0, t0 in centers:
        rep = ckn_quantities(tr, x0, t0, radii, L, eps0)
        reasons = []
        if rep.Phi[-1] > eps0**3:
            reasons.append("Phi")
        if rep.B[-1] > eps1**2:
            reasons.append("B")
        results.append(ScanResult(rep.x0, rep.t0, rep.radii[-1], rep.Phi[-1], rep.B[-1],
                                  rep.slope_Phi, bool(reasons), reasons))
        reports.append(rep)
    return results, reports
