"""Global energy and dissipation of a state, and the discrete energy balance."""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass

import numpy as np

from .. import potentials
from ..errors import InvalidInputError
from ..solver import SimConfig, SimState, Terms, evaluate

ENERGY_COLUMNS = ("t", "kinetic", "elastic", "bulk", "total", "diss_u", "diss_H")


@dataclass(frozen=True)
class EnergyRecord:
    t: float
    kinetic: float
    elastic: float
    bulk: float
    total: float
    diss_u: float
    diss_H: float

    @property
    def dissipation(self):
        return self.diss_u + self.diss_H


def _as_config(spec_or_cfg) -> SimConfig:
    if isinstance(spec_or_cfg, SimConfig):
        return spec_or_cfg
    if isinstance(spec_or_cfg, (potentials.LdG, potentials.BM)):
        return SimConfig(1.0, 0.0, spec_or_cfg)
    raise InvalidInputError("expected a PotentialSpec or SimConfig")


def record_from_terms(t, grid, terms: Terms, cfg: SimConfig) -> EnergyRecord:
    """Energies from a right-hand-side evaluation (no extra transforms)."""
    I = grid.integrate
    kin = 0.5 * float(I((terms.u**2).sum(0)))
    ela = 0.5 * cfg.L * float(I((terms.gq**2).sum((0, 1))))
    bul = float(I(terms.F))
    du = cfg.mu * float(I((terms.gu**2).sum((0, 1))))
    dH = cfg.Gamma * float(I((terms.H**2).sum(0)))
    return EnergyRecord(float(t), kin, ela, bul, kin + ela + bul, du, dH)


def energy(state: SimState, spec_or_cfg) -> EnergyRecord:
    """Energy record of ``state``; BM duals are solved from a cold start.

    The cold start makes the result a function of the fields alone, so the
    in-run record and a record recomputed from a snapshot coincide.
    """
    cfg = _as_config(spec_or_cfg)
    g = state.grid
    uh = g.dealias(g.fft(state.u))
    qh = g.dealias(g.fft(state.q))
    return record_from_terms(state.t, g, evaluate(g, uh, qh, cfg, None), cfg)


@dataclass(frozen=True)
class EnergyBalance:
    """Per-interval residuals ``r_n`` and the monotonicity verdict."""

    residuals: np.ndarray
    max_abs: float
    mean_abs: float
    increments: np.ndarray
    increases: tuple          # interval indices where E rose by more than ``tol``
    tol: float

    @property
    def nonincreasing(self):
        return not self.increases


def energy_balance_residual(records, tol=1e-9) -> EnergyBalance:
    """``r_n = (E_{n+1} - E_n)/dt_n + (D_n + D_{n+1})/2`` over consecutive records."""
    recs = list(records)
    if len(recs) < 2:
        raise InvalidInputError("need at least two energy records")
    t = np.array([r.t for r in recs])
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise InvalidInputError("record times must be strictly increasing")
    E = np.array([r.total for r in recs])
    D = np.array([r.dissipation for r in recs])
    dE = np.diff(E)
    res = dE / dt + 0.5 * (D[1:] + D[:-1])
    a = np.abs(res)
    ups = tuple(int(i) for i in np.nonzero(dE > tol)[0])
    return EnergyBalance(res, float(a.max()), float(a.mean()), dE, ups, float(tol))


def energy_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ENERGY_COLUMNS)
    for r in records:
        w.writerow([repr(float(v)) for v in astuple(r)])
    return buf.getvalue()


def read_energy_csv(text) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != ENERGY_COLUMNS:
        raise InvalidInputError("not an energy CSV")
    return [EnergyRecord(*map(float, r)) for r in rows[1:]]

