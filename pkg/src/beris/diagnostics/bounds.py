"""Maximum-principle bound for LdG and entropy monitoring for BM runs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .. import potentials
from ..errors import WrongVariantError
from ..grid import qmat

MAXPRINCIPLE_COLUMNS = ("t", "max_abs_q", "bound", "excess")
BM_MONITOR_COLUMNS = ("t", "max_G", "min_margin", "scaled_max_G", "violations")
# the Bingham dual is not attempted closer to the boundary than this
SOLVABLE_MARGIN = 1e-6


def max_abs_q(q):
    """Pointwise Frobenius maximum ``max |Q|`` of a coefficient field.

    The coefficient basis is orthonormal, so ``|Q|`` is the Euclidean norm of
    the five coefficients.
    """
    return float(np.sqrt((np.asarray(q) ** 2).sum(0)).max())


def max_principle_bound(spec, q0) -> float:
    """``max{ max|Q0|, sqrt((b^2/c^2 - 2a/c)_+) }`` for the LdG potential."""
    if not isinstance(spec, potentials.LdG):
        raise WrongVariantError("the maximum-principle bound is defined for LdG only; "
                                "use bm_bound_monitor for BM")
    a, b, c = spec.a, spec.b, spec.c
    return max(max_abs_q(q0), float(np.sqrt(max(b * b / (c * c) - 2 * a / c, 0.0))))


@dataclass(frozen=True)
class MaxPrincipleRow:
    t: float
    max_abs_q: float
    bound: float

    @property
    def excess(self):
        return max(0.0, self.max_abs_q - self.bound)


def max_principle_monitor(trajectory, spec) -> list:
    """Rows ``(t, max|Q|, C)`` with ``C`` taken from the first snapshot."""
    traj = list(trajectory)
    C = max_principle_bound(spec, traj[0].q)
    return [MaxPrincipleRow(float(s.t), max_abs_q(s.q), C) for s in traj]


@dataclass(frozen=True)
class BmMonitorRow:
    """Entropy extremes at one time.

    ``violations`` lists grid indices whose margin is at most
    ``SOLVABLE_MARGIN``; the entropy maximum is taken over the other points.
    """

    t: float
    max_G: float
    min_margin: float
    violations: tuple

    @property
    def scaled_max_G(self):
        return self.t**2.5 * self.max_G


def bm_bound_monitor(trajectory, spec: potentials.BM, t_values=None) -> list:
    """Per-snapshot ``max G_BM(Q)`` and ``min`` physicality margin.

    Parameters
    ----------
    trajectory : iterable of snapshots with ``t`` and ``q``
    spec : BM
        Supplies the sphere quadrature for the entropy.
    t_values : optional sequence of times; snapshots at other times are skipped.
    """
    if not isinstance(spec, potentials.BM):
        raise WrongVariantError("bm_bound_monitor needs BM parameters")
    keep = None if t_values is None else np.asarray(t_values, dtype=float)
    rows = []
    for s in trajectory:
        if keep is not None and not np.any(np.isclose(keep, s.t, rtol=0, atol=1e-12)):
            continue
        Qm = qmat(np.asarray(s.q))
        marg = potentials.physicality_margin(Qm)
        ok = marg > SOLVABLE_MARGIN
        bad = tuple(tuple(int(i) for i in ix) for ix in np.argwhere(~ok))
        gmax = float(potentials.g_bm(Qm[ok], spec).max()) if ok.any() else np.inf
        rows.append(BmMonitorRow(float(s.t), gmax, float(marg.min()), bad))
    return rows


def rows_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        out = []
        for c in columns:
            v = getattr(r, c)
            out.append(";".join("-".join(map(str, ix)) for ix in v) if c == "violations"
                       else repr(float(v)))
        w.writerow(out)
    return buf.getvalue()
