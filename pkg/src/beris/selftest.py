"""Reduced-size invariant suite behind ``beris selftest``."""
from __future__ import annotations

import dataclasses
import tempfile
import time
from pathlib import Path

import numpy as np

from . import io as bio, mollifier, potentials, solver
from .diagnostics import cancellation, ckn, energy_law as en
from .grid import SpectralGrid, leray_project, qmat

LDG = potentials.LdG(0.03, 1.0, 1.0)
BMS = potentials.BM(1.0, 4.0, m=100.0)


def _leray():
    g = SpectralGrid(2, 32)
    u, _ = solver.make_initial_data("random-smooth", 1, g, LDG)
    rng = np.random.default_rng(0)
    w = leray_project(rng.standard_normal((2,) + g.shape), g)
    err = max(float(np.abs(leray_project(u, g) - u).max()), g.max_abs_divergence_ratio(w))
    return err <= 1e-10, err


def _div2():
    g = SpectralGrid(2, 32)
    worst = 0.0
    for seed in range(5):
        _, q1 = solver.make_initial_data("random-smooth", seed, g, LDG)
        _, q2 = solver.make_initial_data("random-smooth", seed + 100, g, LDG)
        worst = max(worst, cancellation.div2_cancellation_residual(q1, q2, LDG, g))
    return worst <= 1e-11, worst


def _corot():
    g = SpectralGrid(2, 32)
    worst = 0.0
    for seed in range(5):
        u, q = solver.make_initial_data("random-smooth", seed, g, LDG)
        worst = max(worst, cancellation.corotational_cancellation_residual(u, q, LDG, g))
    return worst <= 1e-10, worst


def _bingham():
    g0 = float(potentials.g_bm(np.zeros((3, 3)), BMS))
    err = abs(g0 + potentials.LOG4PI)
    rng = np.random.default_rng(1)
    Q = potentials.random_interior_q(rng, 20, 0.05)
    res = float(potentials.solve_bingham(Q, BMS).moment_residual.max())
    return err <= 1e-10 and res <= 1e-8, max(err, res)


def _moreau():
    rng = np.random.default_rng(2)
    Q = potentials.random_interior_q(rng, 20, 0.05) * rng.uniform(1, 40, (20, 1, 1))
    worst = np.inf
    for m in (10.0, 100.0):
        v = potentials.moreau(Q, m, BMS, with_prox=False).value
        nq = np.sqrt(np.einsum("...ij,...ij->...", Q, Q))
        lb = np.where(nq >= 2 / np.sqrt(3), m * (nq - 2 / np.sqrt(3)) ** 2, 0) - potentials.LOG4PI
        worst = min(worst, float((v - lb).min()))
    return worst >= -1e-9, worst


def _trajectory(n=32, t_final=0.2, dt=5e-3, depth=1000):
    g = SpectralGrid(2, n)
    u0, q0 = solver.make_initial_data("random-smooth", 4, g, LDG)
    cfg = solver.SimConfig(dt, t_final, LDG, history_depth=depth)
    recs = []
    st = solver.initial_state(g, u0, q0, cfg)
    st = solver.run(st, cfg, on_step=lambda s: recs.append(en.energy(s, cfg)))
    return st, recs, cfg


def _energy_law():
    _, recs, _ = _trajectory()
    bal = en.energy_balance_residual(recs)
    return bal.nonincreasing, float(bal.increments.max())


def _mollifier():
    st, _, _ = _trajectory()
    hist = list(st.history)
    theta, T = 0.1, 0.2
    u, _ = mollifier.retarded_mollify(hist, theta, T)
    pert = [dataclasses.replace(h, u=h.u + (h.t > T - theta**2)) for h in hist]
    u2, _ = mollifier.retarded_mollify(pert, theta, T)
    div = SpectralGrid(2, 32).max_abs_divergence_ratio(u)
    return bool(np.array_equal(u, u2)) and div <= 1e-10, div


def _taylor_green():
    g = SpectralGrid(2, 32)
    x, y = g.coords
    u0 = np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    cfg = solver.SimConfig(1e-2, 0.5, LDG)
    st = solver.run(solver.initial_state(g, u0, np.zeros((5,) + g.shape), cfg), cfg)
    err = float(np.abs(st.u - u0 * np.exp(-2 * st.t)).max())
    return err <= 1e-8, err


def _snapshot_roundtrip():
    g = SpectralGrid(2, 16)
    u, q = solver.make_initial_data("random-smooth", 5, g, LDG)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "s.besnap"
        bio.write_snapshot(p, 0.1, 3, u, q)
        s = bio.read_snapshot(p)
    ok = np.array_equal(s.u, u) and np.array_equal(s.q, q) and s.t == 0.1 and s.step == 3
    return bool(ok), 0.0


def _ckn_zero():
    g = SpectralGrid(2, 64)
    z = [bio.Snapshot(0.01 * i, i, np.zeros((2,) + g.shape), np.zeros((5,) + g.shape))
         for i in range(30)]
    rep = ckn.ckn_quantities(z, [1.0, 1.0], 0.29, [0.5, 0.4])
    tot = sum(map(abs, rep.A + rep.B + rep.C + rep.D))
    return tot == 0.0, tot


def _bm_margin():
    g = SpectralGrid(2, 32)
    _, q0 = solver.make_initial_data("random-smooth", 6, g, BMS)
    m = float(potentials.physicality_margin(qmat(q0)).min())
    return m >= 0.05, m


CHECKS = (
    ("leray_projection", _leray),
    ("div2_cancellation", _div2),
    ("corotational_cancellation", _corot),
    ("bingham_closure", _bingham),
    ("moreau_lower_bound", _moreau),
    ("energy_nonincreasing", _energy_law),
    ("retarded_mollifier", _mollifier),
    ("taylor_green_decay", _taylor_green),
    ("snapshot_roundtrip", _snapshot_roundtrip),
    ("ckn_zero_trajectory", _ckn_zero),
    ("bm_initial_margin", _bm_margin),
)


def run_selftest():
    """Return ``(all_ok, results)`` where each result has id, pass, observed, seconds."""
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, obs = fn()
            err = None
        except Exception as exc:          # a crash is a failed invariant
            ok, obs, err = False, None, f"{type(exc).__name__}: {exc}"
        r = {"id": name, "pass": bool(ok), "observed": None if obs is None else float(obs),
             "seconds": round(time.perf_counter() - t0, 3)}
        if err:
            r["error"] = err
        results.append(r)
    return all(r["pass"] for r in results), results
