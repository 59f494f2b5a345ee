"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Long simulations are shared through module-scoped fixtures; the runtime of a
criterion includes the fixtures it is the first to request.
"""
import hashlib
import json
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

import oracles as O
from beris import cli, io as bio, mollifier, potentials as P, solver, tensor as T
from beris.diagnostics import bounds, cancellation as canc, ckn, energy_law as en
from beris.grid import SpectralGrid, leray_project, qmat
from beris.quadrature import product_rule

LDG = P.LdG(0.03, 1.0, 1.0)
BM = P.BM(1.0, 4.0, m=100.0)
LOG4PI = np.log(4 * np.pi)
FIXTURE_TIME = {}


@pytest.fixture
def report(request):
    """Record a criterion verdict and print it on the terminal."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, ok, elapsed, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  ({elapsed:6.1f} s)  {detail}"
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:
            print(line)
    return emit


class Clock:
    def __init__(self, *fixtures):
        self.t0 = time.perf_counter()
        self.extra = sum(FIXTURE_TIME.pop(f, 0.0) for f in fixtures)

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0 + self.extra


# ---------------------------------------------------------------------------
# shared runs
# ---------------------------------------------------------------------------
def simulate(spec, n, dt, t_final=1.0, snap_every=0, integrator="imex-euler", seed=0):
    """Run from seeded random-smooth data, recording energy, max|Q| and margin each step."""
    g = SpectralGrid(2, n)
    u0, q0 = solver.make_initial_data("random-smooth", seed, g, spec)
    cfg = solver.SimConfig(dt, t_final, spec, integrator=integrator)
    st = solver.initial_state(g, u0, q0, cfg)
    out = SimpleNamespace(records=[], t=[], max_q=[], margin=[], snaps=[], q0=q0)
    is_bm = isinstance(spec, P.BM)

    def observe(s):
        out.t.append(s.t)
        out.max_q.append(bounds.max_abs_q(s.q))
        if is_bm:
            out.margin.append(float(P.physicality_margin(qmat(s.q)).min()))
        if snap_every and s.step % snap_every == 0:
            out.snaps.append(bio.Snapshot(s.t, s.step, s.u, s.q))

    observe(st)
    st = solver.run(st, cfg, on_terms=lambda s, terms: out.records.append(
        en.record_from_terms(s.t, g, terms, cfg)), on_step=observe)
    uh, qh = g.dealias(g.fft(st.u)), g.dealias(g.fft(st.q))
    out.records.append(en.record_from_terms(
        st.t, g, solver.evaluate(g, uh, qh, cfg, st.aux.get("bm_dual")), cfg))
    out.t, out.max_q, out.margin = map(np.asarray, (out.t, out.max_q, out.margin))
    return out


@pytest.fixture(scope="module")
def energy_runs():
    t0 = time.perf_counter()
    runs = {
        ("ldg", 1e-3): simulate(LDG, 64, 1e-3, snap_every=10),
        ("ldg", 5e-4): simulate(LDG, 64, 5e-4),
        ("bm", 1e-3): simulate(BM, 64, 1e-3),
        ("bm", 5e-4): simulate(BM, 64, 5e-4),
    }
    FIXTURE_TIME["energy_runs"] = time.perf_counter() - t0
    return runs


# ---------------------------------------------------------------------------
# 1. double-divergence cancellation
# ---------------------------------------------------------------------------
def random_pair(g, seed):
    _, q1 = solver.make_initial_data("random-smooth", seed, g, LDG)
    _, q2 = solver.make_initial_data("random-smooth", seed + 1000, g, LDG)
    return q1, q2


def test_criterion_01_div2_cancellation(report):
    clock = Clock()
    worst = 0.0
    for dim, n, pairs in ((2, 64, 50), (3, 32, 10)):
        g = SpectralGrid(dim, n)
        for seed in range(pairs):
            worst = max(worst, canc.div2_cancellation_residual(*random_pair(g, seed), LDG, g))
    ok = worst <= 1e-11 and clock.elapsed < 10
    report(1, ok, clock.elapsed, f"max relative div div sigma = {worst:.2e} (tol 1e-11, 50 x 64^2 + 10 x 32^3)")
    assert ok


# ---------------------------------------------------------------------------
# 2. corotational cancellation
# ---------------------------------------------------------------------------
def test_criterion_02_corotational(report):
    clock = Clock()
    g = SpectralGrid(2, 64)
    worst = 0.0
    for seed in range(50):
        u, q = solver.make_initial_data("random-smooth", seed, g, LDG)
        worst = max(worst, canc.corotational_cancellation_residual(u, q, LDG, g))
    ok = worst <= 1e-10 and clock.elapsed < 10
    report(2, ok, clock.elapsed, f"max relative residual = {worst:.2e} (tol 1e-10, 50 pairs, phi = 1)")
    assert ok


# ---------------------------------------------------------------------------
# 3. global energy law
# ---------------------------------------------------------------------------
def test_criterion_03_energy_law(report, energy_runs):
    clock = Clock("energy_runs")
    parts, ok = [], True
    for name in ("ldg", "bm"):
        coarse = en.energy_balance_residual(energy_runs[(name, 1e-3)].records)
        fine = en.energy_balance_residual(energy_runs[(name, 5e-4)].records)
        ratio = coarse.max_abs / fine.max_abs
        good = coarse.nonincreasing and fine.nonincreasing and ratio >= 1.8
        ok &= good
        parts.append(f"{name}: max dE = {max(coarse.increments.max(), fine.increments.max()):.1e}, "
                     f"residual ratio = {ratio:.3f}")
    ok &= clock.elapsed < 300
    report(3, ok, clock.elapsed, "; ".join(parts) + " (need dE <= 1e-9, ratio >= 1.8)")
    assert ok


# ---------------------------------------------------------------------------
# 4. LdG maximum principle
# ---------------------------------------------------------------------------
def test_criterion_04_max_principle(report, energy_runs):
    clock = Clock("energy_runs")
    fine = energy_runs[("ldg", 1e-3)]
    coarse = simulate(LDG, 32, 2e-3)
    bound = bounds.max_principle_bound(LDG, fine.q0)
    q0max = bounds.max_abs_q(fine.q0)
    excess = {k: max(0.0, float(r.max_q.max()) - bound) for k, r in (("coarse", coarse), ("fine", fine))}
    ok = (abs(q0max - 0.5) <= 1e-12 and bound == pytest.approx(np.sqrt(0.94))
          and fine.max_q.max() <= np.sqrt(0.94) + 1e-3 and coarse.max_q.max() <= np.sqrt(0.94) + 1e-3
          and excess["fine"] <= excess["coarse"] and clock.elapsed < 180)
    report(4, ok, clock.elapsed,
           f"max|Q| = {fine.max_q.max():.4f} (n=64) / {coarse.max_q.max():.4f} (n=32), bound "
           f"{bound:.4f}; excess {excess['coarse']:.1e} -> {excess['fine']:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 5. BM physicality
# ---------------------------------------------------------------------------
def test_criterion_05_bm_physicality(report, energy_runs):
    clock = Clock("energy_runs")
    runs = {48: simulate(BM, 48, 1e-3), 64: energy_runs[("bm", 1e-3)]}
    floors = {}
    for n, r in runs.items():
        assert r.margin[0] >= 0.05
        floors[n] = float(r.margin[(r.t >= 0.05 - 1e-12) & (r.t <= 1.0 + 1e-12)].min())
    # refinement may lower the floor by at most 1% of the coarse value
    drift = (floors[48] - floors[64]) / floors[48]
    ok = min(floors.values()) >= 0.01 and drift <= 0.01 and clock.elapsed < 300
    report(5, ok, clock.elapsed, f"initial margin {runs[64].margin[0]:.3f}; min margin on [0.05, 1]: "
           f"n=48 {floors[48]:.5f}, n=64 {floors[64]:.5f}, relative drop {drift:.1e} "
           "(need >= 0.01, drop <= 1%)")
    assert ok


# ---------------------------------------------------------------------------
# 6. Bingham closure
# ---------------------------------------------------------------------------
def tangent_fd(fun, Q, h=1e-5):
    return sum((fun(Q + h * E) - fun(Q - h * E)) / (2 * h) * E for E in T.BASIS)


def test_criterion_06_bingham(report):
    clock = Clock()
    rng = np.random.default_rng(2026)
    Q = P.random_interior_q(rng, 200, 0.05)
    assert P.physicality_margin(Q).min() >= 0.05
    sol = P.solve_bingham(Q, BM)
    rule = product_rule(2 * BM.quad_degree)
    p = rule.nodes
    x = np.einsum("nij,kij->nk", sol.B, p[:, :, None] * p[:, None, :])
    w = np.exp(x - x.max(1, keepdims=True)) * rule.weights
    mom = np.einsum("nk,kij->nij", w, p[:, :, None] * p[:, None, :] - np.eye(3) / 3)
    mom /= w.sum(1)[:, None, None]
    res = float(np.abs(mom - Q).max())
    g0 = abs(float(P.g_bm(np.zeros((3, 3)), BM)) + LOG4PI)
    fd_err = 0.0
    for Qi in Q[:40]:
        B = P.grad_g_bm(Qi, BM)
        fd = tangent_fd(lambda A: float(P.g_bm(A, BM)), Qi)
        fd_err = max(fd_err, float(np.abs(B - fd).max() / np.abs(B).max()))
    ok = res <= 1e-8 and g0 <= 1e-10 and fd_err <= 1e-5 and clock.elapsed < 60
    report(6, ok, clock.elapsed, f"moment residual {res:.1e} vs degree-{rule.degree} rule, "
           f"|G(0) + log 4pi| = {g0:.1e}, gradient FD rel {fd_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. Moreau envelope
# ---------------------------------------------------------------------------
def test_criterion_07_moreau(report):
    clock = Clock()
    rng = np.random.default_rng(7)
    interior = P.random_interior_q(rng, 50, 0.05)
    big = T.random_qtensor(rng, 50)
    big *= (np.linspace(0.05, 20.0, 50) / np.linalg.norm(big, axis=(1, 2)))[:, None, None]
    Q = np.concatenate([interior, big])
    nq = np.linalg.norm(Q, axis=(1, 2))
    ms = (10.0, 100.0, 1000.0)
    vals = np.array([P.moreau(Q, m, BM, with_prox=False).value for m in ms])
    g_int = P.g_bm(interior, BM)
    c = 2 / np.sqrt(3)
    checks = {
        "lower": vals.min() >= -LOG4PI - 1e-9,
        "monotone": bool(np.all(np.diff(vals, axis=0) >= -1e-9)),
        "below G": bool(np.all(vals[:, :50] <= g_int + 1e-9)),
        "quadratic": all(np.all(v[nq >= 11] >= m / 4 * nq[nq >= 11] ** 2 - LOG4PI - 1e-9)
                         for m, v in zip(ms, vals)),
        "shifted": all(np.all(v[nq >= c] >= m / 2 * (nq[nq >= c] - c) ** 2 - 1e-9)
                       for m, v in zip(ms, vals)),
    }
    ok = all(checks.values()) and (nq >= 11).sum() > 0 and clock.elapsed < 120
    report(7, ok, clock.elapsed, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
           + f" ({(nq >= 11).sum()} samples with |Q| >= 11)")
    assert ok


# ---------------------------------------------------------------------------
# 8. retarded mollifier
# ---------------------------------------------------------------------------
def test_criterion_08_mollifier(report):
    clock = Clock()
    g = SpectralGrid(2, 32)
    theta = 0.3
    times = np.arange(0, 101) * 0.01
    rng = np.random.default_rng(8)
    hist = [SimpleNamespace(t=float(t), u=leray_project(rng.standard_normal((2, 32, 32)), g),
                            q=rng.standard_normal((5, 32, 32))) for t in times]
    div, causal, const = 0.0, True, 0.0
    for t_eval in (0.65, 0.8, 0.95, 1.0):
        u, q = mollifier.retarded_mollify(hist, theta, t_eval)
        div = max(div, g.max_abs_divergence_ratio(u))
        cut = t_eval - theta**2
        pert = [SimpleNamespace(t=h.t, u=h.u + 1.0 if h.t >= cut else h.u,
                                q=h.q - 2.0 if h.t >= cut else h.q) for h in hist]
        u2, q2 = mollifier.retarded_mollify(pert, theta, t_eval)
        causal &= bool(np.array_equal(u, u2) and np.array_equal(q, q2))
        win = [h for h in hist if t_eval - 2 * theta < h.t < t_eval - theta]
        for out, key in ((u, "u"), (q, "q")):
            ref = max(np.sqrt((getattr(h, key) ** 2).sum()) for h in win)
            const = max(const, float(np.sqrt((out**2).sum()) / ref))
    # a constant solenoidal field is reproduced up to the temporal quadrature: C near 1
    flat = [SimpleNamespace(t=h.t, u=np.ones((2, 32, 32)), q=np.ones((5, 32, 32))) for h in hist]
    u, q = mollifier.retarded_mollify(flat, theta, 0.9)
    const = max(const, float(np.sqrt((u**2).sum() / (2 * 32 * 32))), float(np.sqrt((q**2).sum() / (5 * 32 * 32))))
    ok = div <= 1e-10 and causal and const <= 1.001 and clock.elapsed < 30
    report(8, ok, clock.elapsed, f"divergence {div:.1e}, causality {'bit-exact' if causal else 'BROKEN'}, "
           f"observed C = {const:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 9. CKN quantities
# ---------------------------------------------------------------------------
def lowmode(rng, g, ncomp, kmax=4, amp=0.01):
    c = np.zeros((ncomp,) + g.spec_shape, complex)
    sel = np.ones(g.spec_shape, bool)
    for k in g.k:
        sel &= np.abs(k) <= kmax
    c[:, sel] = rng.standard_normal((ncomp, sel.sum())) + 1j * rng.standard_normal((ncomp, sel.sum()))
    return g.ifft(c) * amp


def scaled_fields(lam, g, t):
    X, Y = lam * g.coords[0], lam * g.coords[1]
    s = lam**2 * t
    u = lam * 0.2 * np.stack([-2 * np.exp(-s) * np.sin(X) * np.sin(2 * Y) + 0.3 * np.cos(Y + s),
                              -np.exp(-s) * np.cos(X) * np.cos(2 * Y)])
    q = np.zeros((5,) + g.shape)
    q[0] = 0.3 * np.cos(X + s) * np.sin(Y)
    q[3] = 0.2 * np.sin(2 * X - Y) * np.exp(-s)
    q[4] = 0.1 * np.cos(s) * np.cos(X + 2 * Y)
    return u, q


def test_criterion_09_ckn(report, energy_runs):
    clock = Clock("energy_runs")
    # dense oracle
    g = SpectralGrid(2, 32)
    oracle_err = 0.0
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        ts = np.sort(rng.uniform(0, 1, 25))
        ts[0] = 0.0
        snaps = [bio.Snapshot(float(t), i, lowmode(rng, g, 2), lowmode(rng, g, 5)) for i, t in enumerate(ts)]
        for x0, t0 in (([1.0, 2.0], 0.9), ([5.5, 0.3], float(ts[-1]))):
            rep = ckn.ckn_quantities(snaps, x0, t0, [0.9, 0.8])
            for i, r in enumerate(rep.radii):
                ref = O.dense_ckn(snaps, g, x0, t0, r)
                ref["Phi"] = ref["C"] + ref["D"] ** 2
                oracle_err = max(oracle_err, max(abs(getattr(rep, k)[i] - v) / abs(v) for k, v in ref.items()))
    # parabolic rescaling
    times = np.linspace(0, 1, 41)
    scaled = {}
    for lam in (1, 2):
        gl = SpectralGrid(2, 32 * lam)
        snaps = [bio.Snapshot(float(t), i, *scaled_fields(lam, gl, t)) for i, t in enumerate(times / lam**2)]
        scaled[lam] = ckn.ckn_quantities(snaps, [1.3 / lam, 2.1 / lam], 1.0 / lam**2, [0.95 / lam, 0.8 / lam])
    scale_err = max(abs(a - b) / abs(b) for k in ("A", "B", "C", "D", "Phi")
                    for a, b in zip(getattr(scaled[2], k), getattr(scaled[1], k)))
    # equilibrium relaxation
    run = energy_runs[("ldg", 1e-3)]
    traj = ckn.Trajectory(run.snaps)
    radii = [1.0, 0.8, 0.6, 0.4]
    centers = [([np.pi, np.pi], 1.0), ([1.0, 4.0], 1.0), ([5.0, 2.0], 1.0)]
    results, _ = ckn.singularity_scan(traj, 0.1, 0.1, centers, radii)
    slopes = [r.slope_Phi for r in results]
    flags = [r.reasons for r in results if r.flagged]
    ok = (oracle_err <= 1e-10 and scale_err <= 1e-6 and min(slopes) >= 2.5 and not flags
          and clock.elapsed < 180)
    report(9, ok, clock.elapsed, f"oracle rel err {oracle_err:.1e}, lambda=2 rel err {scale_err:.1e}, "
           f"Phi slopes {', '.join(f'{s:.2f}' for s in slopes)}, flags {flags or 'none'}")
    assert ok


# ---------------------------------------------------------------------------
# 10. solver verification
# ---------------------------------------------------------------------------
def final_state(g, u0, q0, dt, integrator, t_final=0.2, forcing=None):
    cfg = solver.SimConfig(dt, t_final, LDG, integrator=integrator, forcing=forcing)
    return solver.run(solver.initial_state(g, u0, q0, cfg), cfg)


def test_criterion_10_solver(report):
    clock = Clock()
    g = SpectralGrid(2, 64)
    ue, qe = O.two_mode_fields()
    fu, fq = O.mms_forcing(ue, qe, g, LDG.a, LDG.b, LDG.c)
    u0, q0 = O.lambdify_fields(list(ue), g), O.lambdify_fields(list(qe), g)
    st = final_state(g, u0, q0, 1e-3, "imex-euler", 0.1, (fu, fq))
    mms = max(np.abs(st.u - u0).max(), np.abs(st.q - q0).max())
    # Taylor-Green
    x, y = g.coords
    tg0 = np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    st = final_state(g, tg0, np.zeros((5,) + g.shape), 1e-2, "imex-euler", 1.0)
    tg = float(np.abs(st.u - tg0 * np.exp(-2 * st.t)).max())
    # temporal order
    g32 = SpectralGrid(2, 32)
    u0, q0 = solver.make_initial_data("random-smooth", 3, g32, LDG)
    ref = final_state(g32, u0, q0, 2.5e-4, "imex-bdf2")
    ratios = {}
    for integ in ("imex-euler", "imex-bdf2"):
        errs = []
        for dt in (0.02, 0.01, 0.005):
            s = final_state(g32, u0, q0, dt, integ)
            errs.append(max(np.abs(s.u - ref.u).max(), np.abs(s.q - ref.q).max()))
        ratios[integ] = [errs[i] / errs[i + 1] for i in range(2)]
    order_ok = (all(abs(r / 2 - 1) <= 0.15 for r in ratios["imex-euler"])
                and all(abs(r / 4 - 1) <= 0.15 for r in ratios["imex-bdf2"]))
    ok = mms <= 1e-8 and tg <= 1e-8 and order_ok and clock.elapsed < 240
    report(10, ok, clock.elapsed, f"MMS error {mms:.1e} at n=64, Taylor-Green {tg:.1e}, Richardson "
           + ", ".join(f"{k} {'/'.join(f'{r:.2f}' for r in v)}" for k, v in ratios.items()))
    assert ok


# ---------------------------------------------------------------------------
# 11. reproducibility
# ---------------------------------------------------------------------------
REPRO = """
[grid]
n = 32
[sim]
dt = 2e-3
t_final = {t_final}
integrator = imex-euler
seed = 11
[diagnostics]
families = energy
[output]
snapshot_every = 25
checkpoint_every = 50
"""


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_criterion_11_reproducibility(report, tmp_path):
    clock = Clock()
    full = tmp_path / "full.ini"
    full.write_text(REPRO.format(t_final=0.2))
    half = tmp_path / "half.ini"
    half.write_text(REPRO.format(t_final=0.1))
    codes = [cli.main(["run", "--config", str(full), "--output", str(tmp_path / d)]) for d in ("a", "b")]
    codes.append(cli.main(["run", "--config", str(half), "--output", str(tmp_path / "c")]))
    codes.append(cli.main(["run", "--config", str(full), "--output", str(tmp_path / "d"),
                           "--restart", str(tmp_path / "c" / "checkpoint")]))
    names = [f"snap_{s:06d}.besnap" for s in (25, 50, 75, 100)]
    same = all(sha(tmp_path / "a" / n) == sha(tmp_path / "b" / n) for n in names)
    restart = all(sha(tmp_path / "a" / n) == sha(tmp_path / "d" / n) for n in names[2:])
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    ok = codes == [0, 0, 0, 0] and same and restart and man["status"] == "completed" and clock.elapsed < 120
    report(11, ok, clock.elapsed, f"fixed-seed snapshots {'identical' if same else 'DIFFER'}, "
           f"restart from step 50 {'bit-identical' if restart else 'DIFFERS'}")
    assert ok
