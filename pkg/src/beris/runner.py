"""Run orchestration: simulate, persist snapshots and emit diagnostic streams."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, io as bio, potentials, solver
from .config import RunConfig
from .diagnostics import bounds, ckn, energy_law as en, lei
from .errors import BlowUpError, ConfigurationError
from .grid import SpectralGrid

log = logging.getLogger(__name__)

LOCK_NAME = "run.lock"


class DirectoryLock:
    """Exclusive ownership of an output directory through an ``O_EXCL`` lock file."""

    def __init__(self, directory):
        self.path = Path(directory) / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise ConfigurationError(f"output directory is locked by another run ({self.path})") from exc
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _csv(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def snapshot_meta(rc: RunConfig):
    return {"config": rc.as_dict(), "potential": rc.as_dict()["potential"],
            "seed": rc["sim"]["seed"], "version": __version__}


def _lei_bump(rc):
    d = rc["diagnostics"]
    return lei.Bump(tuple(d["lei_center"]), d["lei_radius"], d["lei_t_on"], d["lei_t_full"])


class Diagnostics:
    """In-run collectors; each consumes states through :meth:`observe`."""

    def __init__(self, rc: RunConfig, cfg: solver.SimConfig, grid: SpectralGrid):
        self.rc, self.cfg, self.grid = rc, cfg, grid
        d = rc["diagnostics"]
        self.fam = set(d["families"])
        if "maxprinciple" in self.fam and not isinstance(cfg.potential, potentials.LdG):
            self.fam.discard("maxprinciple")
            log.info("maxprinciple family skipped: it applies to LdG only")
        if "bm_monitor" in self.fam and not isinstance(cfg.potential, potentials.BM):
            self.fam.discard("bm_monitor")
            log.info("bm_monitor family skipped: it applies to BM only")
        self.energy, self.maxp, self.bm, self.ckn_traj = [], [], [], []
        self.lei = None
        if "lei" in self.fam:
            self.lei = lei.LocalEnergyAccumulator(grid, _lei_bump(rc), cfg.potential,
                                                  cfg.L, cfg.Gamma, cfg.mu)
        self.bound = None

    def observe(self, state: solver.SimState, every=False):
        """Record ``state``; ``every=True`` ignores the configured cadences."""
        d = self.rc["diagnostics"]

        def due(key):
            return every or state.step % d[key] == 0

        if "energy" in self.fam and due("energy_every"):
            self.energy.append(en.energy(state, self.cfg))
        if "maxprinciple" in self.fam and due("monitor_every"):
            if self.bound is None:
                self.bound = bounds.max_principle_bound(self.cfg.potential, state.q)
            self.maxp.append(bounds.MaxPrincipleRow(state.t, bounds.max_abs_q(state.q), self.bound))
        if "bm_monitor" in self.fam and due("monitor_every"):
            self.bm.extend(bounds.bm_bound_monitor([state], self.cfg.potential))
        if self.lei is not None:
            self.lei.add(state.t, state.u, state.q)
        if "ckn" in self.fam and due("ckn_every"):
            self.ckn_traj.append(bio.Snapshot(state.t, state.step, state.u.copy(), state.q.copy()))

    def emit(self, out: Path):
        """Write CSV/JSON streams; returns ``(paths, summary)``."""
        paths, summary = [], {}
        fam = self.fam
        if "energy" in fam and self.energy:
            p = out / "energy.csv"
            bio.atomic_write_text(p, en.energy_csv(self.energy))
            paths.append(p)
            if len(self.energy) >= 2:
                bal = en.energy_balance_residual(self.energy)
                summary["energy_nonincreasing"] = {
                    "pass": bal.nonincreasing, "max_increase": float(bal.increments.max()),
                    "max_residual": bal.max_abs, "mean_residual": bal.mean_abs, "tol": bal.tol}
        if "maxprinciple" in fam and self.maxp:
            p = out / "maxprinciple.csv"
            bio.atomic_write_text(p, bounds.rows_csv(self.maxp, bounds.MAXPRINCIPLE_COLUMNS))
            paths.append(p)
            worst = max(r.max_abs_q for r in self.maxp)
            summary["max_principle"] = {"pass": worst <= self.bound + 1e-3, "max_abs_q": worst,
                                        "bound": self.bound, "tol": 1e-3}
        if "bm_monitor" in fam and self.bm:
            p = out / "bm_monitor.csv"
            bio.atomic_write_text(p, bounds.rows_csv(self.bm, bounds.BM_MONITOR_COLUMNS))
            paths.append(p)
            summary["bm_physicality"] = {
                "pass": all(not r.violations for r in self.bm),
                "min_margin": min(r.min_margin for r in self.bm)}
        if self.lei is not None and len(self.lei.times) >= 2:
            rep = self.lei.report()
            p = out / "lei.csv"
            bio.atomic_write_text(p, _csv(lei.LEI_COLUMNS, [rep.row()]))
            paths.append(p)
            summary["local_energy"] = {"residual": rep.residual, "lhs": rep.lhs, "rhs": rep.rhs}
        if "ckn" in fam:
            paths += emit_ckn(self.ckn_traj, self.rc, out, summary)
        return paths, summary


def emit_ckn(snaps, rc: RunConfig, out: Path, summary: dict):
    d = rc["diagnostics"]
    if not d["ckn_centers"] or not snaps:
        return []
    traj = ckn.Trajectory(snaps, rc["sim"]["L"])
    results, reports = ckn.singularity_scan(traj, d["eps0"], d["eps1"], d["ckn_centers"],
                                            d["ckn_radii"], rc["sim"]["L"])
    paths = []
    rows = []
    for i, rep in enumerate(reports):
        p = out / f"ckn_{i:03d}.json"
        bio.atomic_write_text(p, rep.to_json())
        paths.append(p)
        rows += [(" ".join(map(repr, r[0])),) + tuple(r[1:]) for r in rep.rows()]
    p = out / "ckn.csv"
    bio.atomic_write_text(p, _csv(ckn.CKN_COLUMNS, rows))
    paths.append(p)
    summary["ckn_scan"] = {"pass": not any(r.flagged for r in results),
                           "flagged": [asdict(r) for r in results if r.flagged],
                           "slopes_Phi": [r.slope_Phi for r in results]}
    return paths


def _check_ckn_windows(rc: RunConfig, t_start, t_final):
    """Reject CKN cylinders that the run cannot cover before any work is done."""
    d = rc["diagnostics"]
    if "ckn" not in d["families"] or not d["ckn_centers"]:
        return
    r0 = d["ckn_radii"][0]
    for x0, t0 in d["ckn_centers"]:
        if t0 - r0 ** 2 < t_start - 1e-12 or t0 > t_final + 1e-12:
            raise ConfigurationError(
                f"CKN centre t0={t0:g} needs data on [{t0 - r0 ** 2:g}, {t0:g}] but the run "
                f"covers [{t_start:g}, {t_final:g}]", rc.lines.get(("diagnostics", "ckn_centers")))


def _write_manifest(out: Path, rc, status, started, paths, extra=None):
    files = sorted({Path(p) for p in paths if Path(p).is_file()})
    man = {
        "status": status,
        "version": __version__,
        "config": rc.as_dict(),
        "started": started,
        "finished": _now(),
        "artifacts": [str(p.relative_to(out)) for p in files],
        "sha256": {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
                   for p in files if p.name != "run.log"},
    }
    if extra:
        man.update(extra)
    bio.atomic_write_text(out / "manifest.json", json.dumps(man, indent=2, sort_keys=True))
    return man


def initial_run_state(rc: RunConfig, cfg: solver.SimConfig):
    g = SpectralGrid(rc["grid"]["dim"], rc["grid"]["n"])
    s = rc["sim"]
    u0, q0 = solver.make_initial_data(s["initial"], s["seed"], g, cfg.potential,
                                      u_amp=s["u_amp"], q_max=s["q_max"], margin=s["margin"])
    return solver.initial_state(g, u0, q0, cfg)


def run_simulation(rc: RunConfig, out_dir, restart=None):
    """Execute a configured run in ``out_dir``.

    Returns the manifest dictionary. Blow-up is reported through the
    manifest status ``blow-up`` (the last good snapshot is written first).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with DirectoryLock(out):
        started = _now()
        cfg = rc.sim_config()
        meta = snapshot_meta(rc)
        handler = logging.FileHandler(out / "run.log", mode="w")
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root = logging.getLogger("beris")
        root.addHandler(handler)
        root.setLevel(logging.INFO)
        paths = [out / "resolved.ini", out / "run.log"]
        try:
            bio.atomic_write_text(out / "resolved.ini", rc.echo())
            if restart is not None:
                state, _ = bio.read_checkpoint(restart)
            else:
                state = initial_run_state(rc, cfg)
            diag = Diagnostics(rc, cfg, state.grid)
            if diag.lei is not None and state.t > rc["diagnostics"]["lei_t_on"]:
                diag.lei = None
                log.warning("lei family skipped: restart time %g is past lei_t_on", state.t)
            _check_ckn_windows(rc, state.t, cfg.t_final)
            o = rc["output"]
            snap_every, ck_every = o["snapshot_every"], o["checkpoint_every"]

            def snap(st, name=None):
                p = out / (name or f"snap_{st.step:06d}.besnap")
                bio.write_snapshot(p, st.t, st.step, st.u, st.q, meta)
                paths.extend([p, Path(bio.sidecar_path(p))])
                return p

            def visit(st):
                diag.observe(st)
                if snap_every and st.step % snap_every == 0:
                    snap(st)
                if ck_every and st.step % ck_every == 0 and st.step > 0:
                    ck = Path(bio.write_checkpoint(out / "checkpoint", st, meta))
                    paths.extend(ck.iterdir())

            visit(state)
            nsteps = int(round((cfg.t_final - state.t) / cfg.dt))
            status, extra = "completed", {}
            try:
                for _ in range(max(nsteps, 0)):
                    state = solver.step(state, cfg)
                    if state.aux.get("substeps", 1) > 1:
                        log.info("step %d used %d CFL substeps", state.step, state.aux["substeps"])
                    visit(state)
            except BlowUpError as exc:
                last = exc.last_good_state
                p = snap(last, "blowup_last_good.besnap")
                log.error("%s; last good state written to %s", exc, p)
                status, extra = "blow-up", {"last_good_snapshot": str(p), "message": str(exc)}
            if status == "completed" and o["write_final"] and not (
                    snap_every and state.step % snap_every == 0):
                snap(state)
            dpaths, summary = diag.emit(out)
            paths += dpaths
            summ = {"status": status, "steps": state.step, "t": state.t, "invariants": summary}
            bio.atomic_write_text(out / "summary.json", json.dumps(summ, indent=2, sort_keys=True))
            paths.append(out / "summary.json")
        except Exception as exc:
            handler.flush()
            _write_manifest(out, rc, "error", started, paths, {"message": str(exc)})
            raise
        finally:
            root.removeHandler(handler)
            handler.close()
        return _write_manifest(out, rc, status, started, paths, extra)
