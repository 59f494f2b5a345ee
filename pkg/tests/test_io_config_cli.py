import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from beris import cli, io as bio, solver
from beris.config import SCHEMA, default_config, parse_config
from beris.errors import ConfigurationError, SnapshotFormatError
from beris.grid import SpectralGrid

SMALL = """
[grid]
n = 16
[sim]
dt = 5e-3
t_final = 0.3
seed = 7
[diagnostics]
families = energy, maxprinciple
[output]
snapshot_every = 10
checkpoint_every = 30
"""


def write_cfg(tmp_path, text=SMALL, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_cli(args):
    return cli.main([str(a) for a in args])


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("dim,n", [(2, 16), (3, 8)])
def test_snapshot_round_trip(tmp_path, dim, n):
    rng = np.random.default_rng(0)
    u, q = rng.standard_normal((dim,) + (n,) * dim), rng.standard_normal((5,) + (n,) * dim)
    p = tmp_path / "a.besnap"
    bio.write_snapshot(p, 0.1 + 1e-17, 12, u, q, {"k": 1})
    s = bio.read_snapshot(p)
    assert s.t == 0.1 + 1e-17 and s.step == 12
    assert np.array_equal(s.u, u) and np.array_equal(s.q, q)
    assert bio.read_sidecar(p) == {"k": 1}


def _corrupt(tmp_path, old, new, name):
    src = tmp_path / "ok.besnap"
    bio.write_snapshot(src, 0.0, 0, np.zeros((2, 8, 8)), np.zeros((5, 8, 8)))
    raw = src.read_bytes()
    dst = tmp_path / name
    dst.write_bytes(raw.replace(old, new, 1) if old else raw[:-8])
    return dst


@pytest.mark.parametrize("old,new,field", [
    (b"BESNAP1", b"BESNAP9", "magic"),
    (b"dim=2", b"dim=4", "dim"),
    (b"n=8 8", b"n=8 7", "n"),
    (b"fields=", b"fields=p,", "fields"),
    (b"time=", b"time=zz", "time"),
    (b"step=0", b"step=x", "step"),
    (b"byteorder=little", b"byteorder=big", "byteorder"),
    (b"\nEND\n", b"\nEDN\n", "END"),
    (None, None, "data"),
])
def test_corrupt_snapshot_names_field(tmp_path, old, new, field):
    p = _corrupt(tmp_path, old, new, f"bad_{field}.besnap")
    with pytest.raises(SnapshotFormatError) as info:
        bio.read_snapshot(p)
    assert info.value.field == field and str(p) in str(info.value)


def test_checkpoint_round_trip(tmp_path):
    g = SpectralGrid(2, 16)
    from beris import potentials as P
    cfg = solver.SimConfig(5e-3, 0.05, P.LdG(0.03, 1, 1), integrator="imex-bdf2")
    st = solver.run(solver.initial_state(g, *solver.make_initial_data("random-smooth", 1, g), cfg), cfg)
    bio.write_checkpoint(tmp_path / "ck", st, {"x": 1})
    back, meta = bio.read_checkpoint(tmp_path / "ck")
    assert meta == {"x": 1} and back.step == st.step and back.t == st.t
    a, b = solver.step(st, cfg), solver.step(back, cfg)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.q, b.q)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def test_defaults_and_echo_round_trip():
    rc = default_config()
    assert set(rc.values) == set(SCHEMA)
    again = parse_config(rc.echo())
    assert again.values == rc.values and again.echo() == rc.echo()


@pytest.mark.parametrize("text,line,needle", [
    ("[grid]\nn = 64\n[bogus]\nx = 1\n", 3, "bogus"),
    ("[grid]\nn = 64\nsize = 3\n", 3, "size"),
    ("[sim]\n\ndt = abc\n", 3, "dt"),
    ("[grid]\nn = 66\n", 2, "n"),
    ("[sim]\ndt = -1\n", 2, "dt"),
    ("[diagnostics]\nfamilies = energy, nope\n", 2, "families"),
    ("[potential]\nvariant = bm\nkappa = -1\n", 2, "kappa"),
    ("[grid]\nn = 32\n[diagnostics]\nckn_centers = 1 1 0.5\nckn_radii = 0.5\n", 5, "4 cells"),
])
def test_config_errors_carry_line_numbers(text, line, needle):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text)
    assert info.value.line == line
    assert needle in str(info.value)


def test_config_accepts_5_smooth_grids():
    assert parse_config("[grid]\nn = 48\n")["grid"]["n"] == 48


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = write_cfg(base)
    out = base / "out"
    assert run_cli(["run", "--config", cfg, "--output", out]) == 0
    return base, cfg, out


def test_run_outputs(small_run):
    _, _, out = small_run
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "completed"
    for name in ("energy.csv", "maxprinciple.csv", "resolved.ini", "summary.json",
                 "snap_000000.besnap", "snap_000060.besnap", "checkpoint/state.besnap"):
        assert name in man["artifacts"]
    for name, digest in man["sha256"].items():
        assert sha(out / name) == digest
    summ = json.loads((out / "summary.json").read_text())
    assert summ["invariants"]["energy_nonincreasing"]["pass"]
    assert summ["invariants"]["max_principle"]["pass"]


def test_determinism(small_run, tmp_path):
    _, cfg, out = small_run
    assert run_cli(["run", "--config", cfg, "--output", tmp_path / "again"]) == 0
    for name in ("snap_000060.besnap", "energy.csv", "maxprinciple.csv"):
        assert sha(out / name) == sha(tmp_path / "again" / name)
    assert run_cli(["run", "--config", cfg, "--output", tmp_path / "seed", "--seed", 8]) == 0
    assert sha(out / "snap_000060.besnap") != sha(tmp_path / "seed" / "snap_000060.besnap")


def test_restart_is_bit_identical(small_run, tmp_path):
    _, cfg, out = small_run
    ck = tmp_path / "ck"
    # checkpoint after 30 steps only
    text = SMALL.replace("t_final = 0.3", "t_final = 0.15")
    short = write_cfg(tmp_path, text, "short.ini")
    assert run_cli(["run", "--config", short, "--output", ck]) == 0
    assert run_cli(["run", "--config", cfg, "--output", tmp_path / "cont",
                    "--restart", ck / "checkpoint"]) == 0
    assert sha(out / "snap_000060.besnap") == sha(tmp_path / "cont" / "snap_000060.besnap")


def test_resolved_config_reproduces_run(tmp_path, monkeypatch):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
    text = SMALL + "directory = rel-out\n"
    monkeypatch.chdir(tmp_path / "a")
    assert run_cli(["run", "--config", write_cfg(tmp_path / "a", text)]) == 0
    resolved = tmp_path / "a" / "rel-out" / "resolved.ini"
    monkeypatch.chdir(tmp_path / "b")
    assert run_cli(["run", "--config", resolved]) == 0
    ma = json.loads((tmp_path / "a" / "rel-out" / "manifest.json").read_text())["sha256"]
    mb = json.loads((tmp_path / "b" / "rel-out" / "manifest.json").read_text())["sha256"]
    assert ma == mb


def test_diagnose_matches_in_run(small_run, tmp_path):
    _, _, out = small_run
    # snapshot every step so the offline stream sees the same states
    text = SMALL.replace("snapshot_every = 10", "snapshot_every = 1").replace("t_final = 0.3", "t_final = 0.05")
    cfg = write_cfg(tmp_path, text)
    assert run_cli(["run", "--config", cfg, "--output", tmp_path / "r"]) == 0
    assert run_cli(["diagnose", tmp_path / "r", "--output", tmp_path / "d"]) == 0
    a = (tmp_path / "r" / "energy.csv").read_text()
    b = (tmp_path / "d" / "energy.csv").read_text()
    assert a == b


def test_exit_codes(tmp_path, capsys):
    assert run_cli(["run", "--config", write_cfg(tmp_path, "[grid]\nn = 15\n", "bad.ini")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert run_cli(["run", "--config", tmp_path / "missing.ini"]) == 2
    blow = "[grid]\nn = 16\n[sim]\ndt = 0.5\nt_final = 5\nu_amp = 50\nmax_halvings = 1\n"
    out = tmp_path / "blow"
    assert run_cli(["run", "--config", write_cfg(tmp_path, blow, "blow.ini"), "--output", out]) == 3
    assert (out / "blowup_last_good.besnap").is_file()
    assert json.loads((out / "manifest.json").read_text())["status"] == "blow-up"
    snaps = tmp_path / "snaps"
    snaps.mkdir()
    p = _corrupt(tmp_path, b"n=8 8", b"n=8 9", "snaps/snap_000000.besnap")
    capsys.readouterr()
    assert run_cli(["diagnose", snaps]) == 4
    err = capsys.readouterr().err
    assert str(p) in err and "'n'" in err
    assert run_cli(["diagnose", tmp_path / "empty-dir"]) == 2


def test_potential_table(tmp_path, capsys):
    assert run_cli(["potential-table", "--n-side", 4]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) > 3 and len(set(lines)) == len(lines)
    bm = write_cfg(tmp_path, "[potential]\nvariant = bm\n", "bm.ini")
    assert run_cli(["potential-table", "--config", bm, "--m-sweep", "10,100", "--output", tmp_path]) == 0
    assert (tmp_path / "potential_table.csv").read_text().count("\n") > 3
    assert run_cli(["potential-table", "--config", bm, "--m-sweep", "x"]) == 2


def test_module_entry_point_selftest():
    proc = subprocess.run([sys.executable, "-m", "beris", "selftest"], capture_output=True,
                          text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    assert report["pass"] and all(r["pass"] for r in report["results"])
