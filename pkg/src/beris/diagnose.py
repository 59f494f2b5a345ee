"""Offline recomputation of diagnostics from a directory of snapshots."""
from __future__ import annotations

import json
from pathlib import Path

from . import io as bio
from .config import RunConfig, SCHEMA
from .errors import ConfigurationError, SnapshotFormatError
from .grid import SpectralGrid
from .runner import Diagnostics
from .solver import SimState


def config_from_sidecar(path) -> RunConfig:
    meta = bio.read_sidecar(path)
    try:
        vals = meta["config"]
        for sec, keys in SCHEMA.items():
            missing = set(keys) - set(vals[sec])
            if missing:
                raise KeyError(f"{sec}: {sorted(missing)}")
    except (KeyError, TypeError) as exc:
        raise SnapshotFormatError(f"{bio.sidecar_path(path)}: sidecar lacks config ({exc})",
                                  bio.sidecar_path(path), "config") from exc
    return RunConfig(vals, bio.sidecar_path(path))


def _override_diagnostics(rc: RunConfig, diag_rc: RunConfig):
    vals = {k: dict(v) for k, v in rc.values.items()}
    vals["diagnostics"] = dict(diag_rc["diagnostics"])
    return RunConfig(vals, rc.source)


def diagnose(snapshot_dir, out_dir=None, diag_config: RunConfig = None):
    """Recompute the configured diagnostics on every ``snap_*.besnap`` file.

    The in-run collectors are reused unchanged, so records computed here
    match those of the run that produced the snapshots.
    """
    src = Path(snapshot_dir)
    files = bio.snapshot_files(src)
    if not files:
        raise ConfigurationError(f"no snapshots found in {src}")
    snaps = [bio.read_snapshot(f) for f in files]
    rc = config_from_sidecar(files[0])
    if diag_config is not None:
        rc = _override_diagnostics(rc, diag_config)
    cfg = rc.sim_config()
    grid = SpectralGrid(snaps[0].u.shape[0], snaps[0].u.shape[1])
    for s in snaps:
        if s.u.shape != (grid.dim,) + grid.shape:
            raise SnapshotFormatError(f"{s.path}: grid differs from {files[0]}", s.path, "n")
    snaps.sort(key=lambda s: s.t)
    out = Path(out_dir) if out_dir is not None else src / "diagnose"
    out.mkdir(parents=True, exist_ok=True)
    diag = Diagnostics(rc, cfg, grid)
    for s in snaps:
        # snapshots are already thinned, so every one of them is observed
        diag.observe(SimState(grid, s.t, s.u, s.q, s.step), every=True)
    paths, summary = diag.emit(out)
    bio.atomic_write_text(out / "summary.json",
                          json.dumps({"source": str(src), "snapshots": len(snaps),
                                      "invariants": summary}, indent=2, sort_keys=True))
    return [str(p) for p in paths] + [str(out / "summary.json")]
