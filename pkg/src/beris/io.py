"""Snapshot files (BESNAP1), JSON sidecars and checkpoints.

A snapshot is a text header followed by the raw field data::

    BESNAP1
    dim=2
    n=64 64
    fields=u0,u1,q0,q1,q2,q3,q4
    time=<float.hex>
    step=<int>
    byteorder=little
    END

then one block of little-endian float64 values per field, each in row-major
order. ``u*`` are velocity components and ``q*`` the five Q coefficients.
Times are stored as hexadecimal floats so that a round trip is bit exact.
"""
from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SnapshotFormatError
from .grid import SpectralGrid, fft_friendly

MAGIC = "BESNAP1"
_DTYPE = np.dtype("<f8")
_KEYS = ("dim", "n", "fields", "time", "step", "byteorder")


@dataclass(frozen=True)
class Snapshot:
    t: float
    step: int
    u: np.ndarray
    q: np.ndarray
    path: str = ""


def field_names(dim):
    return [f"u{i}" for i in range(dim)] + [f"q{i}" for i in range(5)]


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text):
    _atomic_write(path, text.encode("utf-8"))


def encode_snapshot(t, step, u, q) -> bytes:
    u = np.asarray(u, dtype=float)
    q = np.asarray(q, dtype=float)
    dim = u.shape[0]
    n = u.shape[1:]
    if len(n) != dim or q.shape != (5,) + n:
        raise SnapshotFormatError("field shapes are inconsistent", field="fields")
    head = "\n".join([
        MAGIC,
        f"dim={dim}",
        "n=" + " ".join(str(k) for k in n),
        "fields=" + ",".join(field_names(dim)),
        f"time={float(t).hex()}",
        f"step={int(step)}",
        "byteorder=little",
        "END",
    ]) + "\n"
    body = np.concatenate([u, q]).astype(_DTYPE, copy=False).tobytes(order="C")
    return head.encode("ascii") + body


def write_snapshot(path, t, step, u, q, meta=None):
    """Write a snapshot (atomically) and, if ``meta`` is given, its JSON sidecar."""
    _atomic_write(path, encode_snapshot(t, step, u, q))
    if meta is not None:
        atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True))
    return str(path)


def sidecar_path(path):
    return str(path) + ".json"


def read_snapshot(path) -> Snapshot:
    """Parse a snapshot; header or size problems raise ``SnapshotFormatError``."""
    path = str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotFormatError(f"{path}: cannot read ({exc})", path, "file") from exc

    def bad(field, why):
        return SnapshotFormatError(f"{path}: bad header field '{field}': {why}", path, field)

    end = raw.find(b"\nEND\n")
    if not raw.startswith(MAGIC.encode("ascii") + b"\n"):
        raise bad("magic", f"expected {MAGIC}")
    if end < 0:
        raise bad("END", "header terminator not found")
    try:
        lines = raw[:end].decode("ascii").split("\n")[1:]
    except UnicodeDecodeError as exc:
        raise bad("header", "non-ASCII header") from exc
    hdr = {}
    for ln in lines:
        key, sep, val = ln.partition("=")
        if not sep:
            raise bad(key or "header", "expected key=value")
        hdr[key] = val
    for key in _KEYS:
        if key not in hdr:
            raise bad(key, "missing")
    try:
        dim = int(hdr["dim"])
    except ValueError as exc:
        raise bad("dim", hdr["dim"]) from exc
    if dim not in (2, 3):
        raise bad("dim", "must be 2 or 3")
    try:
        n = tuple(int(k) for k in hdr["n"].split())
    except ValueError as exc:
        raise bad("n", hdr["n"]) from exc
    if len(n) != dim or len(set(n)) != 1 or not fft_friendly(n[0]):
        raise bad("n", hdr["n"])
    if hdr["fields"].split(",") != field_names(dim):
        raise bad("fields", hdr["fields"])
    try:
        t = float.fromhex(hdr["time"])
    except ValueError as exc:
        raise bad("time", hdr["time"]) from exc
    try:
        step = int(hdr["step"])
    except ValueError as exc:
        raise bad("step", hdr["step"]) from exc
    if hdr["byteorder"] != "little":
        raise bad("byteorder", hdr["byteorder"])
    body = raw[end + len(b"\nEND\n"):]
    nf = dim + 5
    expect = nf * int(np.prod(n)) * _DTYPE.itemsize
    if len(body) != expect:
        raise bad("data", f"expected {expect} bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=_DTYPE).reshape((nf,) + n).astype(float)
    return Snapshot(t, step, data[:dim].copy(), data[dim:].copy(), path)


def read_sidecar(path):
    p = sidecar_path(path)
    try:
        return json.loads(Path(p).read_text())
    except (OSError, ValueError) as exc:
        raise SnapshotFormatError(f"{p}: unreadable sidecar ({exc})", p, "sidecar") from exc


def snapshot_files(directory, prefix="snap_"):
    return sorted(str(p) for p in Path(directory).glob(f"{prefix}*.besnap"))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def write_checkpoint(directory, state, meta=None):
    """Persist a :class:`~beris.solver.SimState` including history and integrator memory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_snapshot(d / "state.besnap", state.t, state.step, state.u, state.q)
    hist = list(state.history)
    for i, h in enumerate(hist):
        write_snapshot(d / f"hist_{i:04d}.besnap", h.t, 0, h.u, h.q)
    arrays = {}
    prev = state.aux.get("prev")
    if prev is not None:
        arrays.update(prev_u=prev[0], prev_q=prev[1], prev_h=np.array(prev[2]))
    if state.aux.get("bm_dual") is not None:
        arrays["bm_dual"] = state.aux["bm_dual"]
    np.savez(d / "aux.npz", **arrays)
    info = {"history": len(hist), "history_depth": state.history.maxlen, "step": state.step,
            "meta": meta or {}}
    atomic_write_text(d / "checkpoint.json", json.dumps(info, indent=2, sort_keys=True))
    return str(d)


def read_checkpoint(directory):
    """Inverse of :func:`write_checkpoint`; returns ``(SimState, meta)``."""
    from .solver import HistoryEntry, SimState

    d = Path(directory)
    try:
        info = json.loads((d / "checkpoint.json").read_text())
    except (OSError, ValueError) as exc:
        raise SnapshotFormatError(f"{d}: unreadable checkpoint index ({exc})",
                                  str(d / "checkpoint.json"), "checkpoint") from exc
    s = read_snapshot(d / "state.besnap")
    grid = SpectralGrid(s.u.shape[0], s.u.shape[1])
    hist = deque(maxlen=int(info["history_depth"]))
    for i in range(int(info["history"])):
        h = read_snapshot(d / f"hist_{i:04d}.besnap")
        h.u.setflags(write=False)
        h.q.setflags(write=False)
        hist.append(HistoryEntry(h.t, h.u, h.q))
    aux = {}
    with np.load(d / "aux.npz") as z:
        if "prev_u" in z:
            aux["prev"] = (z["prev_u"], z["prev_q"], float(z["prev_h"]))
        if "bm_dual" in z:
            aux["bm_dual"] = z["bm_dual"]
    return SimState(grid, s.t, s.u, s.q, s.step, hist, aux), info.get("meta", {})
