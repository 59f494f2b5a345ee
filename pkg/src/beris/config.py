"""Run configuration: INI-style sections validated against a fixed schema.

Every key has a type and a default. Unknown sections or keys, malformed
values and failed range checks raise :class:`ConfigurationError` carrying
the offending line number. :meth:`RunConfig.echo` renders the fully
resolved configuration, defaults included.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

from . import potentials
from .errors import ConfigurationError
from .grid import fft_friendly
from .solver import INITIAL_KINDS, INTEGRATORS, SimConfig

FAMILIES = ("energy", "maxprinciple", "bm_monitor", "lei", "ckn")


def _floats(text):
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def _centers(text):
    """``x y t; x y t`` (or with commas) into ``[(x0, t0), ...]``."""
    out = []
    for part in text.split(";"):
        if part.strip():
            v = _floats(part)
            out.append((v[:-1], v[-1]))
    return out


def _families(text):
    fams = [x.strip() for x in text.split(",") if x.strip()]
    for f in fams:
        if f not in FAMILIES:
            raise ValueError(f"unknown diagnostic family {f!r}; choose from {FAMILIES}")
    return fams


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {options}, got {t!r}")
        return t
    return parse


# section -> key -> (parser, default, renderer)
_LIST = lambda v: ", ".join(repr(float(x)) for x in v)  # noqa: E731
_CENT = lambda v: "; ".join(" ".join(repr(float(x)) for x in list(c) + [t]) for c, t in v)  # noqa: E731
SCHEMA = {
    "grid": {
        "dim": (int, 2, str),
        "n": (int, 64, str),
    },
    "sim": {
        "dt": (float, 1e-3, repr),
        "t_final": (float, 1.0, repr),
        "integrator": (_choice(*INTEGRATORS), "imex-euler", str),
        "cfl_limit": (float, 0.5, repr),
        "store_every": (int, 1, str),
        "history_depth": (int, 8, str),
        "seed": (int, 0, str),
        "initial": (_choice(*INITIAL_KINDS), "random-smooth", str),
        "u_amp": (float, 0.3, repr),
        "q_max": (float, 0.5, repr),
        "margin": (float, 0.05, repr),
        "L": (float, 1.0, repr),
        "Gamma": (float, 1.0, repr),
        "mu": (float, 1.0, repr),
        "max_halvings": (int, 12, str),
    },
    "potential": {
        "variant": (_choice("ldg", "bm"), "ldg", str),
        "a": (float, 0.03, repr),
        "b": (float, 1.0, repr),
        "c": (float, 1.0, repr),
        "nu": (float, 1.0, repr),
        "kappa": (float, 4.0, repr),
        "m": (float, 100.0, repr),
        "quad_degree": (int, 35, str),
        "quad_kind": (_choice("lebedev", "product"), "lebedev", str),
        "newton_tol": (float, 1e-10, repr),
        "newton_max_iter": (int, 60, str),
    },
    "diagnostics": {
        "families": (_families, ["energy", "maxprinciple"], lambda v: ", ".join(v)),
        "energy_every": (int, 1, str),
        "monitor_every": (int, 10, str),
        "ckn_every": (int, 5, str),
        "ckn_centers": (_centers, [], _CENT),
        "ckn_radii": (_floats, [], _LIST),
        "eps0": (float, 0.1, repr),
        "eps1": (float, 0.1, repr),
        "lei_center": (_floats, [3.141592653589793, 3.141592653589793], _LIST),
        "lei_radius": (float, 1.5, repr),
        "lei_t_on": (float, 0.05, repr),
        "lei_t_full": (float, 0.25, repr),
    },
    "output": {
        "directory": (str, "run-output", str),
        "snapshot_every": (int, 100, str),
        "checkpoint_every": (int, 0, str),
        "write_final": (_bool, True, lambda v: "true" if v else "false"),
    },
}


@dataclass
class RunConfig:
    """Resolved configuration; ``values[section][key]`` holds parsed values."""

    values: dict
    source: str = ""
    lines: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, section):
        return self.values[section]

    def echo(self) -> str:
        out = []
        for sec, keys in SCHEMA.items():
            out.append(f"[{sec}]")
            for key, (_, _, render) in keys.items():
                out.append(f"{key} = {render(self.values[sec][key])}")
            out.append("")
        return "\n".join(out)

    def potential(self) -> potentials.PotentialSpec:
        p = self.values["potential"]
        try:
            if p["variant"] == "ldg":
                return potentials.LdG(p["a"], p["b"], p["c"])
            return potentials.BM(p["nu"], p["kappa"], p["m"], p["quad_degree"], p["quad_kind"],
                                 p["newton_tol"], p["newton_max_iter"])
        except Exception as exc:       # invalid parameter combination
            raise ConfigurationError(str(exc), self.lines.get(("potential", "variant"))) from exc

    def sim_config(self) -> SimConfig:
        s = self.values["sim"]
        try:
            return SimConfig(s["dt"], s["t_final"], self.potential(), s["integrator"],
                             s["cfl_limit"], s["store_every"], s["history_depth"], s["seed"],
                             s["L"], s["Gamma"], s["mu"], s["max_halvings"])
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), self.lines.get(("sim", "dt"))) from exc

    def as_dict(self):
        return {sec: {k: _jsonable(v) for k, v in keys.items()} for sec, keys in self.values.items()}


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _line_index(text):
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    idx, sec = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        ln = raw.strip()
        if not ln or ln[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", ln)
        if m:
            sec = m.group(1).strip()
            idx.setdefault((sec, None), no)
            continue
        key = re.split(r"[=:]", ln, 1)[0].strip()
        idx.setdefault((sec, key), no)
    return idx


def _check_ranges(vals, lines):
    def req(cond, sec, key, msg):
        if not cond:
            raise ConfigurationError(f"[{sec}] {key}: {msg}", lines.get((sec, key)))

    g, s, o, d = vals["grid"], vals["sim"], vals["output"], vals["diagnostics"]
    req(g["dim"] in (2, 3), "grid", "dim", "must be 2 or 3")
    req(fft_friendly(g["n"]), "grid", "n", "must be even, >= 8 and have no prime factor above 5")
    req(g["dim"] == 2 or g["n"] <= 64, "grid", "n", "3-D runs are limited to n <= 64")
    req(s["dt"] > 0, "sim", "dt", "must be positive")
    req(s["t_final"] >= 0, "sim", "t_final", "must be nonnegative")
    req(s["cfl_limit"] > 0, "sim", "cfl_limit", "must be positive")
    req(s["store_every"] >= 1, "sim", "store_every", "must be >= 1")
    req(s["history_depth"] >= 2, "sim", "history_depth", "must be >= 2")
    req(0 < s["margin"] < 1 / 3, "sim", "margin", "must lie in (0, 1/3)")
    for k in ("L", "Gamma", "mu"):
        req(s[k] > 0, "sim", k, "must be positive")
    req(s["initial"] != "manufactured" or g["dim"] == 2, "sim", "initial",
        "manufactured data is 2-D only")
    for k in ("energy_every", "monitor_every", "ckn_every"):
        req(d[k] >= 1, "diagnostics", k, "must be >= 1")
    for c, _ in d["ckn_centers"]:
        req(len(c) == g["dim"], "diagnostics", "ckn_centers",
            f"each centre needs {g['dim']} coordinates and a time")
    req(len(d["lei_center"]) == g["dim"], "diagnostics", "lei_center",
        f"needs {g['dim']} coordinates")
    req(not (d["ckn_centers"] and not d["ckn_radii"]), "diagnostics", "ckn_radii",
        "required when ckn_centers is set")
    r = d["ckn_radii"]
    req(all(x > 0 for x in r) and all(b < a for a, b in zip(r, r[1:])), "diagnostics",
        "ckn_radii", "radii must be positive and strictly decreasing")
    if r and d["ckn_centers"]:
        h = 2 * 3.141592653589793 / g["n"]
        req(r[-1] >= 4 * h, "diagnostics", "ckn_radii",
            f"smallest radius {r[-1]:g} spans fewer than 4 cells (needs >= {4 * h:.4g})")
        req(d["ckn_every"] * s["dt"] <= r[-1] ** 2 / 4 * (1 + 1e-9), "diagnostics", "ckn_every",
            f"CKN cadence {d['ckn_every'] * s['dt']:g} exceeds r_min^2/4 = {r[-1] ** 2 / 4:g}")
    req(d["eps0"] >= 0 and d["eps1"] >= 0, "diagnostics", "eps0", "thresholds must be >= 0")
    for k in ("snapshot_every", "checkpoint_every"):
        req(o[k] >= 0, "output", k, "must be >= 0")


def parse_config(text: str, source="<string>") -> RunConfig:
    """Validate ``text`` and return the resolved configuration."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigurationError(f"syntax error: {exc.message.splitlines()[0]}", line) from exc
    vals = {sec: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
            for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section [{sec}]", lines.get((sec, None)))
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"unknown key '{key}' in [{sec}]", lines.get((sec, key)))
            parser = SCHEMA[sec][key][0]
            try:
                vals[sec][key] = parser(raw)
            except (ValueError, IndexError) as exc:
                raise ConfigurationError(f"[{sec}] {key}: cannot parse {raw!r} ({exc})",
                                         lines.get((sec, key))) from exc
    _check_ranges(vals, lines)
    cfg = RunConfig(vals, source, lines)
    cfg.potential()
    cfg.sim_config()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def default_config() -> RunConfig:
    return parse_config("")
