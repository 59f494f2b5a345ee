"""Command line interface.

Exit codes: 0 success, 1 failure (selftest invariant or unexpected error),
2 configuration error, 3 blow-up, 4 corrupt snapshot.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, potentials
from .config import RunConfig, default_config, load_config
from .errors import (BerisError, ConfigurationError, InvalidInputError, ResolutionError,
                     SnapshotFormatError)
from .grid import set_threads

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP, EXIT_SNAPSHOT = 0, 1, 2, 3, 4


def _common(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--output", help="output directory (overrides [output] directory)")
    p.add_argument("--seed", type=int, help="override [sim] seed")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads")


def build_parser():
    parser = argparse.ArgumentParser(prog="beris", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    glob = argparse.ArgumentParser(add_help=False)
    _common(glob)
    for a in glob._actions:
        a.default = argparse.SUPPRESS
    p = sub.add_parser("run", parents=[glob], help="simulate and write snapshots/diagnostics")
    p.add_argument("--restart", help="checkpoint directory to continue from")
    p = sub.add_parser("diagnose", parents=[glob], help="recompute diagnostics from snapshots")
    p.add_argument("snapshot_dir")
    p = sub.add_parser("potential-table", parents=[glob], help="tabulate the bulk potential")
    p.add_argument("--n-side", type=int, default=6, help="eigenvalue lattice resolution")
    p.add_argument("--margin", type=float, default=0.02, help="distance from the simplex edge")
    p.add_argument("--m-sweep", default="", help="comma-separated Moreau parameters (BM)")
    sub.add_parser("selftest", parents=[glob], help="reduced-size invariant suite")
    return parser


def _resolve(args) -> RunConfig:
    rc = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        rc.values["sim"]["seed"] = int(args.seed)
    if args.output:
        rc.values["output"]["directory"] = args.output
    return rc


def cmd_run(args):
    from .runner import run_simulation

    rc = _resolve(args)
    man = run_simulation(rc, rc["output"]["directory"], restart=args.restart)
    if man["status"] == "blow-up":
        print(f"blow-up: last good snapshot {man['last_good_snapshot']}", file=sys.stderr)
        return EXIT_BLOWUP
    print(f"completed: {len(man['artifacts'])} artifacts in {rc['output']['directory']}")
    return EXIT_OK


def cmd_diagnose(args):
    from .diagnose import diagnose

    diag_rc = load_config(args.config) if args.config else None
    paths = diagnose(args.snapshot_dir, args.output, diag_rc)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_potential_table(args):
    rc = _resolve(args)
    spec = rc.potential()
    eigs = potentials.eigen_sample_plan(args.n_side, args.margin)
    if isinstance(spec, potentials.LdG):
        _, Qs = potentials.bulk_minimum(spec)
        eigs = np.vstack([np.diag(Qs)[None, :], eigs])
    try:
        sweep = [float(x) for x in args.m_sweep.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--m-sweep: {exc}") from exc
    text = potentials.potential_table(spec, eigs, sweep)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "potential_table.csv").write_text(text)
        print(out / "potential_table.csv")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    ok, results = run_selftest()
    print(json.dumps({"pass": ok, "results": results}, indent=2))
    if not ok:
        failed = [r["id"] for r in results if not r["pass"]]
        print("failed invariants: " + ", ".join(failed), file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"run": cmd_run, "diagnose": cmd_diagnose,
            "potential-table": cmd_potential_table, "selftest": cmd_selftest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    set_threads(args.threads)
    try:
        return COMMANDS[args.command](args)
    except SnapshotFormatError as exc:
        print(f"error: corrupt snapshot {exc.path} (field '{exc.field}'): {exc}", file=sys.stderr)
        return EXIT_SNAPSHOT
    except (ConfigurationError, InvalidInputError, ResolutionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BerisError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
