"""Command line front end: ``fieldprobe run|list|validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load
from .experiments import REGISTRY, catalogue
from .green import SolverError, grid_to_csv
from .instruments import InstrumentError
from .io import dumps, table_csv, write_text
from .lattice import RegionError

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2


def _error(out_dir: Path | None, payload: dict, as_json: bool) -> int:
    text = dumps(payload)
    if out_dir is not None:
        write_text(out_dir / "error.json", text)
    if as_json:
        sys.stdout.write(text)
    else:
        sys.stderr.write(f"validation failed: {payload['message']}\n")
        for d in payload.get("details", [])[:20]:
            sys.stderr.write(f"  {d}\n")
    return EXIT_INVALID


def run_config(path, out: str | None = None, seed: int | None = None, as_json: bool = False) -> int:
    import numpy as np

    try:
        scn = load(path)
    except ConfigError as exc:
        return _error(Path(out) if out else None, exc.to_dict(), as_json)
    out_dir = Path(out or scn.out or "reports")
    seed = scn.seed if seed is None else int(seed)
    summary = []
    seen: dict[str, int] = {}
    for idx, spec in enumerate(scn.experiments):
        name = spec["name"]
        seen[name] = seen.get(name, 0) + 1
        stem = name if seen[name] == 1 else f"{name}_{seen[name]}"
        rng = np.random.default_rng([seed, idx])
        try:
            outcome = REGISTRY[name].run(scn, spec, rng)
        except (ConfigError, RegionError, SolverError, InstrumentError) as exc:
            payload = {"error": "validation", "experiment": name, "message": str(exc),
                       "details": getattr(exc, "details", [])}
            return _error(out_dir, payload, as_json)
        report = {
            "experiment": name,
            "version": __version__,
            "config_hash": scn.config_hash,
            "seed": seed,
            "inputs": {"parameters": spec, "lattice": scn.lattice.to_dict(),
                       "masses": {"system": scn.m_system, "probes": list(scn.m_probes)}},
            "outputs": outcome.outputs,
            "residuals": outcome.residuals,
            "tolerances": outcome.tolerances,
            "passed": outcome.passed,
        }
        write_text(out_dir / f"{stem}.json", dumps(report))
        for gname, g in outcome.grids.items():
            write_text(out_dir / f"{stem}_{gname}.csv", grid_to_csv(g.lattice, g.values))
        for tname, (header, rows) in outcome.tables.items():
            write_text(out_dir / f"{stem}_{tname}.csv", table_csv(header, rows))
        summary.append({"experiment": stem, "passed": outcome.passed, "residuals": outcome.residuals})
    passed = all(s["passed"] for s in summary)
    text = dumps({"config_hash": scn.config_hash, "version": __version__, "passed": passed, "experiments": summary})
    write_text(out_dir / "summary.json", text)
    if as_json:
        sys.stdout.write(text)
    else:
        for s in summary:
            sys.stdout.write(f"{'PASS' if s['passed'] else 'FAIL'}  {s['experiment']}\n")
    return EXIT_OK if passed else EXIT_TOLERANCE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fieldprobe", description="Probe-measurement experiments on a lattice field.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiments of a configuration")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default: config 'out' or ./reports)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--json", action="store_true", help="print the summary as JSON")
    p_list = sub.add_parser("list", help="list available experiments")
    p_list.add_argument("--json", action="store_true")
    p_val = sub.add_parser("validate", help="check a configuration without running it")
    p_val.add_argument("config")
    p_val.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)

    if args.command == "list":
        cat = catalogue()
        if args.json:
            sys.stdout.write(json.dumps(cat, sort_keys=True, indent=2) + "\n")
        else:
            for e in cat:
                keys = ", ".join(e["required"]) or "-"
                sys.stdout.write(f"{e['name']:<20} required: {keys:<8} {e['description']}\n")
        return EXIT_OK
    if args.command == "validate":
        try:
            scn = load(args.config)
        except ConfigError as exc:
            return _error(None, exc.to_dict(), args.json)
        msg = {"valid": True, "config_hash": scn.config_hash, "experiments": [e["name"] for e in scn.experiments]}
        sys.stdout.write(dumps(msg) if args.json else f"valid ({len(scn.experiments)} experiments)\n")
        return EXIT_OK
    return run_config(args.config, args.out, args.seed, args.json)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
