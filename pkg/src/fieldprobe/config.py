"""Scenario configuration: TOML parsing, validation and assembly.

Example::

    seed = 7

    [lattice]
    n_t = 24
    n_x = 48
    dt = 0.5
    dx = 1.0

    [masses]
    system = 1.0
    probes = [0.8]

    [[coupling]]
    probe = 1
    shape = "bump"
    t = [8, 12]
    x = [20, 26]
    amplitude = 0.5

    [functions.h]
    shape = "rectangle"
    t = [16, 18]
    x = [14, 32]

    [[experiment]]
    name = "scattered_pair"
    h = "h"
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .green import GridFunction, grid_from_csv
from .lattice import Lattice, Region, cone_wraps
from .scattering import ScatteringContext
from .states import QuasifreeState, StateError, coherent, mode_table, vacuum


class ConfigError(ValueError):
    """Validation failure; ``details`` lists cell-level diagnostics."""

    def __init__(self, message: str, details: list | None = None):
        super().__init__(message)
        self.details = details or []

    def to_dict(self) -> dict:
        return {"error": "validation", "message": str(self), "details": self.details}


TOP_KEYS = {"seed", "out", "lattice", "masses", "coupling", "states", "functions", "experiment", "tolerances"}
PROFILE_KEYS = {"shape", "t", "x", "amplitude", "values", "csv"}
SECTION_KEYS = {
    "lattice": {"n_t", "n_x", "dt", "dx"},
    "masses": {"system", "probes"},
    "coupling": PROFILE_KEYS | {"probe", "lam"},
    "functions": PROFILE_KEYS,
    "states": {"type", "source"},
}
SHAPES = ("rectangle", "bump")


def _range(spec: dict, key: str, size: int, where: str, periodic: bool) -> tuple[int, int]:
    if key not in spec:
        raise ConfigError(f"{where}: missing '{key}' range")
    lo, hi = (int(v) for v in spec[key])
    if hi <= lo:
        raise ConfigError(f"{where}: empty '{key}' range [{lo}, {hi})")
    if not periodic and (lo < 0 or hi > size):
        raise ConfigError(f"{where}: '{key}' range [{lo}, {hi}) outside [0, {size})")
    if periodic and hi - lo > size:
        raise ConfigError(f"{where}: '{key}' range wider than the lattice")
    return lo, hi


def _check_keys(spec, section: str, where: str):
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    extra = sorted(set(spec) - SECTION_KEYS[section])
    if extra:
        raise ConfigError(f"{where}: unknown key '{extra[0]}'", extra)


def shape_profile(lattice: Lattice, spec: dict, where: str) -> np.ndarray:
    """Real or complex profile from a shape spec or explicit values."""
    if "values" in spec:
        arr = np.zeros(lattice.shape, dtype=complex)
        for row in spec["values"]:
            t, x, re = int(row[0]), int(row[1]), float(row[2])
            im = float(row[3]) if len(row) > 3 else 0.0
            if not 0 <= t < lattice.n_t:
                raise ConfigError(f"{where}: cell ({t}, {x}) outside the lattice", [[t, x]])
            arr[t, x % lattice.n_x] = complex(re, im)
        return arr
    if "csv" in spec:
        lat, values = grid_from_csv(Path(spec["csv"]).read_text())
        if lat.shape != lattice.shape:
            raise ConfigError(f"{where}: CSV grid lattice does not match")
        return values
    shape = spec.get("shape", "rectangle")
    if shape not in SHAPES:
        raise ConfigError(f"{where}: unknown shape '{shape}'")
    t0, t1 = _range(spec, "t", lattice.n_t, where, periodic=False)
    x0, x1 = _range(spec, "x", lattice.n_x, where, periodic=True)
    amp = complex(spec.get("amplitude", 1.0))
    nt, nx = t1 - t0, x1 - x0
    if shape == "rectangle":
        block = np.ones((nt, nx))
    else:
        bt = np.sin(np.pi * (np.arange(nt) + 1) / (nt + 1)) ** 2
        bx = np.sin(np.pi * (np.arange(nx) + 1) / (nx + 1)) ** 2
        block = np.outer(bt, bx)
    arr = np.zeros(lattice.shape, dtype=complex)
    arr[t0:t1, np.arange(x0, x1) % lattice.n_x] = amp * block
    return arr


@dataclass
class Scenario:
    """Validated, assembled configuration."""

    raw: dict
    lattice: Lattice
    m_system: float
    m_probes: tuple
    couplings: dict
    lams: dict
    states: dict
    functions: dict
    experiments: list
    tolerances: dict
    seed: int = 0
    out: str | None = None
    config_hash: str = ""
    _contexts: dict = field(default_factory=dict)

    def context(self, probe: int = 1, lam: float | None = None) -> ScatteringContext:
        key = (probe, lam)
        if key not in self._contexts:
            if probe not in self.couplings:
                raise ConfigError(f"no coupling configured for probe {probe}")
            scale = self.lams[probe] if lam is None else lam
            self._contexts[key] = ScatteringContext.single_probe(
                self.lattice, self.m_system, self.m_probes[probe - 1], self.couplings[probe], scale)
        return self._contexts[key]

    def state(self, name: str) -> QuasifreeState:
        return self.states[name]

    def function(self, name: str) -> GridFunction:
        if name not in self.functions:
            raise ConfigError(f"unknown function '{name}'")
        return self.functions[name]


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def load(path) -> Scenario:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    return build(raw)


def _state(lattice, mass, spec, where) -> QuasifreeState:
    _check_keys(spec, "states", where)
    kind = spec.get("type", "vacuum")
    try:
        if kind == "vacuum":
            return vacuum(lattice, mass)
        if kind == "coherent":
            if "source" not in spec:
                raise ConfigError(f"{where}: coherent state needs a 'source'")
            src = shape_profile(lattice, spec["source"], f"{where}.source")
            return coherent(lattice, mass, GridFunction(lattice, src))
    except StateError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unknown state type '{kind}'")


def build(raw: dict) -> Scenario:
    """Validate every precondition before any heavy computation."""
    from .experiments import REGISTRY

    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key '{unknown[0]}'", unknown)
    if "lattice" not in raw:
        raise ConfigError("missing [lattice] section")
    _check_keys(raw["lattice"], "lattice", "lattice")
    _check_keys(raw.get("masses", {}), "masses", "masses")
    try:
        lattice = Lattice(**{k: raw["lattice"][k] for k in ("n_t", "n_x", "dt", "dx") if k in raw["lattice"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"lattice: {exc}") from exc

    masses = raw.get("masses", {})
    m_system = float(masses.get("system", 1.0))
    m_probes = tuple(float(m) for m in masses.get("probes", [1.0]))
    for label, m in [("system", m_system)] + [(f"probe {i + 1}", m) for i, m in enumerate(m_probes)]:
        if not m > 0:
            raise ConfigError(f"masses: {label} mass must be positive")
        try:
            mode_table(lattice, m)
        except StateError as exc:
            raise ConfigError(f"masses: {label}: {exc}") from exc

    couplings, lams = {}, {}
    for i, spec in enumerate(raw.get("coupling", [])):
        where = f"coupling[{i}]"
        _check_keys(spec, "coupling", where)
        probe = int(spec.get("probe", 1))
        if not 1 <= probe <= len(m_probes):
            raise ConfigError(f"{where}: probe index {probe} has no mass")
        if probe in couplings:
            raise ConfigError(f"{where}: probe {probe} coupled twice")
        prof = shape_profile(lattice, spec, where)
        if np.any(prof.imag):
            raise ConfigError(f"{where}: coupling profiles must be real")
        prof = prof.real
        cells = np.argwhere(prof != 0)
        bad = [[int(t), int(x)] for t, x in cells if t < 2 or t > lattice.n_t - 3]
        if bad:
            raise ConfigError(f"{where}: coupling region touches temporal boundary", bad)
        couplings[probe] = prof
        lams[probe] = float(spec.get("lam", 1.0))
        mask = prof != 0
        if mask.any():
            reg = Region(lattice, mask)
            if cone_wraps(reg, "both"):
                t_min, t_max = reg.time_extent()
                raise ConfigError(f"{where}: cone wrap detected for the coupling region",
                                  [[t_min, "future"], [t_max, "past"]])

    states = {}
    st = raw.get("states", {})
    extra = sorted(set(st) - {"system", "probe"})
    if extra:
        raise ConfigError(f"states: unknown key '{extra[0]}'", extra)
    states["system"] = _state(lattice, m_system, st.get("system", {}), "states.system")
    probe_specs = st.get("probe", [{}] * len(m_probes))
    if isinstance(probe_specs, dict):
        probe_specs = [probe_specs]
    for i, m in enumerate(m_probes):
        spec = probe_specs[i] if i < len(probe_specs) else {}
        states[f"probe{i + 1}"] = _state(lattice, m, spec, f"states.probe[{i}]")

    functions = {}
    for name, spec in raw.get("functions", {}).items():
        where = f"functions.{name}"
        _check_keys(spec, "functions", where)
        if spec.get("shape") == "uniform_mode":
            functions[name] = None
            continue
        prof = shape_profile(lattice, spec, where)
        bad = [[int(t), int(x)] for t, x in np.argwhere(prof != 0) if t < 1 or t > lattice.n_t - 2]
        if bad:
            raise ConfigError(f"{where}: support touches marching boundary", bad)
        functions[name] = GridFunction(lattice, prof)

    experiments = []
    for i, spec in enumerate(raw.get("experiment", [])):
        name = spec.get("name")
        if name not in REGISTRY:
            raise ConfigError(f"experiment[{i}]: unknown experiment '{name}'", [name])
        entry = REGISTRY[name]
        extra = sorted(set(spec) - {"name"} - set(entry.required) - set(entry.optional))
        if extra:
            raise ConfigError(f"experiment[{i}] ({name}): unknown key '{extra[0]}'", extra)
        missing = [k for k in entry.required if k not in spec]
        if missing:
            raise ConfigError(f"experiment[{i}] ({name}): missing key '{missing[0]}'", missing)
        for k in ("h", "h2", "f", "A"):
            if k in spec and spec[k] not in functions:
                raise ConfigError(f"experiment[{i}] ({name}): unknown function '{spec[k]}'", [spec[k]])
        need = entry.needs_probes
        if need and any(p not in couplings for p in range(1, need + 1)):
            raise ConfigError(f"experiment[{i}] ({name}): needs couplings for {need} probe(s)")
        experiments.append(dict(spec))

    scn = Scenario(
        raw=raw,
        lattice=lattice,
        m_system=m_system,
        m_probes=m_probes,
        couplings=couplings,
        lams=lams,
        states=states,
        functions=functions,
        experiments=experiments,
        tolerances=dict(raw.get("tolerances", {})),
        seed=int(raw.get("seed", 0)),
        out=raw.get("out"),
        config_hash=config_hash(raw),
    )
    _check_supports(scn)
    return scn


def _check_supports(scn: Scenario):
    """Probe functions used by experiments must not wrap around the circle."""
    for i, spec in enumerate(scn.experiments):
        for k in ("h", "h2"):
            name = spec.get(k)
            g = scn.functions.get(name) if name else None
            if g is None:
                continue
            supp = g.support
            if not supp.is_empty and cone_wraps(supp, "past"):
                raise ConfigError(f"experiment[{i}]: cone wrap detected for function '{name}'",
                                  [list(c) for c in supp.cells()[:10]])


__all__ = ["ConfigError", "Scenario", "load", "build", "config_hash", "shape_profile"]
