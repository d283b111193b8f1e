"""Named experiments run from a scenario configuration.

Every experiment returns an :class:`Outcome` holding outputs, residuals with
their tolerances, optional grids (written as CSV) and optional tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .detector import (
    DetectorScenario,
    Worldline,
    born_sweep,
    lambda2_coefficient,
    loglog_slope,
    richardson_lambda2,
    uniform_mode_source,
    worldline_response,
    worldline_sweep,
    h1_h2,
)
from .green import CoupledOperator, GridFunction, MultiComponentFunction, advanced, born_series
from .instruments import (
    PreInstrument,
    chained_post_selection,
    compose_instruments,
    effect,
    factorization_residual,
)
from .lattice import causal_future
from .scattering import (
    characteristic_function,
    induced_observable,
    presymplectic_nu,
    probe_field,
    scattered_pair,
    star_product,
    star_product_linear,
    theta,
    variance_report,
)
from .states import mode_table, product_state
from .weyl import WeylSum, tensor_embed, weyl_product


@dataclass
class Outcome:
    outputs: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, key: str, value: float, tol: float):
        self.residuals[key] = float(value)
        self.tolerances[key] = float(tol)

    @property
    def passed(self) -> bool:
        return all(self.residuals[k] <= self.tolerances[k] for k in self.residuals)


@dataclass(frozen=True)
class Entry:
    name: str
    run: Callable
    required: tuple = ()
    optional: tuple = ()
    needs_probes: int = 1
    doc: str = ""


REGISTRY: dict[str, Entry] = {}


def register(name, required=(), optional=(), needs_probes=1):
    def deco(fn):
        REGISTRY[name] = Entry(name, fn, tuple(required), tuple(optional), needs_probes,
                               (fn.__doc__ or "").strip().splitlines()[0])
        return fn

    return deco


def catalogue() -> list[dict]:
    return [
        {"name": e.name, "required": list(e.required), "optional": list(e.optional),
         "probes": e.needs_probes, "description": e.doc}
        for e in sorted(REGISTRY.values(), key=lambda e: e.name)
    ]


def _tol(scn, exp: str, key: str, default: float) -> float:
    return float(scn.tolerances.get(f"{exp}.{key}", scn.tolerances.get(key, default)))


def _weyl_gap(a: WeylSum, b: WeylSum) -> float:
    return max((abs(c) for c, _ in (a - b).terms), default=0.0)


def _band(ctx, rng, n_slices: int = 2, complex_values: bool = False, offset: int = 1) -> GridFunction:
    """Random smearing on full slices just after the coupling region."""
    lat = ctx.lattice
    s = min(ctx.push_step() + offset, lat.n_t - 1 - n_slices)
    vals = rng.normal(size=(n_slices, lat.n_x)) * 0.3
    if complex_values:
        vals = vals + 0.3j * rng.normal(size=vals.shape)
    arr = np.zeros(lat.shape, dtype=complex)
    arr[s:s + n_slices] = vals
    return GridFunction(lat, arr)


def _probe_h(scn, spec, ctx):
    name = spec.get("h")
    g = scn.functions.get(name) if name else None
    if g is None:
        g, _ = uniform_mode_source(ctx)
    return g


# ---------------------------------------------------------------------------


@register("scattered_pair", required=("h",), optional=("probe",))
def run_scattered_pair(scn, spec, rng) -> Outcome:
    """Scattered smearings (f-, h-) of a probe mode and their support check."""
    ctx = scn.context(int(spec.get("probe", 1)))
    h = _probe_h(scn, spec, ctx)
    pair = scattered_pair(ctx, h)
    rep = pair.support_report(ctx)
    out = Outcome()
    out.outputs.update({
        "f_minus_max": pair.f_minus.max_abs(),
        "f_minus_cells": len(pair.f_minus.support),
        "h_shift_max": (pair.h_minus - pair.h).max_abs(),
        "coupling_strength": ctx.coupled.coupling_strength(),
    })
    if ctx.region.is_empty or causal_future(ctx.region).isdisjoint(h.support):
        out.outputs["outside_future_of_coupling"] = True
        out.check("f_minus_outside_future", pair.f_minus.max_abs(), 0.0)
    out.check("f_minus_violations", rep["f_minus_violations"], 0)
    out.check("h_shift_violations", rep["h_shift_violations"], 0)
    h1, h2 = h1_h2(ctx, h)
    out.grids.update({"f_minus": pair.f_minus, "h_minus": pair.h_minus, "h1": h1, "h2": h2})
    return out


@register("induced_observable", optional=("probe", "samples", "terms"))
def run_induced_observable(scn, spec, rng) -> Outcome:
    """omega(eps_sigma(B)) against (omega x sigma)(Theta(1 x B)) for random Weyl B."""
    probe = int(spec.get("probe", 1))
    ctx = scn.context(probe)
    omega, sigma = scn.state("system"), scn.state(f"probe{probe}")
    joint = product_state(omega, sigma)
    worst = 0.0
    worst_unit = worst_adj = 0.0
    for _ in range(int(spec.get("samples", 5))):
        terms = [(complex(*rng.normal(size=2)), ctx.probe_space.cls(_band(ctx, rng)))
                 for _ in range(int(spec.get("terms", 3)))]
        B = WeylSum(ctx.probe_space, terms)
        eps = induced_observable(ctx, sigma, B)
        lhs = omega.expect(eps)
        rhs = joint.expect(theta(ctx, tensor_embed(WeylSum.unit(ctx.system_space), B, ctx.space)))
        worst = max(worst, abs(lhs - rhs))
        worst_adj = max(worst_adj, _weyl_gap(induced_observable(ctx, sigma, B.adjoint()), eps.adjoint()))
    unit = induced_observable(ctx, sigma, WeylSum.unit(ctx.probe_space))
    worst_unit = _weyl_gap(unit, WeylSum.unit(ctx.system_space))
    out = Outcome()
    out.check("identity", worst, _tol(scn, "induced_observable", "identity", 1e-9))
    out.check("unit", worst_unit, 1e-12)
    out.check("adjoint", worst_adj, 1e-9)
    return out


@register("variance", required=("h",), optional=("probe", "grid_points", "lam_max"))
def run_variance(scn, spec, rng) -> Outcome:
    """Variance decomposition and characteristic-function factorisation."""
    probe = int(spec.get("probe", 1))
    ctx = scn.context(probe)
    omega, sigma = scn.state("system"), scn.state(f"probe{probe}")
    h = _probe_h(scn, spec, ctx)
    h = GridFunction(h.lattice, h.values.real)
    rep = variance_report(ctx, omega, sigma, h)
    lams = np.linspace(-float(spec.get("lam_max", 1.0)), float(spec.get("lam_max", 1.0)),
                       int(spec.get("grid_points", 21)))
    cf = characteristic_function(ctx, omega, sigma, h, lams)
    out = Outcome(outputs={k: v for k, v in rep.items() if k != "residual"})
    out.check("variance", rep["residual"], _tol(scn, "variance", "variance", 1e-10))
    out.check("characteristic", float(np.max(np.abs(cf["measured"] - cf["factorised"]))),
              _tol(scn, "variance", "characteristic", 1e-9))
    out.tables["characteristic"] = (
        ["lam", "re", "im"], [(float(l), float(v.real), float(v.imag)) for l, v in zip(lams, cf["measured"])])
    return out


@register("star_product", optional=("probe", "samples"))
def run_star_product(scn, spec, rng) -> Outcome:
    """Homomorphism, associativity and adjoint rules of the deformed product."""
    probe = int(spec.get("probe", 1))
    ctx = scn.context(probe)
    sigma = scn.state(f"probe{probe}")
    ps = ctx.probe_space
    hom = assoc = adj = comm = 0.0
    nus = []
    for _ in range(int(spec.get("samples", 3))):
        a, b, c = (WeylSum.generator(ps, _band(ctx, rng, offset=k), complex(*rng.normal(size=2))) for k in range(3))
        ab = star_product(ctx, sigma, a, b)
        hom = max(hom, _weyl_gap(induced_observable(ctx, sigma, ab),
                                 weyl_product(induced_observable(ctx, sigma, a), induced_observable(ctx, sigma, b))))
        assoc = max(assoc, _weyl_gap(star_product(ctx, sigma, ab, c), star_product(ctx, sigma, a, star_product(ctx, sigma, b, c))))
        adj = max(adj, _weyl_gap(ab.adjoint(), star_product(ctx, sigma, b.adjoint(), a.adjoint())))
        h, h2 = _band(ctx, rng), _band(ctx, rng, offset=2)
        p, q = probe_field(ctx, h), probe_field(ctx, h2)
        bracket = star_product_linear(ctx, sigma, p, q) - star_product_linear(ctx, sigma, q, p)
        nu = presymplectic_nu(ctx, h, h2)
        nus.append(nu)
        comm = max(comm, abs(bracket.const - 1j * nu) + bracket.linear.scale()
                   + sum(abs(t) for t, _, _ in bracket.quad))
    out = Outcome(outputs={"nu": nus})
    tol = _tol(scn, "star_product", "tolerance", 1e-9)
    out.check("homomorphism", hom, tol)
    out.check("associativity", assoc, tol)
    out.check("adjoint", adj, tol)
    out.check("commutator", comm, tol)
    return out


def _random_effect(space, ctx, rng):
    C = WeylSum(space, [(complex(*rng.normal(size=2)) * 0.5, space.cls(_band(ctx, rng))) for _ in range(2)])
    return effect(C)


@register("instruments_compose", optional=("samples",), needs_probes=2)
def run_instruments_compose(scn, spec, rng) -> Outcome:
    """Sequential against combined two-probe instruments, and chained post-selection."""
    c1, c2 = scn.context(1), scn.context(2)
    omega = scn.state("system")
    seq = rev = chain = 0.0
    disjoint = False
    values = []
    later = c1 if c1.push_step() >= c2.push_step() else c2
    for _ in range(int(spec.get("samples", 3))):
        inst1 = PreInstrument(c1, scn.state("probe1"), _random_effect(c1.probe_space, later, rng))
        inst2 = PreInstrument(c2, scn.state("probe2"), _random_effect(c2.probe_space, later, rng))
        A = WeylSum.generator(c1.system_space, _band(later, rng, offset=2), complex(*rng.normal(size=2)))
        res = compose_instruments(inst1, inst2, omega, A)
        values.append(res["combined"])
        seq = max(seq, res["residual"])
        if "reversed" in res:
            disjoint = True
            rev = max(rev, res["reversed_residual"])
        chain = max(chain, chained_post_selection(inst1, inst2, omega, A)["residual"])
    out = Outcome(outputs={"combined": values, "causally_disjoint": disjoint})
    tol = _tol(scn, "instruments_compose", "tolerance", 1e-9)
    out.check("composite", seq, tol)
    out.check("chained_post_selection", chain, tol)
    if disjoint:
        out.check("order_exchange", rev, tol)
    return out


@register("factorization", optional=("samples",), needs_probes=2)
def run_factorization(scn, spec, rng) -> Outcome:
    """Green-function factorisation residuals for two coupling regions."""
    lat = scn.lattice
    P = CoupledOperator(lat, (scn.m_system,) + scn.m_probes[:2])
    k1 = {(0, 1): scn.lams[1] * scn.couplings[1]}
    k2 = {(0, 2): scn.lams[2] * scn.couplings[2]}
    K = P.with_coupling({**k1, **k2}).coupling_region()
    t_min, t_max = K.time_extent()
    adv = ret = 0.0
    grid = None
    for _ in range(int(spec.get("samples", 5))):
        f = np.zeros((3,) + lat.shape)
        s = min(t_max + 1, lat.n_t - 3)
        f[:, s:s + 2] = rng.normal(size=(3, 2, lat.n_x))
        adv = max(adv, factorization_residual(P, k1, k2, MultiComponentFunction(lat, f), "advanced"))
        g = np.zeros((3,) + lat.shape)
        s = max(t_min - 2, 1)
        g[:, s:t_min] = rng.normal(size=(3, t_min - s, lat.n_x))
        ret = max(ret, factorization_residual(P, k1, k2, MultiComponentFunction(lat, g), "retarded"))
        if grid is None:
            Q = P.with_coupling({**k1, **k2})
            grid = Q.coupling_apply(advanced(Q, MultiComponentFunction(lat, f), check_wrap=False)).component(0)
    out = Outcome(outputs={"coupling_term_max": grid.max_abs()})
    tol = _tol(scn, "factorization", "tolerance", 1e-10)
    out.check("advanced", adv, tol)
    out.check("retarded", ret, tol)
    out.grids["coupling_term"] = grid
    return out


@register("born_sweep", optional=("h", "probe", "lams", "series_lams"))
def run_born_sweep(scn, spec, rng) -> Outcome:
    """Exact against perturbative detector expectation over a coupling sweep."""
    probe = int(spec.get("probe", 1))
    ctx = scn.context(probe, lam=1.0)
    h = _probe_h(scn, spec, ctx)
    det = DetectorScenario(ctx, h, scn.state("system"), scn.state(f"probe{probe}"))
    lams = [float(x) for x in spec.get("lams", [0.1, 0.03, 0.01])]
    sweep = born_sweep(det, lams)
    coeff = lambda2_coefficient(det)
    rich = richardson_lambda2(det, lams[-1])
    # Born series of the coupled advanced Green operator
    series_lams = [float(x) for x in spec.get("series_lams", [1e-2, 3e-3, 1e-3])]
    F = ctx.embed_probe(h)
    slopes = {}
    for k in range(3):
        errs = []
        for lam in series_lams:
            exact = advanced(ctx.coupled.scaled(lam), F, check_wrap=False)
            approx = born_series(ctx.free, ctx.coupling, lam, F, k)
            errs.append(np.max(np.abs(exact.values - approx.values)))
        slopes[k] = loglog_slope(series_lams, errs)
    out = Outcome(outputs={"slope": sweep["slope"], "lambda2_formula": coeff, "lambda2_richardson": rich,
                           "series_slopes": [slopes[k] for k in range(3)]})
    out.check("slope", abs(sweep["slope"] - 4.0), _tol(scn, "born_sweep", "slope", 0.2))
    out.check("lambda2", abs(rich - coeff) / abs(coeff), _tol(scn, "born_sweep", "lambda2", 0.01))
    for k in range(3):
        out.check(f"series_slope_{k}", abs(slopes[k] - (k + 1)), _tol(scn, "born_sweep", "series_slope", 0.15))
    out.tables["born_sweep"] = (["lam", "exact", "perturbative", "diff"], sweep["rows"])
    return out


@register("worldline_response", optional=("x0", "t", "widths", "gap"))
def run_worldline(scn, spec, rng) -> Outcome:
    """Switched worldline response and the narrowing-coupling sweep."""
    lat = scn.lattice
    omega = scn.state("system")
    x0 = int(spec.get("x0", lat.n_x // 2))
    t0, t1 = (int(v) for v in spec.get("t", [lat.n_t // 4, lat.n_t // 2]))
    window = np.zeros(lat.n_t)
    window[t0:t1] = np.sin(np.pi * (np.arange(t1 - t0) + 1) / (t1 - t0 + 1)) ** 2
    gap = float(spec.get("gap", mode_table(lat, scn.m_probes[0])[2][0]))
    wl = Worldline(x0, window, gap)
    cells = worldline_response(omega, wl, "cells")
    smeared = worldline_response(omega, wl, "smeared")
    rows = worldline_sweep(lat, scn.m_system, scn.m_probes[0], window, x0,
                           [int(w) for w in spec.get("widths", [1, 3, 5])], omega)
    out = Outcome(outputs={"response": cells, "sweep": rows})
    out.check("paths", abs(cells - smeared) / max(abs(cells), 1e-300), 1e-10)
    out.check("positivity", max(0.0, -cells.real), 1e-10)
    narrow = [r for r in rows if r["width"] == 1]
    if narrow:
        out.check("width_one", narrow[0]["rel_diff"], 1e-9)
    out.tables["worldline_sweep"] = (["width", "smeared", "worldline", "rel_diff"],
                                     [(r["width"], r["smeared"], r["worldline"], r["rel_diff"]) for r in rows])
    return out


__all__ = ["REGISTRY", "Entry", "Outcome", "catalogue"]
