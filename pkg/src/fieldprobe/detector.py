"""Perturbative detector response and its worldline form.

For coupling ``lam * rho`` and a centered probe state the measured second
moment of ``Psi(h)`` is, to second order,

    S(conj h, h) + lam**2 (W(conj h1, h1) + 2 Re S(conj h, h2)),

with ``h1 = rho E_Q^- h`` and ``h2 = rho E_P^- h1``.  When ``rho`` sits on a
single site and ``E_Q^- h`` oscillates as ``exp(i E t)`` there, ``W(conj h1, h1)``
is the switched worldline response.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .green import GridFunction, SolverError, advanced, as_components, push_to_region, step_source
from .scattering import ScatteringContext, induced_poly, probe_field
from .states import QuasifreeState, mode_table


class DetectorError(ValueError):
    """Raised for invalid detector scenarios."""


@dataclass(frozen=True)
class Worldline:
    """Static worldline at site ``x0`` with switching profile ``window`` and gap ``gap``."""

    x0: int
    window: np.ndarray
    gap: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.window, dtype=float)
        if w.ndim != 1:
            raise DetectorError("window must be a profile over time slices")
        object.__setattr__(self, "window", w)


@dataclass(frozen=True)
class DetectorScenario:
    """Base context (coupling ``rho``), probe mode ``h``, states and scale ``lam``."""

    context: ScatteringContext
    h: GridFunction
    omega: QuasifreeState
    sigma: QuasifreeState
    lam: float = 0.0
    worldline: Worldline | None = field(default=None)

    def __post_init__(self):
        if self.lam < 0:
            raise DetectorError("coupling scale must be non-negative")
        if self.context.n_probe != 1 or self.context.n_system != 1:
            raise DetectorError("detector scenarios use one system and one probe field")

    def at(self, lam: float) -> "DetectorScenario":
        return DetectorScenario(self.context, self.h, self.omega, self.sigma, lam, self.worldline)


def _rho(ctx: ScatteringContext) -> np.ndarray:
    return ctx.coupling.get((0, 1), np.zeros(ctx.lattice.shape))


def h1_h2(ctx: ScatteringContext, h) -> tuple[GridFunction, GridFunction]:
    """``h1 = rho E_Q^- h`` and ``h2 = rho E_P^- h1``; ``h`` is moved into ``M+`` first."""
    h = as_components(h, 1)
    if not h.support.issubset(ctx.m_plus):
        h = push_to_region(ctx.probe_operator, h, ctx.m_plus, step=ctx.push_step())
    rho = _rho(ctx)
    eq = advanced(ctx.probe_operator, h, check_wrap=False).values[0]
    h1 = GridFunction(ctx.lattice, rho * eq)
    ep = advanced(ctx.system_operator, h1, check_wrap=False).values[0]
    h2 = GridFunction(ctx.lattice, rho * ep)
    return h1, h2


def second_order_terms(scn: DetectorScenario) -> dict:
    """Background ``S(conj h, h)`` and the two ``lam**2`` contributions."""
    ctx = scn.context
    h1, h2 = h1_h2(ctx, scn.h)
    ps, ss = ctx.probe_space, ctx.system_space
    hb = scn.h.conj()
    return {
        "background": scn.sigma.S(ps.cls(hb), ps.cls(scn.h)),
        "system": scn.omega.W(ss.cls(h1.conj()), ss.cls(h1)),
        "probe": 2.0 * np.real(scn.sigma.S(ps.cls(hb), ps.cls(h2))),
    }


def lambda2_coefficient(scn: DetectorScenario) -> float:
    t = second_order_terms(scn)
    return float(np.real(t["system"] + t["probe"]))


def perturbative_expectation(scn: DetectorScenario) -> float:
    """``S(conj h, h) + lam**2 (W(conj h1, h1) + 2 Re S(conj h, h2))``."""
    if not scn.sigma.is_centered:
        raise DetectorError("perturbative formula requires centered probe state")
    t = second_order_terms(scn)
    return float(np.real(t["background"] + scn.lam**2 * (t["system"] + t["probe"])))


def exact_expectation(scn: DetectorScenario) -> float:
    """``omega(eps_sigma(Psi(conj h) Psi(h)))`` with the coupling scaled by ``lam``."""
    ctx = scn.context.scaled(scn.lam)
    psi = probe_field(ctx, scn.h)
    value = scn.omega.expect(induced_poly(ctx, scn.sigma, psi.adjoint() * psi))
    return float(np.real(value))


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.abs(np.asarray(ys, dtype=float))
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def born_sweep(scn: DetectorScenario, lams) -> dict:
    """Exact and perturbative expectations over ``lams`` with the fitted slope of their gap."""
    rows = []
    for lam in lams:
        s = scn.at(lam)
        ex, pt = exact_expectation(s), perturbative_expectation(s)
        rows.append((float(lam), ex, pt, ex - pt))
    diffs = [r[3] for r in rows]
    return {"rows": rows, "slope": loglog_slope([r[0] for r in rows], diffs)}


def richardson_lambda2(scn: DetectorScenario, lam: float) -> float:
    """``lam**2`` coefficient of the exact expectation by one Richardson step."""
    g0 = exact_expectation(scn.at(0.0))

    def c(x):
        return (exact_expectation(scn.at(x)) - g0) / x**2

    return (4.0 * c(lam / 2) - c(lam)) / 3.0


# ---------------------------------------------------------------------------
# worldline


def _check_window(lattice, wl: Worldline):
    if wl.window.shape != (lattice.n_t,):
        raise DetectorError("window length must equal the number of time slices")
    if wl.window[0] != 0 or wl.window[-1] != 0:
        raise DetectorError("window touches boundary")


def worldline_response(state: QuasifreeState, wl: Worldline, method: str = "cells") -> complex:
    """``dt^2 sum e^{-iE(n-n')dt} w(n) w(n') W(delta_n, delta_n')`` along a static worldline.

    ``method="cells"`` assembles the cell two-point matrix from unit-integral
    deltas; ``method="smeared"`` evaluates one smeared two-point function.
    """
    space = state.space
    lat = space.lattice
    if space.n_components != 1:
        raise DetectorError("worldline response needs a single-component state")
    _check_window(lat, wl)
    n = np.arange(lat.n_t)
    ts = np.nonzero(wl.window)[0]
    if ts.size == 0:
        return 0j
    phase = np.exp(-1j * wl.gap * n * lat.dt)
    if method == "cells":
        classes = [space.cls(GridFunction.delta(lat, int(t), wl.x0, normalized=True)) for t in ts]
        D = np.array([c.data.reshape(-1) for c in classes])
        Wc = D @ state.S_matrix @ D.T + np.outer(D @ state.v, D @ state.v)
        c1 = wl.window[ts] * phase[ts]
        c2 = wl.window[ts] * phase[ts].conj()
        return complex(lat.dt**2 * c1 @ Wc @ c2)
    if method == "smeared":
        F = np.zeros(lat.shape, dtype=complex)
        G = np.zeros(lat.shape, dtype=complex)
        F[:, wl.x0 % lat.n_x] = wl.window * phase / lat.dx
        G[:, wl.x0 % lat.n_x] = wl.window * phase.conj() / lat.dx
        return complex(state.W(space.cls(GridFunction(lat, F)), space.cls(GridFunction(lat, G))))
    raise ValueError(f"unknown method {method!r}")


def uniform_mode_source(ctx: ScatteringContext, step: int | None = None) -> tuple[GridFunction, float]:
    """Probe smearing whose advanced solution is ``exp(i Omega_0 n dt)`` before ``step``.

    Returns the smearing and the frequency ``Omega_0`` of the uniform probe mode.
    """
    lat = ctx.lattice
    _, _, Omega = mode_table(lat, ctx.probe_operator.masses[0])
    w0 = float(Omega[0])
    u = np.exp(1j * w0 * np.arange(lat.n_t) * lat.dt)[:, None] * np.ones(lat.n_x)
    s = ctx.push_step() if step is None else step
    return step_source(ctx.probe_operator, u[None], s).component(0), w0


def box_coupling(lattice, window, x0: int, width: int) -> np.ndarray:
    """``rho(n, x) = window(n) / (width dx)`` on ``width`` sites around ``x0``."""
    rho = np.zeros(lattice.shape)
    xs = (x0 - (width - 1) // 2 + np.arange(width)) % lattice.n_x
    rho[:, xs] = np.asarray(window, dtype=float)[:, None] / (width * lattice.dx)
    return rho


def worldline_sweep(lattice, m_system: float, m_probe: float, window, x0: int, widths, omega=None) -> list[dict]:
    """Compare ``W(conj h1, h1)`` with the worldline response as ``rho`` narrows.

    ``h`` is the pushed uniform probe mode, so the gap equals its frequency.
    At width one the two agree exactly.
    """
    from .states import vacuum

    if omega is None:
        omega = vacuum(lattice, m_system)
    rows = []
    for width in widths:
        rho = box_coupling(lattice, window, x0, width)
        ctx = ScatteringContext.single_probe(lattice, m_system, m_probe, rho)
        h, w0 = uniform_mode_source(ctx)
        h1, _ = h1_h2(ctx, h)
        ss = ctx.system_space
        smeared = complex(omega.W(ss.cls(h1.conj()), ss.cls(h1)))
        resp = worldline_response(omega, Worldline(x0, window, w0))
        rows.append({
            "width": int(width),
            "smeared": smeared.real,
            "worldline": resp.real,
            "rel_diff": abs(smeared - resp) / abs(resp),
        })
    return rows


__all__ = [
    "DetectorError",
    "DetectorScenario",
    "Worldline",
    "h1_h2",
    "perturbative_expectation",
    "exact_expectation",
    "born_sweep",
    "richardson_lambda2",
    "lambda2_coefficient",
    "worldline_response",
    "worldline_sweep",
    "uniform_mode_source",
    "box_coupling",
    "loglog_slope",
    "SolverError",
]
