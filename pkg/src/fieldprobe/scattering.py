"""Scattering map for a system field coupled to probe fields.

The coupled dynamics ``T = P (+) Q + R`` differs from the free one by the
off-diagonal coupling ``R``.  A free smearing ``F`` supported after the coupling
region is scattered to ``F - R E_T^- F``; its free class is the image of
``F`` under the scattering map.  Induced system observables, variances, the
deformed product on probe observables and the complete-positivity gap are
built on top of this single operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .green import (
    CoupledOperator,
    GridFunction,
    MultiComponentFunction,
    SolverError,
    advanced,
    as_components,
    pairing,
    push_to_region,
)
from .lattice import Region, causal_hull, causal_past, cone_wraps, in_out_regions
from .states import QuasifreeState
from .weyl import LayoutError, PhaseSpace, PolyObservable, SmearingClass, WeylSum


@dataclass(frozen=True, eq=False)
class ScatteringContext:
    """Free operator, coupling profiles and the derived regions.

    Component 0 (or the first ``n_system`` components) is the system; the
    rest are probes.  ``coupling`` maps ``(a, b)`` pairs to real profiles.
    """

    free: CoupledOperator
    coupling: Mapping = None
    n_system: int = 1
    n0: int | None = None
    check_wrap: bool = True
    coupled: CoupledOperator = field(init=False)
    space: PhaseSpace = field(init=False)
    region: Region = field(init=False)
    m_plus: Region = field(init=False)
    m_minus: Region = field(init=False)

    def __post_init__(self):
        free = self.free.free_part()
        coupled = free.with_coupling(self.coupling or {})
        if not 1 <= self.n_system < free.n_components:
            raise LayoutError("need at least one system and one probe component")
        for a, b in coupled.coupling:
            if (a < self.n_system) == (b < self.n_system):
                raise LayoutError(f"coupling {(a, b)} does not connect system and probe")
        K = coupled.coupling_region()
        lat = free.lattice
        if K.is_empty:
            m_plus = m_minus = lat.full()
        else:
            m_plus, m_minus = in_out_regions(K)
        object.__setattr__(self, "free", free)
        object.__setattr__(self, "coupling", dict(coupled.coupling))
        object.__setattr__(self, "coupled", coupled)
        object.__setattr__(self, "space", PhaseSpace(free, self.n0))
        object.__setattr__(self, "n0", self.space.n0)
        object.__setattr__(self, "region", K)
        object.__setattr__(self, "m_plus", m_plus)
        object.__setattr__(self, "m_minus", m_minus)

    @classmethod
    def single_probe(cls, lattice, m_system: float, m_probe: float, rho, lam: float = 1.0, **kw):
        """System plus one probe with coupling ``lam * rho`` between them."""
        free = CoupledOperator(lattice, (m_system, m_probe))
        rho = rho.values.real if isinstance(rho, GridFunction) else np.asarray(rho, dtype=float)
        return cls(free, {(0, 1): lam * rho}, **kw)

    @classmethod
    def two_probe(cls, lattice, m_system: float, m_probe1: float, m_probe2: float, rho1, rho2, **kw):
        free = CoupledOperator(lattice, (m_system, m_probe1, m_probe2))
        return cls(free, {(0, 1): rho1, (0, 2): rho2}, **kw)

    @property
    def lattice(self):
        return self.free.lattice

    @property
    def n_components(self) -> int:
        return self.free.n_components

    @property
    def n_probe(self) -> int:
        return self.n_components - self.n_system

    @property
    def system_space(self) -> PhaseSpace:
        return self.space.subspace(range(self.n_system))

    @property
    def probe_space(self) -> PhaseSpace:
        return self.space.subspace(range(self.n_system, self.n_components))

    @property
    def system_operator(self) -> CoupledOperator:
        return self.system_space.operator

    @property
    def probe_operator(self) -> CoupledOperator:
        return self.probe_space.operator

    def scaled(self, lam: float) -> "ScatteringContext":
        return ScatteringContext(self.free, {k: lam * v for k, v in self.coupling.items()},
                                 self.n_system, self.n0, self.check_wrap)

    def rho(self, pair=None) -> GridFunction:
        if pair is None:
            if len(self.coupling) != 1:
                raise LayoutError("context has several couplings; name the pair")
            pair = next(iter(self.coupling))
        return GridFunction(self.lattice, self.coupling.get(tuple(pair), np.zeros(self.lattice.shape)))

    def embed_probe(self, h) -> MultiComponentFunction:
        """Place a probe smearing into the full component layout."""
        h = as_components(h, self.n_probe)
        arr = np.zeros((self.n_components,) + self.lattice.shape, dtype=complex)
        arr[self.n_system:] = h.values
        return MultiComponentFunction(self.lattice, arr)

    def embed_system(self, f) -> MultiComponentFunction:
        f = as_components(f, self.n_system)
        arr = np.zeros((self.n_components,) + self.lattice.shape, dtype=complex)
        arr[: self.n_system] = f.values
        return MultiComponentFunction(self.lattice, arr)

    def push_step(self) -> int:
        """First slice after the coupling region (canonical cut-off)."""
        if self.region.is_empty:
            return self.n0
        return self.region.time_extent()[1] + 1


def to_m_plus(ctx: ScatteringContext, F) -> MultiComponentFunction:
    """Return ``F`` if it lies in ``M+``, otherwise its canonical push there."""
    F = as_components(F, ctx.n_components)
    if F.support.issubset(ctx.m_plus):
        return F
    return push_to_region(ctx.free, F, ctx.m_plus, step=ctx.push_step())


def scatter(ctx: ScatteringContext, F) -> MultiComponentFunction:
    """``F - R E_T^- F`` for ``F`` in ``M+`` (pushed there first if needed)."""
    F = to_m_plus(ctx, F)
    if not ctx.coupling:
        return F
    if ctx.check_wrap and cone_wraps(F.support, "past"):
        raise SolverError("cone wrap detected")
    phi = advanced(ctx.coupled, F, check_wrap=False)
    return F - ctx.coupled.coupling_apply(phi)


def theta_class(ctx: ScatteringContext, cls: SmearingClass) -> SmearingClass:
    """Image of a free class under the scattering map."""
    if cls.space != ctx.space:
        raise LayoutError("class does not belong to the scattering context")
    return ctx.space.cls(scatter(ctx, cls.representative()))


def theta(ctx: ScatteringContext, a: WeylSum) -> WeylSum:
    """Scattering map on Weyl sums of the combined system."""
    if a.space != ctx.space:
        raise LayoutError("Weyl sum does not belong to the scattering context")
    return WeylSum(ctx.space, [(c, theta_class(ctx, s)) for c, s in a.terms])


def eta(ctx: ScatteringContext, sigma: QuasifreeState, a: WeylSum) -> WeylSum:
    """Partial expectation in the probe slots: ``A (x) B -> sigma(B) A``."""
    if a.space != ctx.space:
        raise LayoutError("Weyl sum does not belong to the scattering context")
    if sigma.space != ctx.probe_space:
        raise LayoutError("probe state layout mismatch")
    sys_space = ctx.system_space
    k = ctx.n_system
    terms = []
    for c, s in a.terms:
        probe = SmearingClass(sigma.space, s.data[k:])
        terms.append((c * sigma.expect_weyl(WeylSum(sigma.space, [(1.0, probe)])), SmearingClass(sys_space, s.data[:k])))
    return WeylSum(sys_space, terms)


@dataclass(frozen=True)
class ScatteredPair:
    """System and probe parts of a scattered probe smearing."""

    f_minus: GridFunction
    h_minus: GridFunction | MultiComponentFunction
    h: GridFunction | MultiComponentFunction

    def support_report(self, ctx: ScatteringContext) -> dict:
        """Cells of ``f-`` and ``h- - h`` outside ``supp rho & J-(supp h)``."""
        h = as_components(self.h)
        allowed = ctx.region
        if not h.support.is_empty:
            allowed = allowed & causal_past(h.support)
        else:
            allowed = ctx.lattice.empty()
        diff = as_components(self.h_minus) - h
        return {
            "f_minus_violations": len(self.f_minus.support - allowed),
            "h_shift_violations": len(diff.support - allowed),
        }


def scattered_pair(ctx: ScatteringContext, h) -> ScatteredPair:
    """``(f-, h-)`` = components of ``(0, h) - R E_T^- (0, h)``."""
    H = ctx.embed_probe(h)
    out = scatter(ctx, H)
    if ctx.n_system != 1:
        raise LayoutError("scattered pairs assume a single system component")
    f_minus = out.component(0)
    if ctx.n_probe == 1:
        h_minus = out.component(1)
        h_in = as_components(h, 1).component(0)
    else:
        h_minus = MultiComponentFunction(ctx.lattice, out.values[1:])
        h_in = as_components(h, ctx.n_probe)
    return ScatteredPair(f_minus, h_minus, h_in)


def _scatter_probe_class(ctx: ScatteringContext, cls: SmearingClass) -> tuple[SmearingClass, SmearingClass]:
    """Free classes of ``f-`` (system) and ``h-`` (probe) for a probe class."""
    if cls.space != ctx.probe_space:
        raise LayoutError("probe class layout mismatch")
    out = ctx.space.cls(scatter(ctx, ctx.embed_probe(cls.representative())))
    k = ctx.n_system
    return SmearingClass(ctx.system_space, out.data[:k]), SmearingClass(ctx.probe_space, out.data[k:])


def induced_observable(ctx: ScatteringContext, sigma: QuasifreeState, b: WeylSum) -> WeylSum:
    """Induced system observable of a probe Weyl sum.

    Each term ``c e^{i Psi(h)}`` becomes ``c sigma(e^{i Psi(h-)}) e^{i Phi(f-)}``.
    """
    if b.space != ctx.probe_space or sigma.space != ctx.probe_space:
        raise LayoutError("probe layout mismatch")
    terms = []
    for c, s in b.terms:
        f_cls, h_cls = _scatter_probe_class(ctx, s)
        terms.append((c * sigma.expect_weyl(WeylSum(ctx.probe_space, [(1.0, h_cls)])), f_cls))
    return WeylSum(ctx.system_space, terms)


def induced_poly(ctx: ScatteringContext, sigma: QuasifreeState, p: PolyObservable) -> PolyObservable:
    """Induced system polynomial of a probe polynomial of degree at most two.

    ``Psi(h) -> Phi(f-) + V(h-)`` and
    ``Psi(a) o Psi(b) -> Phi(fa) o Phi(fb) + V(hb) Phi(fa) + V(ha) Phi(fb) + S(ha, hb) + V(ha) V(hb)``
    with ``S`` symmetrized.
    """
    if p.space != ctx.probe_space or sigma.space != ctx.probe_space:
        raise LayoutError("probe layout mismatch")
    sys = ctx.system_space
    cache: list[tuple[SmearingClass, tuple]] = []

    def scat(cls):
        for key, val in cache:
            if key.equals(cls):
                return val
        val = _scatter_probe_class(ctx, cls)
        cache.append((cls, val))
        return val

    const = p.const
    linear = sys.zero()
    quad = []
    if not p.linear.is_zero():
        f, h = scat(p.linear)
        linear = linear + f
        const += sigma.V(h)
    for q, a, b in p.quad:
        fa, ha = scat(a)
        fb, hb = scat(b)
        quad.append((q, fa, fb))
        linear = linear + fa * (q * sigma.V(hb)) + fb * (q * sigma.V(ha))
        const += q * (sigma.S_sym(ha, hb) + sigma.V(ha) * sigma.V(hb))
    return PolyObservable(sys, const, linear, quad)


def probe_field(ctx: ScatteringContext, h, coef: complex = 1.0) -> PolyObservable:
    return PolyObservable.field(ctx.probe_space, as_components(h, ctx.n_probe), coef)


def variance_report(ctx: ScatteringContext, omega: QuasifreeState, sigma: QuasifreeState, h) -> dict:
    """Total variance of the induced ``Psi(h)`` and its system/probe split."""
    h = as_components(h, ctx.n_probe)
    if np.any(h.values.imag):
        raise ValueError("variance report needs a real probe smearing")
    pair = scattered_pair(ctx, h)
    f_cls = ctx.system_space.cls(pair.f_minus)
    h_cls = ctx.probe_space.cls(pair.h_minus)
    var_system = omega.S(f_cls, f_cls)
    var_probe = sigma.S(h_cls, h_cls)
    psi = probe_field(ctx, h)
    first = omega.expect_poly(induced_poly(ctx, sigma, psi))
    second = omega.expect_poly(induced_poly(ctx, sigma, psi * psi))
    var_total = second - first**2
    return {
        "var_total": float(np.real(var_total)),
        "var_system": float(np.real(var_system)),
        "var_probe": float(np.real(var_probe)),
        "residual": float(abs(var_total - var_system - var_probe)),
    }


def characteristic_function(ctx: ScatteringContext, omega: QuasifreeState, sigma: QuasifreeState, h, lams) -> dict:
    """Measured characteristic function and its factorised form on a grid.

    ``measured`` is ``(omega (x) sigma)(Theta(1 (x) e^{i lam Psi(h)}))``;
    ``factorised`` is ``sigma(e^{i lam Psi(h-)}) omega(e^{i lam Phi(f-)})``.
    """
    from .states import product_state
    from .weyl import tensor_embed

    joint = product_state(omega, sigma)
    h = as_components(h, ctx.n_probe)
    pair = scattered_pair(ctx, h)
    f_cls = ctx.system_space.cls(pair.f_minus)
    h_cls = ctx.probe_space.cls(pair.h_minus)
    h_in = ctx.probe_space.cls(h)
    measured, factorised = [], []
    for lam in lams:
        B = WeylSum(ctx.probe_space, [(1.0, h_in * lam)])
        X = theta(ctx, tensor_embed(WeylSum.unit(ctx.system_space), B, ctx.space))
        measured.append(joint.expect_weyl(X))
        factorised.append(
            sigma.expect_weyl(WeylSum(ctx.probe_space, [(1.0, h_cls * lam)]))
            * omega.expect_weyl(WeylSum(ctx.system_space, [(1.0, f_cls * lam)]))
        )
    return {"lams": np.asarray(lams), "measured": np.array(measured), "factorised": np.array(factorised)}


def presymplectic_nu(ctx: ScatteringContext, h, h2) -> float:
    """``nu(h, h') = E_P(f-, f'-)`` for real probe smearings."""
    f1 = scattered_pair(ctx, h).f_minus
    f2 = scattered_pair(ctx, h2).f_minus
    return float(np.real(pairing(ctx.system_operator, f1, f2)))


def star_product(ctx: ScatteringContext, sigma, a: WeylSum, b: WeylSum) -> WeylSum:
    """Deformed product of probe Weyl sums for a quasifree probe state.

    ``e^{iPsi(h)} * e^{iPsi(h')} = G(h- + h'-) G(h-)^-1 G(h'-)^-1 e^{-i E_P(f-, f'-)/2} e^{iPsi(h + h')}``
    with ``G(k) = exp(-i V(k) + S(k, k) / 2)``.
    """
    if not isinstance(sigma, QuasifreeState):
        raise TypeError("star product is only available in closed form for quasifree probe states")
    if a.space != ctx.probe_space or b.space != ctx.probe_space:
        raise LayoutError("probe layout mismatch")
    sa = [_scatter_probe_class(ctx, s) for _, s in a.terms]
    sb = [_scatter_probe_class(ctx, s) for _, s in b.terms]
    terms = []
    for (ca, ha), (fa, hma) in zip(a.terms, sa):
        for (cb, hb), (fb, hmb) in zip(b.terms, sb):
            g = sigma.G(hma + hmb) / (sigma.G(hma) * sigma.G(hmb))
            factor = g * np.exp(-0.5j * fa.pair(fb))
            terms.append((ca * cb * factor, ha + hb))
    return WeylSum(ctx.probe_space, terms)


def star_product_linear(ctx: ScatteringContext, sigma: QuasifreeState, p: PolyObservable, q: PolyObservable) -> PolyObservable:
    """Deformed product of probe polynomials of degree at most one.

    ``Psi(h) * Psi(h') = Psi(h) o Psi(h') - S(h-, h'-) + (i/2) E_P(f-, f'-)``
    with ``S`` symmetrized; constants multiply as usual.
    """
    from .weyl import DegreeOverflow

    if p.degree > 1 or q.degree > 1:
        raise DegreeOverflow("degree overflow: deformed product implemented for linear polynomials")
    out = PolyObservable(ctx.probe_space, p.const * q.const, p.linear * q.const + q.linear * p.const)
    if not p.linear.is_zero() and not q.linear.is_zero():
        fa, ha = _scatter_probe_class(ctx, p.linear)
        fb, hb = _scatter_probe_class(ctx, q.linear)
        corr = -sigma.S_sym(ha, hb) + 0.5j * fa.pair(fb)
        out = out + PolyObservable(ctx.probe_space, corr, quad=[(1.0, p.linear, q.linear)])
    return out


def cp_gap(ctx: ScatteringContext, sigma: QuasifreeState, omega, h) -> complex:
    """``omega(eps(Psi(conj h) Psi(h)) - eps(Psi(h))* eps(Psi(h)))``.

    Complete positivity of the induced map makes this non-negative.
    """
    psi = probe_field(ctx, h)
    psi_bar = psi.adjoint()
    lhs = induced_poly(ctx, sigma, psi_bar * psi)
    e = induced_poly(ctx, sigma, psi)
    rhs = e.adjoint() * e
    return complex(omega.expect(lhs - rhs))


def localisation_report(ctx: ScatteringContext, h) -> dict:
    """Support of ``f-`` alongside the causal hull of the coupling region."""
    pair = scattered_pair(ctx, h)
    hull = causal_hull(ctx.region) if not ctx.region.is_empty else ctx.lattice.empty()
    return {
        "f_minus_cells": len(pair.f_minus.support),
        "coupling_cells": len(ctx.region),
        "hull_cells": len(hull),
        "f_minus_in_hull": pair.f_minus.support.issubset(hull) if len(hull) else pair.f_minus.support.is_empty,
    }
