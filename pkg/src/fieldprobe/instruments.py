"""Pre-instruments, state updates and composite measurements.

A pre-instrument sends a system functional ``phi`` to

    A -> phi(eta_sigma(Theta(A (x) B))),

which for a state ``omega`` equals ``(omega (x) sigma)(Theta(A (x) B))``.
Intermediate functionals are never materialised: an :class:`UpdatedState`
just remembers the instrument and its input and evaluates lazily.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .green import CoupledOperator, MultiComponentFunction, advanced, as_components, retarded
from .lattice import Ordering, Region, causal_future, causal_orderability, causal_past
from .scattering import ScatteringContext, eta, theta
from .states import QuasifreeState, product_state
from .weyl import LayoutError, PolyObservable, WeylSum, tensor_embed, weyl_product


class InstrumentError(ValueError):
    """Raised for ill-posed updates or compositions."""


NORMALIZATION_FLOOR = 1e-12
FD_STEP = 2e-3


def _richardson(g, h: float) -> float:
    return (4.0 * g(h / 2) - g(h)) / 3.0


def poly_via_weyl(phi, p: PolyObservable, step: float = FD_STEP) -> complex:
    """Evaluate a linear functional on a polynomial through Weyl generators.

    ``Phi(l) = -i d/dlam e^{i lam Phi(l)}`` and
    ``Phi(a) o Phi(b) = -d^2/dlam dmu e^{i Phi(lam a + mu b)}`` at zero, both by
    Richardson-extrapolated central differences.
    """
    space = p.space

    def ev(cls):
        return phi(WeylSum(space, [(1.0, cls)]))

    total = p.const * phi(WeylSum.unit(space))
    if not p.linear.is_zero():
        l = p.linear

        def d1(h):
            return (ev(l * h) - ev(l * -h)) / (2 * h)

        total += -1j * _richardson(d1, step)
    for q, a, b in p.quad:

        def d2(h):
            return (ev(a * h + b * h) - ev(a * h - b * h) - ev(b * h - a * h) + ev(a * -h - b * h)) / (4 * h * h)

        total += -q * _richardson(d2, step)
    return complex(total)


def evaluate(phi, A) -> complex:
    """``phi(A)`` for a state or updated functional and a Weyl sum or polynomial."""
    if isinstance(A, PolyObservable) and not isinstance(phi, QuasifreeState):
        return poly_via_weyl(phi.expect, A)
    return phi.expect(A)


@dataclass(frozen=True)
class PreInstrument:
    """Probe preparation ``sigma`` and measured probe element ``B``."""

    context: ScatteringContext
    sigma: QuasifreeState
    B: WeylSum

    def __post_init__(self):
        if self.B.space != self.context.probe_space:
            raise LayoutError("measured element must live in the probe components")
        if self.sigma.space != self.context.probe_space:
            raise LayoutError("probe state layout mismatch")

    @property
    def system_space(self):
        return self.context.system_space

    def __call__(self, omega) -> "UpdatedState":
        return UpdatedState(self, omega, 1.0)


def apply_preinstrument(inst: PreInstrument, omega, A) -> complex:
    """``(omega (x) sigma)(Theta(A (x) B))`` for a system Weyl sum or polynomial."""
    if isinstance(A, PolyObservable):
        return poly_via_weyl(lambda a: apply_preinstrument(inst, omega, a), A)
    if A.space != inst.system_space:
        raise LayoutError("observable does not live in the system components")
    ctx = inst.context
    X = theta(ctx, tensor_embed(A, inst.B, ctx.space))
    return complex(omega.expect(eta(ctx, inst.sigma, X)))


class UpdatedState:
    """Functional ``A -> I(B)(parent)(A) / normalization``."""

    def __init__(self, instrument: PreInstrument, parent, normalization: complex = 1.0):
        self.instrument = instrument
        self.parent = parent
        self.normalization = complex(normalization)
        self.space = instrument.system_space

    def expect(self, A) -> complex:
        return apply_preinstrument(self.instrument, self.parent, A) / self.normalization

    def __call__(self, A) -> complex:
        return self.expect(A)

    def unit_value(self) -> complex:
        return self.expect(WeylSum.unit(self.space))


def post_select(inst: PreInstrument, omega) -> UpdatedState:
    """State conditioned on observing ``B``: the pre-instrument output normalized."""
    norm = apply_preinstrument(inst, omega, WeylSum.unit(inst.system_space))
    if abs(norm) <= NORMALIZATION_FLOOR:
        raise InstrumentError("vanishing normalization: effect has zero amplitude in omega")
    return UpdatedState(inst, omega, norm)


def post_select_shortcut(inst: PreInstrument, omega, A: WeylSum) -> complex:
    """``omega(A eps(B)) / omega(eps(B))``, valid for ``A`` localisable in ``K-perp``."""
    from .scattering import induced_observable

    eps = induced_observable(inst.context, inst.sigma, inst.B)
    norm = omega.expect(eps)
    if abs(norm) <= NORMALIZATION_FLOOR:
        raise InstrumentError("vanishing normalization: effect has zero amplitude in omega")
    return complex(omega.expect(weyl_product(A, eps)) / norm)


def nonselective_update(ctx: ScatteringContext, sigma: QuasifreeState, omega) -> UpdatedState:
    """Partial trace over the probe: the instrument with ``B = 1``."""
    return UpdatedState(PreInstrument(ctx, sigma, WeylSum.unit(ctx.probe_space)), omega, 1.0)


def effect(C: WeylSum) -> WeylSum:
    """``C* C``, a positive element of the Weyl algebra."""
    return weyl_product(C.adjoint(), C)


# ---------------------------------------------------------------------------
# composition


def _check_order(k1: Region, k2: Region, allow_disjoint_only: bool = False) -> Ordering:
    order = causal_orderability(k1, k2)
    if order not in (Ordering.DISJOINT, Ordering.K2_NOT_IN_PAST_OF_K1):
        raise InstrumentError("regions not causally orderable")
    return order


def combined_context(ctx1: ScatteringContext, ctx2: ScatteringContext) -> ScatteringContext:
    """Three-component context: system, probe 1, probe 2."""
    if ctx1.n_system != 1 or ctx2.n_system != 1 or ctx1.n_probe != 1 or ctx2.n_probe != 1:
        raise LayoutError("composition expects single-probe contexts")
    if ctx1.lattice != ctx2.lattice or ctx1.n0 != ctx2.n0:
        raise LayoutError("contexts live on different lattices")
    m0, m1 = ctx1.free.masses
    m0b, m2 = ctx2.free.masses
    if m0 != m0b:
        raise LayoutError("contexts disagree on the system mass")
    free = CoupledOperator(ctx1.lattice, (m0, m1, m2))
    coupling = {(0, 1): ctx1.coupling.get((0, 1), np.zeros(ctx1.lattice.shape)),
                (0, 2): ctx2.coupling.get((0, 1), np.zeros(ctx2.lattice.shape))}
    return ScatteringContext(free, coupling, 1, ctx1.n0, ctx1.check_wrap and ctx2.check_wrap)


def combined_instrument(inst1: PreInstrument, inst2: PreInstrument) -> PreInstrument:
    """``I_{sigma1 (x) sigma2}(B1 (x) B2)`` on the three-component context."""
    ctx = combined_context(inst1.context, inst2.context)
    sigma = product_state(inst1.sigma, inst2.sigma)
    B = tensor_embed(inst1.B, inst2.B, ctx.probe_space)
    return PreInstrument(ctx, sigma, B)


def compose_instruments(inst1: PreInstrument, inst2: PreInstrument, omega, A) -> dict:
    """Sequential and combined evaluation of two instruments.

    ``sequential = I2(B2)(I1(B1)(omega))(A)`` and
    ``combined = I_{sigma1 (x) sigma2}(B1 (x) B2)(omega)(A)``.  When the coupling
    regions are causally disjoint the reversed order is also reported.
    """
    K1, K2 = inst1.context.region, inst2.context.region
    order = None
    if not K1.is_empty and not K2.is_empty:
        order = _check_order(K1, K2)
    sequential = apply_preinstrument(inst2, inst1(omega), A)
    combined = apply_preinstrument(combined_instrument(inst1, inst2), omega, A)
    out = {"sequential": sequential, "combined": combined, "residual": abs(sequential - combined)}
    if order is Ordering.DISJOINT:
        out["reversed"] = apply_preinstrument(inst1, inst2(omega), A)
        out["reversed_residual"] = abs(out["reversed"] - combined)
    return out


def chained_post_selection(inst1: PreInstrument, inst2: PreInstrument, omega, A) -> dict:
    """Two-step post-selection against one-step post-selection on ``B1 (x) B2``."""
    K1, K2 = inst1.context.region, inst2.context.region
    if not K1.is_empty and not K2.is_empty:
        _check_order(K1, K2)
    step1 = post_select(inst1, omega)
    two_step = post_select(inst2, step1).expect(A)
    one_step = post_select(combined_instrument(inst1, inst2), omega).expect(A)
    return {"two_step": two_step, "one_step": one_step, "residual": abs(two_step - one_step)}


def _merge(c1: Mapping, c2: Mapping) -> dict:
    out = {k: np.array(v, dtype=float) for k, v in c1.items()}
    for k, v in c2.items():
        out[k] = out[k] + v if k in out else np.array(v, dtype=float)
    return out


def _region_of(op: CoupledOperator, coupling: Mapping) -> Region:
    return op.with_coupling(coupling).coupling_region()


def factorization_residual(free_op: CoupledOperator, coupling1: Mapping, coupling2: Mapping, f,
                           direction: str = "advanced") -> float:
    """Max-norm defect of the Green-function factorisation identity.

    advanced:  ``(1 - (Q-P)E^-) f = (1 - (Q1-P)E1^-)(1 - (Q2-P)E2^-) f`` for ``f`` off ``J^-(K)``;
    retarded:  ``(1 - (Q-P)E^+) f = (1 - (Q2-P)E2^+)(1 - (Q1-P)E1^+) f`` for ``f`` off ``J^+(K)``;
    with ``Q = Q1 + Q2 - P`` and ``J^-(K1) & J^+(K2)`` required empty.
    """
    P = free_op.free_part()
    Q1 = P.with_coupling(coupling1)
    Q2 = P.with_coupling(coupling2)
    Q = P.with_coupling(_merge(Q1.coupling, Q2.coupling))
    K1, K2 = Q1.coupling_region(), Q2.coupling_region()
    if not K1.is_empty and not K2.is_empty:
        if not causal_past(K1).isdisjoint(causal_future(K2)):
            raise InstrumentError("regions not causally orderable")
    f = as_components(f, P.n_components)
    K = K1 | K2
    if not K.is_empty and not f.support.is_empty:
        cone = causal_past(K) if direction == "advanced" else causal_future(K)
        if not f.support.isdisjoint(cone):
            raise InstrumentError("test function meets the causal shadow of the coupling region")
    solve = advanced if direction == "advanced" else retarded

    def step(op: CoupledOperator, g: MultiComponentFunction) -> MultiComponentFunction:
        if not op.coupling:
            return g
        return g - op.coupling_apply(solve(op, g, check_wrap=False))

    lhs = step(Q, f)
    rhs = step(Q1, step(Q2, f)) if direction == "advanced" else step(Q2, step(Q1, f))
    return float(np.max(np.abs(lhs.values - rhs.values)))
