import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldprobe.green import CoupledOperator, MultiComponentFunction
from fieldprobe.instruments import (
    InstrumentError,
    PreInstrument,
    apply_preinstrument,
    chained_post_selection,
    compose_instruments,
    effect,
    factorization_residual,
    nonselective_update,
    post_select,
    post_select_shortcut,
)
from fieldprobe.lattice import Lattice, causal_complement
from fieldprobe.scattering import ScatteringContext
from fieldprobe.states import coherent, vacuum
from fieldprobe.weyl import PolyObservable, WeylSum

from helpers import band, bump, random_rho

LAT = Lattice(24, 48)
K1 = bump(LAT, 6, 10, 20, 26)
K2_LATE = bump(LAT, 11, 15, 22, 28, amp=0.4)
K2_FAR = bump(LAT, 6, 10, 40, 46, amp=0.4)


def ctx(rho, m_probe=0.8):
    return ScatteringContext.single_probe(LAT, 1.0, m_probe, rho)


def random_effect(c, rng, t0=17):
    ps = c.probe_space
    C = WeylSum(ps, [(0.5 * complex(*rng.normal(size=2)), ps.cls(band(LAT, rng, t0))) for _ in range(2)])
    return effect(C)


def spacelike_A(rng, c, coef=None):
    """System Weyl generator smeared in K-perp."""
    F = band(LAT, rng, 8, x0=38, x1=44, cplx=True)
    assert F.support.issubset(causal_complement(c.region))
    return WeylSum.generator(c.system_space, F, coef if coef is not None else complex(*rng.normal(size=2)))


@given(st.integers(0, 2**31 - 1))
def test_nonselective_locality(seed):
    rng = np.random.default_rng(seed)
    c = ctx(K1)
    omega = coherent(LAT, 1.0, band(LAT, rng, 3))
    upd = nonselective_update(c, vacuum(LAT, 0.8), omega)
    A = spacelike_A(rng, c)
    assert abs(upd(A) - omega(A)) < 1e-10 * max(1.0, abs(omega(A)))


def test_nonselective_changes_future_observables(rng):
    c = ctx(K1)
    omega = vacuum(LAT, 1.0)
    upd = nonselective_update(c, vacuum(LAT, 0.8), omega)
    A = WeylSum.generator(c.system_space, band(LAT, rng, 16, x0=18, x1=30, scale=1.0))
    assert abs(upd(A) - omega(A)) > 1e-6
    assert abs(upd.unit_value() - 1.0) < 1e-14


def test_nonselective_polynomial_via_differences(rng):
    c = ctx(K1)
    omega = vacuum(LAT, 1.0)
    upd = nonselective_update(c, vacuum(LAT, 0.8), omega)
    F = band(LAT, rng, 8, x0=38, x1=44)
    p = PolyObservable.field(c.system_space, F) * PolyObservable.field(c.system_space, F)
    assert abs(upd(p) - omega(p)) < 1e-6 * abs(omega(p))


def test_post_selection(rng):
    c = ctx(K1)
    omega, sigma = vacuum(LAT, 1.0), vacuum(LAT, 0.8)
    inst = PreInstrument(c, sigma, random_effect(c, rng))
    upd = post_select(inst, omega)
    assert abs(upd.unit_value() - 1.0) < 1e-12
    A = spacelike_A(rng, c)
    assert abs(upd(A) - post_select_shortcut(inst, omega, A)) < 1e-10
    zero = PreInstrument(c, sigma, WeylSum(c.probe_space, []))
    with pytest.raises(InstrumentError, match="vanishing normalization"):
        post_select(zero, omega)


def test_effect_gives_positive_weight(rng):
    c = ctx(K1)
    inst = PreInstrument(c, vacuum(LAT, 0.8), random_effect(c, rng))
    norm = apply_preinstrument(inst, vacuum(LAT, 1.0), WeylSum.unit(c.system_space))
    assert norm.real > 0 and abs(norm.imag) < 1e-12


@pytest.mark.parametrize("rho2", [K2_LATE, K2_FAR], ids=["ordered", "disjoint"])
def test_composite_instrument(rho2, rng):
    c1, c2 = ctx(K1), ctx(rho2, 1.2)
    omega = vacuum(LAT, 1.0)
    inst1 = PreInstrument(c1, vacuum(LAT, 0.8), random_effect(c1, rng))
    inst2 = PreInstrument(c2, vacuum(LAT, 1.2), random_effect(c2, rng))
    A = WeylSum.generator(c1.system_space, band(LAT, rng, 18, cplx=True), 0.7 - 0.2j)
    res = compose_instruments(inst1, inst2, omega, A)
    assert res["residual"] < 1e-9
    if rho2 is K2_FAR:
        assert res["reversed_residual"] < 1e-9
    else:
        assert "reversed" not in res
    assert chained_post_selection(inst1, inst2, omega, A)["residual"] < 1e-9


def test_composition_requires_order(rng):
    c1, c2 = ctx(K1), ctx(K2_LATE, 1.2)
    inst1 = PreInstrument(c1, vacuum(LAT, 0.8), random_effect(c1, rng))
    inst2 = PreInstrument(c2, vacuum(LAT, 1.2), random_effect(c2, rng))
    A = WeylSum.unit(c1.system_space)
    with pytest.raises(InstrumentError, match="not causally orderable"):
        compose_instruments(inst2, inst1, vacuum(LAT, 1.0), A)


def _factor_setup():
    P = CoupledOperator(LAT, (1.0, 0.8, 1.2))
    return P, {(0, 1): K1}, {(0, 2): K2_LATE}


def test_factorization_identity(rng):
    P, k1, k2 = _factor_setup()
    f = np.zeros((3,) + LAT.shape)
    f[:, 15:17] = rng.normal(size=(3, 2, LAT.n_x))
    F = MultiComponentFunction(LAT, f)
    assert factorization_residual(P, k1, k2, F, "advanced") <= 1e-10
    g = np.zeros((3,) + LAT.shape)
    g[:, 3:5] = rng.normal(size=(3, 2, LAT.n_x))
    assert factorization_residual(P, k1, k2, MultiComponentFunction(LAT, g), "retarded") <= 1e-10
    # the identity is not vacuous: the coupling correction is sizeable
    from fieldprobe.green import advanced
    Q = P.with_coupling({**k1, **k2})
    assert Q.coupling_apply(advanced(Q, F)).max_abs() > 1e-3


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_factorization_random_pairs(seed):
    rng = np.random.default_rng(seed)
    P = CoupledOperator(LAT, (1.0, 0.8, 1.2))
    r1 = random_rho(LAT, rng, t_lo=3, t_hi=9)
    r2 = random_rho(LAT, rng, t_lo=12, t_hi=17)
    f = np.zeros((3,) + LAT.shape)
    f[:, 18:20] = rng.normal(size=(3, 2, LAT.n_x))
    assert factorization_residual(P, {(0, 1): r1}, {(0, 2): r2}, MultiComponentFunction(LAT, f)) <= 1e-10


def test_factorization_preconditions(rng):
    P, k1, k2 = _factor_setup()
    f = np.zeros((3,) + LAT.shape)
    f[:, 15:17] = 1.0
    with pytest.raises(InstrumentError, match="not causally orderable"):
        factorization_residual(P, k2, k1, MultiComponentFunction(LAT, f))
    g = np.zeros((3,) + LAT.shape)
    g[:, 8] = 1.0
    with pytest.raises(InstrumentError, match="causal shadow"):
        factorization_residual(P, k1, k2, MultiComponentFunction(LAT, g))


def test_factorization_order_matters(rng):
    # composing the two scattering steps the wrong way round breaks the identity
    from fieldprobe.green import advanced

    P, k1, k2 = _factor_setup()
    f = np.zeros((3,) + LAT.shape)
    f[:, 15:17] = rng.normal(size=(3, 2, LAT.n_x))
    F = MultiComponentFunction(LAT, f)

    def step(op, g):
        return g - op.coupling_apply(advanced(op, g, check_wrap=False))

    Q = P.with_coupling({**k1, **k2})
    lhs = step(Q, F)
    wrong = step(P.with_coupling(k2), step(P.with_coupling(k1), F))
    assert np.max(np.abs(lhs.values - wrong.values)) > 1e-6
