"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import time

import numpy as np

from fieldprobe.detector import (
    DetectorScenario,
    born_sweep,
    lambda2_coefficient,
    loglog_slope,
    richardson_lambda2,
    uniform_mode_source,
)
from fieldprobe.green import (
    CoupledOperator,
    GridFunction,
    MultiComponentFunction,
    advanced,
    apply,
    born_series,
    dense_green_solve,
    pairing,
    retarded,
    support_violations,
)
from fieldprobe.instruments import (
    PreInstrument,
    chained_post_selection,
    compose_instruments,
    effect,
    factorization_residual,
    nonselective_update,
)
from fieldprobe.lattice import Lattice, Ordering, causal_complement, causal_future, causal_orderability, causal_past
from fieldprobe.scattering import (
    ScatteringContext,
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
from fieldprobe.states import coherent, product_state, vacuum
from fieldprobe.weyl import PhaseSpace, WeylSum, tensor_embed, weyl_product

from helpers import band, bump, random_rho

LAT = Lattice(24, 48)


def weyl_gap(a, b):
    return max((abs(c) for c, _ in (a - b).terms), default=0.0)


def contexts(rng):
    """Standard single-probe context plus vacuum and coherent state pairs."""
    ctx = ScatteringContext.single_probe(LAT, 1.0, 0.8, bump(LAT, 6, 10, 20, 26))
    pairs = [
        (vacuum(LAT, 1.0), vacuum(LAT, 0.8)),
        (coherent(LAT, 1.0, band(LAT, rng, 3)), coherent(LAT, 0.8, band(LAT, rng, 4))),
    ]
    return ctx, pairs


def test_criterion_01_green_identities(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    lat = Lattice(128, 128)
    rho = np.zeros(lat.shape)
    rho[40:90, 30:70] = rng.uniform(-0.5, 0.5, size=(50, 40))
    op = CoupledOperator(lat, (1.0, 0.7), {(0, 1): rho})
    worst = 0.0
    violations = 0
    for direction, solve, (t0, t1) in (("retarded", retarded, (66, 122)), ("advanced", advanced, (6, 62))):
        F = np.zeros((2,) + lat.shape)
        F[:, t0:t1, 20:100] = rng.normal(size=(2, t1 - t0, 80))
        F = MultiComponentFunction(lat, F)
        u = solve(op, apply(op, F))
        worst = max(worst, np.max(np.abs(u.values - F.values)) / F.max_abs())
        v = solve(op, F)
        r = apply(op, v).values[:, 1:-1] - F.values[:, 1:-1]
        worst = max(worst, np.max(np.abs(r)) / F.max_abs())
        # localized sources for support containment
        for _ in range(3):
            t = int(rng.integers(t0, t1 - 3))
            x = int(rng.integers(0, 120))
            G = np.zeros((2,) + lat.shape)
            G[:, t:t + 3, x:x + 5] = rng.normal(size=(2, 3, 5))
            G = MultiComponentFunction(lat, G)
            violations += support_violations(solve(op, G), G, direction)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and violations == 0 and elapsed < 5.0
    criterion(1, "Green identities on 128x128", ok,
              f"rel residual {worst:.2e}, violating cells {violations}, {elapsed:.2f} s")


def test_criterion_02_support_theorem(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    violations = 0
    zero_cases = zero_fail = 0
    for _ in range(50):
        rho = random_rho(LAT, rng)
        ctx = ScatteringContext.single_probe(LAT, 1.0, 0.8, rho)
        while True:  # h anywhere in M+
            t = int(rng.integers(2, LAT.n_t - 4))
            x0 = int(rng.integers(0, LAT.n_x - 6))
            h = band(LAT, rng, t, n=2, x0=x0, x1=x0 + 6, cplx=True)
            if h.support.issubset(ctx.m_plus):
                break
        pair = scattered_pair(ctx, h)
        rep = pair.support_report(ctx)
        violations += rep["f_minus_violations"] + rep["h_shift_violations"]
        if causal_future(ctx.region).isdisjoint(h.support):
            zero_cases += 1
            zero_fail += pair.f_minus.max_abs() != 0.0
    # deliberate cases outside the future of K
    for _ in range(10):
        rho = np.zeros(LAT.shape)
        rho[8:11, 10:14] = rng.uniform(-1, 1, size=(3, 4))
        ctx = ScatteringContext.single_probe(LAT, 1.0, 0.8, rho)
        h = band(LAT, rng, int(rng.integers(4, 10)), n=2, x0=30, x1=36)
        zero_cases += 1
        zero_fail += scattered_pair(ctx, h).f_minus.max_abs() != 0.0
    elapsed = time.perf_counter() - start
    ok = violations == 0 and zero_fail == 0 and elapsed < 20.0
    criterion(2, "scattering support theorem", ok,
              f"violating cells {violations}, f-=0 failures {zero_fail}/{zero_cases}, {elapsed:.2f} s")


def test_criterion_03_induced_observable(criterion):
    rng = np.random.default_rng(3)
    ctx, pairs = contexts(rng)
    worst = 0.0
    for omega, sigma in pairs:
        joint = product_state(omega, sigma)
        for _ in range(25):
            B = WeylSum(ctx.probe_space, [(complex(*rng.normal(size=2)),
                                           ctx.probe_space.cls(band(LAT, rng, int(rng.integers(11, 20)), cplx=True)))
                                          for _ in range(3)])
            lhs = omega.expect(induced_observable(ctx, sigma, B))
            rhs = joint.expect(theta(ctx, tensor_embed(WeylSum.unit(ctx.system_space), B, ctx.space)))
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    criterion(3, "induced-observable identity", worst <= 1e-9, f"max deviation {worst:.2e}")


def test_criterion_04_variance(criterion):
    rng = np.random.default_rng(4)
    ctx, pairs = contexts(rng)
    var = char = 0.0
    for omega, sigma in pairs:
        for _ in range(3):
            h = GridFunction(LAT, band(LAT, rng, int(rng.integers(11, 20))).values.real)
            rep = variance_report(ctx, omega, sigma, h)
            var = max(var, rep["residual"])
            cf = characteristic_function(ctx, omega, sigma, h, np.linspace(-1, 1, 21))
            char = max(char, float(np.max(np.abs(cf["measured"] - cf["factorised"]))))
    ok = var <= 1e-10 and char <= 1e-9
    criterion(4, "variance decomposition and characteristic function", ok,
              f"variance {var:.2e}, characteristic {char:.2e}")


def test_criterion_05_star_product(criterion):
    rng = np.random.default_rng(5)
    ctx, pairs = contexts(rng)
    ps = ctx.probe_space
    hom = assoc = adj = comm = 0.0
    for _, sigma in pairs:
        for _ in range(5):
            a, b, c = (WeylSum.generator(ps, band(LAT, rng, int(rng.integers(11, 20)), cplx=True),
                                         complex(*rng.normal(size=2))) for _ in range(3))
            ab = star_product(ctx, sigma, a, b)
            hom = max(hom, weyl_gap(induced_observable(ctx, sigma, ab),
                                    weyl_product(induced_observable(ctx, sigma, a), induced_observable(ctx, sigma, b))))
            assoc = max(assoc, weyl_gap(star_product(ctx, sigma, ab, c),
                                        star_product(ctx, sigma, a, star_product(ctx, sigma, b, c))))
            adj = max(adj, weyl_gap(ab.adjoint(), star_product(ctx, sigma, b.adjoint(), a.adjoint())))
            h, h2 = band(LAT, rng, int(rng.integers(11, 20))), band(LAT, rng, int(rng.integers(11, 20)))
            p, q = probe_field(ctx, h), probe_field(ctx, h2)
            br = star_product_linear(ctx, sigma, p, q) - star_product_linear(ctx, sigma, q, p)
            pa, pb = scattered_pair(ctx, h), scattered_pair(ctx, h2)
            nu = pairing(ctx.system_operator, pa.f_minus, pb.f_minus)
            assert abs(nu - presymplectic_nu(ctx, h, h2)) <= 1e-12 * max(1.0, abs(nu))
            comm = max(comm, abs(br.const - 1j * nu) + br.linear.scale() + sum(abs(t) for t, _, _ in br.quad))
    ok = max(hom, assoc, adj, comm) <= 1e-9
    criterion(5, "star product rules", ok,
              f"hom {hom:.1e}, assoc {assoc:.1e}, adjoint {adj:.1e}, commutator {comm:.1e}")


def _random_effect(c, rng, t0):
    ps = c.probe_space
    C = WeylSum(ps, [(0.5 * complex(*rng.normal(size=2)), ps.cls(band(LAT, rng, t0))) for _ in range(2)])
    return effect(C)


def test_criterion_06_causal_factorization(criterion):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    P = CoupledOperator(LAT, (1.0, 0.8, 1.2))
    fac = 0.0
    n_pairs = 0
    correction = np.inf
    while n_pairs < 20:
        r1 = random_rho(LAT, rng, t_lo=3, t_hi=14)
        r2 = random_rho(LAT, rng, t_lo=3, t_hi=16)
        K1 = P.with_coupling({(0, 1): r1}).coupling_region()
        K2 = P.with_coupling({(0, 2): r2}).coupling_region()
        if not causal_past(K1).isdisjoint(causal_future(K2)):
            continue
        n_pairs += 1
        K = K1 | K2
        t_max = K.time_extent()[1]
        f = np.zeros((3,) + LAT.shape)
        f[:, t_max + 1:t_max + 3] = rng.normal(size=(3, 2, LAT.n_x))
        F = MultiComponentFunction(LAT, f)
        fac = max(fac, factorization_residual(P, {(0, 1): r1}, {(0, 2): r2}, F, "advanced"))
        Q = P.with_coupling({(0, 1): r1, (0, 2): r2})
        correction = min(correction, Q.coupling_apply(advanced(Q, F)).max_abs())
    comp = rev = 0.0
    n_disjoint = 0
    omega = vacuum(LAT, 1.0)
    for r2 in (bump(LAT, 11, 15, 22, 28, 0.4), bump(LAT, 12, 15, 14, 20, 0.4),
               bump(LAT, 6, 10, 40, 46, 0.4), bump(LAT, 7, 9, 2, 8, 0.4)):
        c1 = ScatteringContext.single_probe(LAT, 1.0, 0.8, bump(LAT, 6, 10, 20, 26))
        c2 = ScatteringContext.single_probe(LAT, 1.0, 1.2, r2)
        for _ in range(2):
            inst1 = PreInstrument(c1, vacuum(LAT, 0.8), _random_effect(c1, rng, 17))
            inst2 = PreInstrument(c2, vacuum(LAT, 1.2), _random_effect(c2, rng, 17))
            A = WeylSum.generator(c1.system_space, band(LAT, rng, 18, cplx=True), complex(*rng.normal(size=2)))
            res = compose_instruments(inst1, inst2, omega, A)
            comp = max(comp, res["residual"])
            if "reversed" in res:
                n_disjoint += 1
                rev = max(rev, res["reversed_residual"])
    elapsed = time.perf_counter() - start
    ok = fac <= 1e-10 and comp <= 1e-9 and rev <= 1e-9 and n_disjoint > 0 and correction > 0 and elapsed < 60
    criterion(6, "causal factorization and composite instruments", ok,
              f"factorization {fac:.1e} over {n_pairs} pairs, composite {comp:.1e}, "
              f"order exchange {rev:.1e} ({n_disjoint} disjoint), {elapsed:.2f} s")


def test_criterion_07_nonselective_locality(criterion):
    rng = np.random.default_rng(7)
    ctx, pairs = contexts(rng)
    perp = causal_complement(ctx.region)
    worst = 0.0
    for omega, sigma in pairs:
        upd = nonselective_update(ctx, sigma, omega)
        for _ in range(25):
            t = int(rng.integers(5, 12))
            x0 = int(rng.integers(36, 42))
            F = band(LAT, rng, t, n=2, x0=x0, x1=x0 + 4, cplx=True)
            assert F.support.issubset(perp)
            A = WeylSum(ctx.system_space, [(complex(*rng.normal(size=2)), ctx.system_space.cls(F)),
                                           (complex(*rng.normal(size=2)), ctx.system_space.zero())])
            worst = max(worst, abs(upd(A) - omega(A)) / max(1.0, abs(omega(A))))
    c2 = ScatteringContext.single_probe(LAT, 1.0, 1.2, bump(LAT, 11, 15, 22, 28, 0.4))
    chain = 0.0
    for _ in range(5):
        inst1 = PreInstrument(ctx, vacuum(LAT, 0.8), _random_effect(ctx, rng, 17))
        inst2 = PreInstrument(c2, vacuum(LAT, 1.2), _random_effect(c2, rng, 17))
        A = WeylSum.generator(ctx.system_space, band(LAT, rng, 18, cplx=True), complex(*rng.normal(size=2)))
        chain = max(chain, chained_post_selection(inst1, inst2, vacuum(LAT, 1.0), A)["residual"])
    ok = worst <= 1e-10 and chain <= 1e-9
    criterion(7, "non-selective locality and chained post-selection", ok,
              f"locality {worst:.1e}, chaining {chain:.1e}")


def test_criterion_08_born_scaling(criterion):
    start = time.perf_counter()
    ctx = ScatteringContext.single_probe(LAT, 1.0, 0.8, bump(LAT, 6, 10, 20, 26, amp=1.0))
    h, _ = uniform_mode_source(ctx)
    F = ctx.embed_probe(h)
    lams = [1e-2, 3e-3, 1e-3]
    slopes = []
    for k in range(3):
        errs = [np.max(np.abs(advanced(ctx.coupled.scaled(lam), F).values
                              - born_series(ctx.free, ctx.coupling, lam, F, k).values)) for lam in lams]
        slopes.append(loglog_slope(lams, errs))
    scn = DetectorScenario(ctx, h, vacuum(LAT, 1.0), vacuum(LAT, 0.8))
    sweep = born_sweep(scn, [0.1, 0.03, 0.01])
    coeff = lambda2_coefficient(scn)
    rich = richardson_lambda2(scn, 0.01)
    rel = abs(rich - coeff) / abs(coeff)
    elapsed = time.perf_counter() - start
    ok = (all(abs(s - (k + 1)) <= 0.15 for k, s in enumerate(slopes)) and abs(sweep["slope"] - 4) <= 0.2
          and rel <= 0.01 and elapsed < 60)
    criterion(8, "Born scaling", ok,
              f"series slopes {', '.join(f'{s:.3f}' for s in slopes)}, detector slope {sweep['slope']:.3f}, "
              f"lambda^2 rel {rel:.1e}, {elapsed:.2f} s")


def test_criterion_09_state_validity(criterion):
    rng = np.random.default_rng(9)
    lat = Lattice(16, 24)
    src = band(lat, rng, 4)
    states = [vacuum(lat, 1.0), vacuum(lat, 0.2), vacuum(lat, 2.0), coherent(lat, 1.0, src),
              product_state(vacuum(lat, 1.0), coherent(lat, 0.8, src))]
    ccr = 0.0
    worst = np.inf
    for st in states:
        ccr = max(ccr, st.ccr_defect())
        sp = st.space
        for _ in range(100):
            terms = []
            for _ in range(int(rng.integers(1, 4))):
                parts = [band(lat, rng, int(rng.integers(3, 12)), cplx=True) for _ in range(sp.n_components)]
                terms.append((complex(*rng.normal(size=2)), sp.cls(MultiComponentFunction.from_components(*parts))))
            A = WeylSum(sp, terms)
            worst = min(worst, st.expect(weyl_product(A.adjoint(), A)).real)
    ok = ccr <= 1e-10 and worst >= -1e-10
    criterion(9, "state validity (CCR and positivity)", ok, f"CCR defect {ccr:.1e}, min omega(A*A) {worst:.2e}")


def test_criterion_10_dense_oracle(criterion):
    rng = np.random.default_rng(10)
    worst = 0.0
    for n_t in (5, 9, 16):
        for n_x in (3, 8, 16):
            lat = Lattice(n_t, n_x)
            rho = rng.normal(size=lat.shape) * (rng.random(lat.shape) < 0.4)
            op = CoupledOperator(lat, (1.0, 0.6), {(0, 1): rho})
            F = np.zeros((2,) + lat.shape, dtype=complex)
            F[:, 1:-1] = rng.normal(size=(2, n_t - 2, n_x)) + 1j * rng.normal(size=(2, n_t - 2, n_x))
            F = MultiComponentFunction(lat, F)
            for d, solve in (("retarded", retarded), ("advanced", advanced)):
                a = solve(op, F, check_wrap=False).values
                b = dense_green_solve(op, F, d).values
                worst = max(worst, np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))
    criterion(10, "dense-oracle equivalence", worst <= 1e-10, f"max deviation {worst:.2e}")
