"""Acceptance suite: one test per criterion, at the stated tolerances.

A PASS/FAIL line per criterion is printed in the terminal summary (see conftest.py).
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from qgraph.diagnostics import continuity_check, decay_scan, flow_decay_scan
from qgraph.errors import PoleError
from qgraph.evolution import (PropagatorConfig, crank_nicolson_norms, evolve_double_tadpole_tail, project,
                              run_oracle, run_spectral)
from qgraph.exp_poly import ExpPolynomial, ep_add, ep_eval, ep_mul
from qgraph.graph_model import GraphFunction, build_example, inner_product, norm_L2, simpson_weights
from qgraph.resolvent import KernelQuery, check_regularity_at_eigenvalue, gamma_double_tadpole, limiting_kernel, \
    resolvent_kernel
from qgraph.scattering import assemble_system
from qgraph.spectrum import counterexample_sequence, point_spectrum

PI = math.pi
GOLDEN = (1 + 5 ** 0.5) / 2
SEED = 20240611


def _energies(spec):
    return [(lam * lam, m) for lam, m in spec.eigenvalues]


def _has(spec, e0, m0):
    return any(abs(e - e0) <= 1e-8 * e0 and m == m0 for e, m in _energies(spec))


# -- 1 ------------------------------------------------------------------------------------------------

def test_criterion_01_spectrum_fixtures():
    cases = [
        (("triangle", 1), 400, [(4 * PI ** 2 * n ** 2, 1) for n in (1, 2, 3)], True),
        (("spider", 2), 200, [((2 * k * PI) ** 2, 1) for k in (1, 2)], True),
        (("double_tadpole", 1), 100, [(PI ** 2, 1), (4 * PI ** 2, 2)], False),
    ]
    for (fam, p), emax, expected, exact in cases:
        t0 = time.perf_counter()
        spec = point_spectrum(build_example(fam, p), emax)
        assert time.perf_counter() - t0 < 10, fam
        if exact:
            got = _energies(spec)
            assert len(got) == len(expected), (fam, got)
        for e0, m0 in expected:
            assert _has(spec, e0, m0), (fam, e0, _energies(spec))


# -- 2 ------------------------------------------------------------------------------------------------

def _closed_form(fam, p, z):
    X = np.exp(-1j * z)
    if fam == "star":
        Xs = np.exp(1j * z)
        return ((2 - p) * Xs ** 2 + p) / Xs
    if fam == "double_tadpole":
        Xl = np.exp(-1j * z * p)
        return (1 - X) * (Xl - 1) / (X * Xl) * (-3 + X + Xl + 5 * X * Xl)
    return np.exp(1j * (1 + p) * z) * (1 + np.exp(-2j * z) + np.exp(-2j * p * z) - 3 * np.exp(-2j * (1 + p) * z))


@pytest.mark.parametrize("fam,p", [("star", 3), ("star", 5), ("y_graph", 1.5), ("y_graph", GOLDEN),
                                   ("double_tadpole", 0.5)])
def test_criterion_02_determinant_closed_forms(fam, p):
    rng = np.random.default_rng(SEED)
    sys = assemble_system(build_example(fam, Fraction(1, 2) if p == 0.5 else p))
    n = 100
    z = rng.uniform(-15, 15, n) + 1j * np.where(np.arange(n) % 2 == 0, 0.0, rng.uniform(0, 1.5, n))
    num, ref = sys.det(z), _closed_form(fam, p, z)
    keep = np.abs(ref) > 1e-3
    real = keep & (z.imag == 0)
    # moduli agree on the real axis
    assert np.allclose(np.abs(num[real]), np.abs(ref[real]), rtol=1e-10, atol=0)
    # everywhere the ratio is C·e^{iκz} with κ a half-integer
    r, zk = num[keep] / ref[keep], z[keep]
    i0 = int(np.argmax(zk.imag == 0))
    j = int(np.argmax(zk.imag))
    kappa = -np.log(abs(r[j]) / abs(r[i0])) / zk[j].imag
    assert abs(kappa - round(kappa * 2) / 2) < 1e-8
    kappa = round(kappa * 2) / 2
    assert np.allclose(r, r[i0] * np.exp(1j * kappa * (zk - zk[i0])), rtol=1e-10, atol=0)
    if fam == "star":
        mu = np.linspace(-50, 50, 10_000)
        assert np.abs(sys.det(mu)).min() >= 2 - 1e-10


# -- 3 ------------------------------------------------------------------------------------------------

def test_criterion_03_gamma_unimodular():
    rng = np.random.default_rng(SEED)
    for ell in rng.uniform(0.05, 4, 20):
        z = rng.uniform(-60, 60, 1000)
        g = gamma_double_tadpole(ell, z)
        assert np.abs(np.abs(g) - 1).max() < 1e-12
        assert np.abs(gamma_double_tadpole(ell, -z) - np.conj(g)).max() < 1e-12


# -- 4 ------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("fam,ell", [("y_graph", GOLDEN), ("double_tadpole", math.sqrt(2))])
def test_criterion_04_counterexample_sequences(fam, ell):
    seq = counterexample_sequence(build_example(fam, ell), 8)
    v = seq.values
    assert len(v) == 8
    assert v[-1] <= v[0] / 10


# -- 5 ------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("fam,p", [("triangle", 1), ("double_tadpole", Fraction(1, 2))])
def test_criterion_05_propagator_cross_validation(fam, p):
    t0 = time.perf_counter()
    g = build_example(fam, p)
    spec = point_spectrum(g, 400)
    eid = g.infinite_ids[0]
    f = GraphFunction.from_functions(g, {eid: lambda x: np.exp(-(x - 6) ** 2 / 2 - 4j * x)}, h=0.01, x_cut=40)
    times = [0.5, 1.0, 2.0]
    us = run_spectral(g, spec, f, times)
    uo = run_oracle(g, f, times)
    for t in times:
        assert norm_L2(us.at(t) - uo.at(t)) <= 1e-3, t
    assert time.perf_counter() - t0 < 120 * len(times)


# -- 6 ------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("ell", [1.0, math.sqrt(2)])
def test_criterion_06_fourier_tail_formula(ell):
    g = build_example("double_tadpole", ell)
    f = GraphFunction.from_functions(g, {"e3": lambda x: np.exp(-(x - 6) ** 2 / 2 - 4j * x)}, h=0.01, x_cut=40)
    x, u0, h = f.grids["e3"], f.values["e3"], f.spacing("e3")
    u_0 = evolve_double_tadpole_tail(u0, 0.0, x[1:], ell, h=h)
    assert np.abs(u_0 - u0[1:]).max() < 1e-6
    u_1 = evolve_double_tadpole_tail(u0, 1.0, x, ell, h=h)
    d = u_1 - run_oracle(g, f, [1.0]).at(1.0).values["e3"]
    assert math.sqrt(simpson_weights(len(x) - 1, h) @ np.abs(d) ** 2) < 1e-3


# -- 7 ------------------------------------------------------------------------------------------------

@pytest.mark.parametrize("fam,p", [("star", 3), ("triangle", 1), ("tadpole", 1), ("spider", 2),
                                   ("double_tadpole", Fraction(1, 2))])
def test_criterion_07_dispersive_decay(fam, p):
    g = build_example(fam, p)
    spec = point_spectrum(g, 400)
    eid = g.infinite_ids[0]
    f = GraphFunction.from_functions(g, {eid: lambda x: np.exp(-(x - 12) ** 2 / 8 - 6.3j * x)}, h=0.01, x_cut=40)
    tab = decay_scan(g, spec, f, 2.0 ** np.arange(7), PropagatorConfig(mu_low=1e-4))
    assert not tab.flagged
    assert -0.6 <= tab.slope <= -0.4, tab.slope
    assert tab.tail_ratio() <= 2.0


# -- 8 ------------------------------------------------------------------------------------------------

def test_criterion_08_continuity_identity():
    g = build_example("triangle", 1)
    f = GraphFunction.from_functions(g, {"h1": lambda x: np.exp(-(x - 5) ** 2 / (2 * 0.64) - 4j * x)},
                                     h=0.02, x_cut=20)
    for t in (0.4, 0.6, 0.8, 1.0, 1.2):
        resid, scale, _ = continuity_check(g, None, f, t)
        assert resid < 1e-4 * scale, (t, resid / scale)


def test_criterion_08_flow_decay():
    g = build_example("triangle", 1)
    spec = point_spectrum(g, 400)
    # a slow, spreading gaussian keeps a measurable flow through the core for all t
    f = GraphFunction.from_functions(g, {"h1": lambda x: np.exp(-(x - 6) ** 2 / 2)}, h=0.01, x_cut=40)
    tab = flow_decay_scan(g, spec, f, 2.0 ** np.arange(0, 6.5, 0.5), PropagatorConfig(mu_low=1e-4))
    assert not tab.flagged
    assert tab.tail_ratio() <= 2.0


# -- 9 ------------------------------------------------------------------------------------------------

def _two_sided_jump(fn, lam, steps=(0.01, 0.02, 0.03, 0.04)):
    d = np.array(steps)
    lo = np.polyval(np.polyfit(-d, [fn(lam - s) for s in d], 3), 0)
    hi = np.polyval(np.polyfit(d, [fn(lam + s) for s in d], 3), 0)
    return abs(lo - hi)


def test_criterion_09_kernel_regularity():
    g = build_example("triangle", 1)
    spec = point_spectrum(g, 400)
    sys = spec.system
    lam = 2 * PI
    x = ("e1", 0.3)
    for tag, y in (("Y_k", ("h1", 1.0)), ("Y_B", ("e2", 0.35))):
        jump = _two_sided_jump(lambda mu: limiting_kernel(sys, spec, KernelQuery(x, y, mu, tag)), lam)
        assert jump < 1e-5, (tag, jump)
    f = GraphFunction.from_functions(g, {"e1": lambda s: np.exp(-30 * (s - 0.4) ** 2) * (1 + s),
                                         "h2": lambda s: np.exp(-(s - 3) ** 2)}, h=0.005, x_cut=12)
    ok, jump = check_regularity_at_eigenvalue(sys, spec, f, lam)
    assert ok and jump < 1e-5
    with pytest.raises(PoleError):
        limiting_kernel(sys, spec, KernelQuery(x, ("h1", 1.0), lam))


# -- 10 -----------------------------------------------------------------------------------------------

def test_criterion_10_property_suites():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)

    # exp_poly ring homomorphism
    for _ in range(50):
        p, q = (ExpPolynomial(list(rng.uniform(-3, 3, 4)), list(rng.normal(size=4) + 1j * rng.normal(size=4)))
                for _ in range(2))
        z = rng.uniform(-10, 10, 100) + 1j * rng.uniform(-1, 1, 100)
        pv, qv = ep_eval(p, z), ep_eval(q, z)
        scale = (p.scale + 1) * (q.scale + 1) * np.exp(6 * np.abs(z.imag))
        assert np.all(np.abs(ep_eval(ep_mul(p, q), z) - pv * qv) <= 1e-12 * scale)
        assert np.all(np.abs(ep_eval(ep_add(p, q), z) - (pv + qv)) <= 1e-12 * scale)

    # Green-function symmetry K(x, y) = K(y, x)
    for fam, p in (("triangle", 1), ("double_tadpole", Fraction(1, 2)), ("star", 4)):
        g = build_example(fam, p)
        sys = assemble_system(g)
        for _ in range(40):
            ex, ey = rng.choice(g.edge_ids, 2)
            xs = [rng.uniform(0, g.edge_length(e) if g.is_finite(e) else 5) for e in (ex, ey)]
            z = rng.uniform(0.1, 12) + 1j * rng.uniform(0.05, 2)
            a = resolvent_kernel(sys, KernelQuery((ex, xs[0]), (ey, xs[1]), z))
            b = resolvent_kernel(sys, KernelQuery((ey, xs[1]), (ex, xs[0]), z))
            assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    # Crank-Nicolson unitarity over 1000 steps
    g = build_example("triangle", 1)
    c, k = rng.uniform(4, 8), rng.uniform(-4, 4)
    f = GraphFunction.from_functions(g, {"h1": lambda x: np.exp(-(x - c) ** 2 + 1j * k * x),
                                         "e1": lambda x: np.sin(PI * x) ** 2}, h=0.02, x_cut=20)
    n0, n1 = crank_nicolson_norms(g, f, 1000, 1e-3)
    assert abs(n1 - n0) <= 1e-10 * n0

    # orthogonal decomposition completeness
    spec = point_spectrum(g, 400)
    for _ in range(3):
        funcs = {}
        for e in g.finite_ids:
            a = rng.normal(size=4) + 1j * rng.normal(size=4)
            funcs[e] = lambda x, a=a: sum(a[j] * np.sin((j + 1) * PI * x) for j in range(4))
        for e in g.infinite_ids:
            c, k = rng.uniform(3, 8), rng.uniform(-4, 4)
            funcs[e] = lambda x, c=c, k=k: x * np.exp(-(x - c) ** 2 + 1j * k * x)
        f = GraphFunction.from_functions(g, funcs, h=0.02, x_cut=20)
        yb = project(spec, f, "Y_B", tail_report=1.0)
        total = project(spec, f, "Y_D", tail_report=1.0) + yb
        for e in g.infinite_ids:
            total = total + project(spec, f, "Y_k", e)
        assert norm_L2(total - f) <= 1e-8 * norm_L2(f)
        for phi in spec.eigenfunctions:
            assert abs(inner_product(yb, phi.sample(like=yb))) < 1e-8 * norm_L2(f)

    assert time.perf_counter() - t0 < 60
