import math
import time

import numpy as np
import pytest

from qgraph.errors import CommensurabilityError, DomainError, PreconditionError
from qgraph.exp_poly import ep_eval
from qgraph.graph_model import build_example, inner_product
from qgraph.scattering import assemble_system, det_symbolic
from qgraph.spectrum import (check_simple_pole, convergents, counterexample_sequence, dc_lower_bound,
                             eigen_inner, eigenfunctions, factor_determinant, point_spectrum)

PI = math.pi


def _energies(spec):
    return [(lam * lam, m) for lam, m in spec.eigenvalues]


def _match(spec, expected):
    got = _energies(spec)
    assert len(got) == len(expected), got
    for (e, m), (e0, m0) in zip(got, expected):
        assert abs(e - e0) <= 1e-8 * e0 and m == m0


def test_triangle_spectrum():
    t0 = time.perf_counter()
    spec = point_spectrum(build_example("triangle", 1), 500)
    assert time.perf_counter() - t0 < 10
    _match(spec, [(4 * PI ** 2 * n ** 2, 1) for n in (1, 2, 3)])


def test_spider_two_spectrum():
    _match(point_spectrum(build_example("spider", 2), 200), [((2 * k * PI) ** 2, 1) for k in (1, 2)])


def test_double_tadpole_one_spectrum():
    spec = point_spectrum(build_example("double_tadpole", 1), 100)
    _match(spec, [(PI ** 2, 1), (4 * PI ** 2, 2), (9 * PI ** 2, 1)])


def test_double_tadpole_irrational_spectrum():
    # loop e2 of length √2 carries its own modes (2kπ/√2)²
    spec = point_spectrum(build_example("double_tadpole", math.sqrt(2)), 50)
    _match(spec, [(2 * PI ** 2, 1), (4 * PI ** 2, 1)])
    phi = spec.functions_for(2 * PI)[0]
    x = np.linspace(0, 1, 11)
    v = phi.value("e1", x)
    ref = np.sin(2 * PI * x)
    assert np.allclose(v / v[np.argmax(np.abs(v))], ref / ref[np.argmax(np.abs(ref))], atol=1e-8)
    assert np.allclose(phi.value("e2", np.linspace(0, math.sqrt(2), 7)), 0, atol=1e-8)


def test_double_tadpole_pi_mode():
    phis = eigenfunctions(build_example("double_tadpole", 1), PI ** 2, 1)
    x = np.linspace(0, 1, 9)
    a, b = phis[0].value("e1", x), phis[0].value("e2", x)
    assert np.allclose(a, -b, atol=1e-10)
    s = a[4]
    assert np.allclose(a / s, np.sin(PI * x), atol=1e-10)
    assert abs(eigen_inner(phis[0], phis[0]) - 1) < 1e-12


@pytest.mark.parametrize("fam,p,emax", [("triangle", 1, 500), ("double_tadpole", 1, 100), ("spider", 3, 200),
                                        ("double_tadpole", "3/5", 200), ("double_tadpole", math.sqrt(2), 100)])
def test_eigen_invariants(fam, p, emax):
    g = build_example(fam, p)
    spec = point_spectrum(g, emax)
    assert spec.eigenvalues and all(lam > 0 for lam in spec.lambdas)
    for lam in spec.lambdas:
        assert abs(ep_eval(spec.d, lam)) < 1e-8 * spec.d.scale
    conn = set(g.connecting_vertices)
    for phi in spec.eigenfunctions:
        for (v, _, _), val in phi.vertex_values().items():
            if v in conn:
                assert abs(val) < 1e-8
    for lam in spec.lambdas:
        fs = spec.functions_for(lam)
        G = np.array([[eigen_inner(a, b) for b in fs] for a in fs])
        assert np.allclose(G, np.eye(len(G)), atol=1e-8)
    samples = [phi.sample(h=1e-3, x_cut=1.0) for phi in spec.eigenfunctions]
    G = np.array([[inner_product(a, b).real for b in samples] for a in samples])
    assert np.allclose(G, np.eye(len(G)), atol=1e-6)


def test_tree_has_empty_point_spectrum():
    assert point_spectrum(build_example("tree_one_dirichlet", (1, 2)), 400).eigenvalues == []
    assert point_spectrum(build_example("star", 3), 400).eigenvalues == []


def test_factor_identity(rng):
    for p in ("3/5", "1/2", 1):
        sys = assemble_system(build_example("double_tadpole", p))
        fac = factor_determinant(sys)
        d = det_symbolic(sys)
        z = rng.uniform(-20, 20, 100)
        assert np.allclose(ep_eval(fac.d_d, z) * ep_eval(fac.d_c, z), ep_eval(d, z), rtol=1e-10, atol=1e-10 * d.scale)


def test_factor_three_fifths_has_minus_one():
    fac = factor_determinant(assemble_system(build_example("double_tadpole", "3/5")))
    assert any(abs(abs(th) - PI) < 1e-9 for th, _ in fac.on_circle)
    assert fac.margin > 0


def test_factor_needs_exact_lengths():
    with pytest.raises(CommensurabilityError):
        factor_determinant(assemble_system(build_example("y_graph", 1.618)))


def test_star_alpha_is_two():
    est = dc_lower_bound(build_example("star", 3), 200.0)
    assert abs(est.alpha - 2) < 1e-9


def test_double_tadpole_half_alpha_regression():
    est = dc_lower_bound(build_example("double_tadpole", "1/2"), 200.0)
    assert 0.5 < est.alpha < 1.5


def test_y_golden_alpha_decreases():
    g = build_example("y_graph", (1 + 5 ** 0.5) / 2)
    vals = [dc_lower_bound(g, m, mu_min=1.0).alpha for m in (100.0, 1000.0, 10000.0)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_convergents_golden():
    cv, _ = convergents((1 + 5 ** 0.5) / 2, 8)
    assert cv == [(1, 1), (2, 1), (3, 2), (5, 3), (8, 5), (13, 8), (21, 13), (34, 21)]


def test_counterexample_y_graph():
    seq = counterexample_sequence(build_example("y_graph", (1 + 5 ** 0.5) / 2), 10)
    v = np.array(seq.values)
    assert v[-1] < v[0] / 10
    assert np.all(np.diff(v) < 0)


def test_counterexample_double_tadpole():
    seq = counterexample_sequence(build_example("double_tadpole", math.sqrt(2)), 8)
    assert len(seq.rows) == 8 and all(r[1] % 2 and r[2] % 2 for r in seq.rows)
    assert seq.values[-1] < seq.values[0] / 10


def test_counterexample_rejects_rational():
    with pytest.raises(PreconditionError):
        counterexample_sequence(build_example("double_tadpole", "1/2"))


def test_simple_pole_triangle():
    g = build_example("triangle", 1)
    spec = point_spectrum(g, 100)
    rep = check_simple_pole(spec.system, spec, 2 * PI)
    assert rep.second_order_norm < 1e-8 * max(1.0, np.abs(rep.M).max())
    assert rep.kill_residual < 1e-8


def test_simple_pole_double_eigenvalue_reports():
    g = build_example("double_tadpole", 1)
    spec = point_spectrum(g, 50)
    rep = check_simple_pole(spec.system, spec, 2 * PI)
    assert np.isfinite(rep.second_order_norm)


def test_simple_pole_star_has_no_eigenvalues():
    g = build_example("star", 3)
    spec = point_spectrum(g, 100)
    with pytest.raises(DomainError):
        check_simple_pole(spec.system, spec, 2 * PI)


def test_lower_half_plane_resonances():
    spec = point_spectrum(build_example("double_tadpole", "1/2"), 100)
    res = spec.resonances()
    assert res and all(z.imag < 0 for z in res)
    for z in res[:5]:
        assert abs(ep_eval(spec.d, z)) < 1e-8 * spec.d.scale * math.exp(abs(z.imag) * 1.5)
