import math

import numpy as np
import pytest
from scipy import integrate

from qgraph.errors import NearSingularError
from qgraph.exp_poly import ep_eval
from qgraph.graph_model import GraphFunction, build_example, load_graph
from qgraph.scattering import (assemble_system, det_symbolic, edge_transforms, moments, reconstruct,
                               solvability_at_eigenvalue, solve_coefficients)
from qgraph.spectrum import point_spectrum

GRAPHS = {
    "star3": ("star", 3), "star5": ("star", 5), "tree": ("tree_one_dirichlet", (1, 2)),
    "triangle": ("triangle", 1), "tadpole": ("tadpole", 1), "dt1": ("double_tadpole", 1),
    "dt_half": ("double_tadpole", "1/2"), "dt_sqrt2": ("double_tadpole", math.sqrt(2)),
    "spider2": ("spider", 2), "y_rational": ("y_graph", "3/2"), "y_golden": ("y_graph", (1 + 5 ** 0.5) / 2),
}


def _graph(name):
    fam, p = GRAPHS[name]
    return build_example(fam, p)


def _zs(rng, n=100):
    re = rng.uniform(-15, 15, n)
    im = np.where(np.arange(n) % 2 == 0, 0.0, rng.uniform(0, 1.5, n))
    return re + 1j * im


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_symbolic_equals_numeric(name, rng):
    sys = assemble_system(_graph(name))
    d = det_symbolic(sys)
    z = _zs(rng)
    num = sys.det(z)
    sym = ep_eval(d, z)
    scale = d.scale * np.exp(np.abs(z.imag) * np.abs(d.freqs).max())
    assert np.all(np.abs(num - sym) <= 1e-10 * scale)


def _closed_form(name, z):
    X = np.exp(-1j * z)
    if name.startswith("star"):
        ell = GRAPHS[name][1]
        Xs = np.exp(1j * z)     # the star formula is written with X = e^{iz}
        return ((2 - ell) * Xs ** 2 + ell) / Xs
    if name == "dt_half":
        ell = 0.5
        Xl = np.exp(-1j * z * ell)
        return (1 - X) * (Xl - 1) / (X * Xl) * (-3 + X + Xl + 5 * X * Xl)
    if name.startswith("y_"):
        ell = 1.5 if name == "y_rational" else (1 + 5 ** 0.5) / 2
        return np.exp(1j * (1 + ell) * z) * (1 + np.exp(-2j * z) + np.exp(-2j * ell * z) - 3 * np.exp(-2j * (1 + ell) * z))


@pytest.mark.parametrize("name", ["star3", "star5", "dt_half", "y_rational", "y_golden"])
def test_closed_forms(name, rng):
    sys = assemble_system(_graph(name))
    z = _zs(rng)
    num, ref = sys.det(z), _closed_form(name, z)
    keep = np.abs(ref) > 1e-3
    real = keep & (z.imag == 0)
    assert np.allclose(np.abs(num[real]), np.abs(ref[real]), rtol=1e-10, atol=0)
    # off the real axis the two normalisations differ by a factor C·e^{iκz}
    r = num[keep] / ref[keep]
    zk = z[keep]
    C = r[np.argmax(zk.imag == 0)]
    j = int(np.argmax(zk.imag))
    kappa = -np.log(abs(r[j]) / abs(C)) / zk[j].imag
    assert abs(kappa - round(kappa * 2) / 2) < 1e-8
    kappa = round(kappa * 2) / 2
    pred = C * np.exp(1j * kappa * (zk - zk[np.argmax(zk.imag == 0)]))
    assert np.allclose(r, pred, rtol=1e-10, atol=0)


def test_star_system_size():
    # one finite edge (c, d) and two half-lines (d)
    assert assemble_system(build_example("star", 3)).N == 4


def test_double_tadpole_matrix_size():
    assert assemble_system(build_example("double_tadpole", 1)).N == 5


def _end_data(sys, coef, T_plus, T_minus, e, at_head):
    """Exact value and outgoing derivative of the reconstructed u at an edge end."""
    z = coef.z
    g = sys.graph
    d = coef.d(e)
    if not g.is_finite(e):
        return d + T_plus[e] / (2j * z), 1j * z * d - T_plus[e] / 2
    c = coef.c(e)
    if not at_head:
        return c + d + T_plus[e] / (2j * z), 1j * z * (d - c) - T_plus[e] / 2
    L = g.edge_length(e)
    E, Ei = np.exp(1j * z * L), np.exp(-1j * z * L)
    val = d * E + c * Ei + E * T_minus[e] / (2j * z)
    der = 1j * z * (d * E - c * Ei) + E * T_minus[e] / 2
    return val, -der


def _smooth_data(g, rng, h=0.01, x_cut=15):
    funcs = {}
    for e in g.finite_edges:
        a, b = rng.normal(size=2)
        funcs[e.id] = lambda x, a=a, b=b, L=e.length: (a + 1j * b) * np.sin(np.pi * x / L) ** 3
    for e in g.infinite_edges:
        c = rng.uniform(3, 6)
        funcs[e.id] = lambda x, c=c: np.exp(-(x - c) ** 2) * x ** 3
    return GraphFunction.from_functions(g, funcs, h=h, x_cut=x_cut)


@pytest.mark.parametrize("name", ["star3", "tree", "triangle", "tadpole", "dt_half", "spider2", "y_rational"])
def test_vertex_conditions_by_substitution(name, rng):
    g = _graph(name)
    sys = assemble_system(g)
    f = _smooth_data(g, rng)
    for z in (1.3 + 0.7j, 4.1 + 0.2j, 0.5j + 2):
        coef = solve_coefficients(sys, f, z)
        Tp, Tm = edge_transforms(f, z), edge_transforms(f, -z)
        scale = max(np.abs(coef.values).max(), 1.0)
        for v in g.vertex_ids:
            ends = g.ends(v)
            data = [_end_data(sys, coef, Tp, Tm, end.edge, not end.at_zero) for end in ends]
            vals = np.array([x for x, _ in data])
            ders = np.array([y for _, y in data])
            vx = g.vertex(v)
            if vx.boundary == "dirichlet":
                assert abs(vals[0]) < 1e-8 * scale
            elif vx.boundary == "neumann":
                assert abs(ders[0]) < 1e-8 * scale
            else:
                assert np.abs(vals - vals[0]).max() < 1e-8 * scale
                assert abs(ders.sum()) < 1e-8 * scale * abs(z)


def test_zero_data_zero_coefficients():
    g = build_example("triangle", 1)
    sys = assemble_system(g)
    coef = solve_coefficients(sys, GraphFunction.zeros(g, 0.01, 10), 2 + 1j)
    assert np.all(coef.values == 0)
    assert np.all(moments(sys, GraphFunction.zeros(g, 0.01, 10), 2 + 1j) == 0)


def test_plane_wave_moment():
    g = build_example("triangle", 1)
    sys = assemble_system(g)
    z = 3 + 0.5j
    f = GraphFunction.from_functions(g, {"e1": lambda x: np.exp(-1j * z * x)}, h=0.005, x_cut=5)
    F = moments(sys, f, z)
    assert abs(F[sys.index("e1", "c")] - 1 / (2j * z)) < 1e-9


def test_halfline_gaussian_moment_reference():
    g = build_example("triangle", 1)
    sys = assemble_system(g)
    z = 1 + 1j
    fn = lambda x: np.exp(-(x - 4) ** 2)
    f = GraphFunction.from_functions(g, {"h1": fn}, h=0.005, x_cut=12)
    F = moments(sys, f, z)[sys.index("h1", "d")]
    re = integrate.quad(lambda y: (np.exp(1j * z * y) * fn(y)).real, 0, 12, epsabs=1e-14, limit=200)[0]
    im = integrate.quad(lambda y: (np.exp(1j * z * y) * fn(y)).imag, 0, 12, epsabs=1e-14, limit=200)[0]
    assert abs(F - (re + 1j * im) / (2j * z)) < 1e-9


@pytest.mark.parametrize("name", ["triangle", "dt_half", "star3"])
def test_fd_residual(name, rng):
    g = _graph(name)
    sys = assemble_system(g)
    f = _smooth_data(g, rng, h=0.0025, x_cut=12)
    z = 2j
    u = reconstruct(solve_coefficients(sys, f, z), f)
    for eid in g.edge_ids:
        v, dx = u[eid], f.spacing(eid)
        d2 = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2] + 16 * v[1:-3] - v[:-4]) / (12 * dx * dx)
        res = d2 + z * z * v[2:-2] - f.values[eid][2:-2]
        assert np.abs(res).max() < 1e-6 * max(1.0, np.abs(f.values[eid]).max())


def test_lemma_dips_only_at_eigenvalues():
    g = build_example("triangle", 1)
    d = det_symbolic(assemble_system(g))
    roots = 2 * np.pi * np.arange(1, 7)
    mu = np.concatenate([np.linspace(0.01, 40, 400001), roots])
    small = mu[np.abs(ep_eval(d, mu)) < 1e-6 * d.scale]
    assert small.size >= len(roots)
    assert np.all(np.min(np.abs(small[:, None] - roots[None, :]), axis=1) < 1e-4)


def test_near_singular_raises_on_real_eigenvalue():
    g = build_example("triangle", 1)
    sys = assemble_system(g)
    f = _smooth_data(g, np.random.default_rng(1))
    with pytest.raises(NearSingularError):
        solve_coefficients(sys, f, 2 * np.pi)


def test_solvability():
    g = build_example("triangle", 1)
    sys = assemble_system(g)
    spec = point_spectrum(g, 50)
    lam = spec.lambdas[0]
    phi = spec.eigenfunctions[0].sample(h=0.005, x_cut=10)
    assert solvability_at_eigenvalue(sys, phi, lam) > 1e-3
    half = GraphFunction.from_functions(g, {"h1": lambda x: np.exp(-(x - 4) ** 2)}, h=0.005, x_cut=10)
    assert solvability_at_eigenvalue(sys, half, lam) < 1e-8
    from qgraph.resolvent import project_out
    mixed = half + phi * 0.3 + GraphFunction.from_functions(g, {"e2": lambda x: x * x * (1 - x) ** 2}, h=0.005,
                                                              x_cut=10)
    proj, resid = project_out(spec, mixed, lam)
    assert solvability_at_eigenvalue(sys, proj, lam) < 1e-8


def test_dirichlet_halfline_kernel_system():
    g = load_graph("vertex a boundary=dirichlet\nhalfline h from=a\n")
    sys = assemble_system(g)
    assert sys.N == 1
