"""Point spectrum, eigenfunctions, determinant factorization and related scans.

Embedded eigenvalues λ² > 0 are the squares of the real zeros of d(z) = det D(z);
their eigenfunctions live on the compact core and vanish at the connecting vertices.
For exact-rational graphs the zeros come from the unit-circle roots of the Laurent
reduction of d in Y = e^{-izω}; otherwise from refined dips of |d| on a real grid,
each confirmed by a finite-element eigenvalue of the compact-core Laplacian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (CommensurabilityError, ConditioningError, DomainError, GeometryError,
                     PreconditionError, ResolutionError)
from .exp_poly import (ExpPolynomial, LaurentPolynomial, ep_eval, ep_min_scan, ep_to_laurent,
                       laurent_unit_circle_roots)
from .fem import build_mesh
from .graph_model import GraphFunction, MetricGraph, default_h
from .scattering import ScatteringSystem, assemble_system, det_symbolic

ZERO_REL = 1e-8


# -- eigenfunctions ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Eigenfunction:
    """Real eigenfunction A_k cos(λx) + B_k sin(λx) on each finite edge, zero on half-lines."""
    lam: float
    graph: MetricGraph
    A: dict
    B: dict

    def value(self, eid, x):
        x = np.asarray(x, dtype=float)
        if eid not in self.A:
            return np.zeros(x.shape)
        return self.A[eid] * np.cos(self.lam * x) + self.B[eid] * np.sin(self.lam * x)

    def derivative(self, eid, x):
        x = np.asarray(x, dtype=float)
        if eid not in self.A:
            return np.zeros(x.shape)
        return self.lam * (-self.A[eid] * np.sin(self.lam * x) + self.B[eid] * np.cos(self.lam * x))

    def sample(self, h=None, x_cut=40.0, like: GraphFunction | None = None) -> GraphFunction:
        if like is not None:
            h, x_cut = like.h, like.x_cut
        h = default_h(self.graph) if h is None else h
        return GraphFunction.from_functions(self.graph, {k: (lambda x, k=k: self.value(k, x)) for k in self.A},
                                            h=h, x_cut=x_cut)

    def vertex_values(self):
        """Value at every edge end, keyed by (vertex, edge, at_zero)."""
        out = {}
        for e in self.graph.finite_edges:
            out[(e.tail, e.id, True)] = float(self.value(e.id, 0.0))
            out[(e.head, e.id, False)] = float(self.value(e.id, e.length))
        return out

    def pair(self, tplus, tminus):
        """(f, φ) from the edge transforms T_k(λ), T_k(-λ) of f (φ is real)."""
        s = 0j
        for k in self.A:
            s += self.A[k] * (tplus[k] + tminus[k]) / 2 + self.B[k] * (tplus[k] - tminus[k]) / 2j
        return s


def _edge_integrals(lam, L):
    s2 = math.sin(2 * lam * L) / (4 * lam)
    return L / 2 + s2, L / 2 - s2, math.sin(lam * L) ** 2 / (2 * lam)


def eigen_inner(phi: Eigenfunction, psi: Eigenfunction) -> float:
    """Exact L² inner product of two eigenfunctions with the same λ."""
    tot = 0.0
    for e in phi.graph.finite_edges:
        icc, iss, isc = _edge_integrals(phi.lam, e.length)
        a1, b1, a2, b2 = phi.A[e.id], phi.B[e.id], psi.A[e.id], psi.B[e.id]
        tot += a1 * a2 * icc + b1 * b2 * iss + (a1 * b2 + b1 * a2) * isc
    return tot


def _nullspace_functions(sys: ScatteringSystem, lam: float, mult: int | None):
    g = sys.graph
    Dz = sys.evaluate(complex(lam))
    U, s, Vh = np.linalg.svd(Dz)
    if mult is None:
        mult = int(np.sum(s < 1e-7 * s[0]))
    if mult == 0:
        raise DomainError(f"spectrum: λ² = {lam * lam:.12g} is not an eigenvalue (σ_min/σ_max = {s[-1] / s[0]:.2e})")
    null = Vh[-mult:].conj()
    cands = []
    for X in null:
        A, B = {}, {}
        for e in g.finite_edges:
            c, d = X[sys.index(e.id, "c")], X[sys.index(e.id, "d")]
            A[e.id], B[e.id] = c + d, 1j * (d - c)
        for part in (np.real, np.imag):
            cands.append(Eigenfunction(lam, g, {k: float(part(v)) for k, v in A.items()},
                                       {k: float(part(v)) for k, v in B.items()}))
    G = np.array([[eigen_inner(a, b) for b in cands] for a in cands])
    w, V = np.linalg.eigh(G)
    order = np.argsort(w)[::-1][:mult]
    if w[order[-1]] < 1e-10 * w[order[0]]:
        raise ConditioningError(f"spectrum: eigenspace at λ={lam:.12g} degenerates after realification")
    out = []
    for j in order:
        coef = V[:, j] / math.sqrt(w[j])
        A = {e.id: float(sum(c * f.A[e.id] for c, f in zip(coef, cands))) for e in g.finite_edges}
        B = {e.id: float(sum(c * f.B[e.id] for c, f in zip(coef, cands))) for e in g.finite_edges}
        # deterministic sign: first sizeable coefficient positive
        flat = [v for e in g.finite_edges for v in (A[e.id], B[e.id])]
        lead = next(v for v in flat if abs(v) > 1e-8 * max(map(abs, flat)))
        if lead < 0:
            A = {k: -v for k, v in A.items()}
            B = {k: -v for k, v in B.items()}
        out.append(Eigenfunction(lam, g, A, B))
    # Gram-Schmidt once more with the exact inner product
    basis = []
    for phi in out:
        A, B = dict(phi.A), dict(phi.B)
        for psi in basis:
            c = eigen_inner(Eigenfunction(lam, g, A, B), psi)
            A = {k: A[k] - c * psi.A[k] for k in A}
            B = {k: B[k] - c * psi.B[k] for k in B}
        nrm = math.sqrt(eigen_inner(Eigenfunction(lam, g, A, B), Eigenfunction(lam, g, A, B)))
        basis.append(Eigenfunction(lam, g, {k: v / nrm for k, v in A.items()}, {k: v / nrm for k, v in B.items()}))
    return basis, s


def eigenfunctions(g_or_sys, lam_sq: float, multiplicity: int | None = None) -> list[Eigenfunction]:
    """Orthonormal real basis of the eigenspace for λ² (nullspace of D(λ))."""
    sys = g_or_sys if isinstance(g_or_sys, ScatteringSystem) else assemble_system(g_or_sys)
    lam = math.sqrt(lam_sq)
    d = det_symbolic(sys)
    if abs(ep_eval(d, lam)) > 1e-6 * d.scale:
        raise DomainError(f"spectrum: λ² = {lam_sq:.12g} is not in S_d (|d(λ)| = {abs(ep_eval(d, lam)):.3e})")
    return _nullspace_functions(sys, lam, multiplicity)[0]


# -- spectral decomposition ----------------------------------------------------------------------

@dataclass
class SpectralDecomposition:
    graph: MetricGraph
    system: ScatteringSystem
    max_energy: float
    eigenvalues: list                      # (λ, multiplicity), λ > 0 ascending
    eigenfunctions: list                   # Eigenfunction, grouped by eigenvalue
    d: ExpPolynomial
    d_d: ExpPolynomial | None = None
    d_c: ExpPolynomial | None = None
    alpha: float | None = None
    off_circle: list = field(default_factory=list)
    omega: float | None = None
    notes: list = field(default_factory=list)

    @property
    def lambdas(self):
        return [lam for lam, _ in self.eigenvalues]

    @property
    def energies(self):
        return [lam * lam for lam, _ in self.eigenvalues]

    def functions_for(self, lam, tol=1e-9):
        return [phi for phi in self.eigenfunctions if abs(phi.lam - lam) <= tol * max(1.0, lam)]

    def nearest_eigenvalue(self, mu):
        if not self.eigenvalues:
            return None, math.inf
        lams = np.array(self.lambdas)
        k = int(np.argmin(np.abs(lams - mu)))
        return float(lams[k]), float(abs(lams[k] - mu))

    def resonances(self):
        """Zeros of d in the lower half-plane with |Re z| ≤ √max_energy + 1 (commensurable case)."""
        if self.omega is None:
            return []
        out = []
        zmax = math.sqrt(self.max_energy) + 1
        for r in self.off_circle:
            base = 1j * np.log(r) / self.omega          # Y = e^{-izω}
            n0 = math.floor((-zmax - base.real) * self.omega / (2 * math.pi)) - 1
            n1 = math.ceil((zmax - base.real) * self.omega / (2 * math.pi)) + 1
            for n in range(n0, n1 + 1):
                z = base + 2 * math.pi * n / self.omega
                if abs(z.real) <= zmax:
                    out.append(complex(z))
        return out


def _lcm(a, b):
    return a * b // math.gcd(a, b)


def base_frequency(g: MetricGraph) -> Fraction:
    if not g.is_exact:
        raise CommensurabilityError("spectrum: graph lengths are not exact rationals (incommensurable route only)")
    q = 1
    for e in g.finite_edges:
        q = _lcm(q, e.exact.denominator)
    return Fraction(1, q)


def _commensurable_zeros(d: ExpPolynomial, omega: Fraction, lam_max: float):
    P = ep_to_laurent(d, omega)
    roots = laurent_unit_circle_roots(P)
    w = float(omega)
    out = []
    for theta, m in roots.on_circle:
        # Y = e^{iθ} = e^{-iλω}  ⇒  λ = -(θ + 2πn)/ω
        n_lo = math.ceil((-w * lam_max - theta) / (2 * math.pi)) - 1
        for n in range(n_lo, 1):
            lam = -(theta + 2 * math.pi * n) / w
            if 1e-9 < lam <= lam_max * (1 + 1e-12):
                out.append((lam, m))
    out.sort()
    return out, roots, P


def _core_fd_eigen(g: MetricGraph, target: float, h: float, k: int = 6):
    """Eigenpairs of the lumped-mass P1 core Laplacian (Kirchhoff at all interior vertices) near target."""
    mesh = build_mesh(g, h, include_halflines=False, mass="lumped")
    k = min(k, mesh.n - 2)
    vals, vecs = spla.eigsh(mesh.K.tocsc(), k=k, M=mesh.M.tocsc(), sigma=target, which="LM")
    order = np.argsort(np.abs(vals - target))
    return vals[order], vecs[:, order], mesh


def fd_confirm(g: MetricGraph, lam: float, points_per_unit: int = 2000):
    """Richardson-extrapolated core eigenvalue near λ² and the dimension of its subspace
    vanishing at the connecting vertices.  Returns (λ²_fd, error_bound, multiplicity)."""
    target = lam * lam
    h2 = 1.0 / points_per_unit
    v1, _, _ = _core_fd_eigen(g, target, 2 * h2)
    v2, vec2, mesh = _core_fd_eigen(g, target, h2)
    # match each fine eigenvalue with its coarse partner
    rich = []
    for val in v2:
        partner = v1[np.argmin(np.abs(v1 - val))]
        rich.append(((4 * val - partner) / 3, abs((4 * val - partner) / 3 - val), val))
    rich = np.array(rich)
    best = int(np.argmin(np.abs(rich[:, 0] - target)))
    lam_fd, err = rich[best, 0], rich[best, 1]
    window = np.abs(rich[:, 0] - lam_fd) <= max(4 * err, 1e-9 * target)
    conn = [mesh.vertex_node[v] for v in g.connecting_vertices if mesh.vertex_node[v] >= 0]
    V = vec2[:, window]
    V = V / np.sqrt(np.einsum("ij,ij->j", V, mesh.M @ V))
    if conn:
        sv = np.linalg.svd(V[conn], compute_uv=False)
        rank = int(np.sum(sv > 1e-3))
    else:
        rank = 0
    return float(lam_fd), float(err), int(window.sum() - rank)


def point_spectrum(g: MetricGraph, max_energy: float, n_grid: int | None = None,
                   fd_points_per_unit: int = 2000) -> SpectralDecomposition:
    """Eigenvalues λ² ∈ (0, max_energy] with multiplicities and orthonormal eigenfunctions."""
    if max_energy <= 0:
        raise PreconditionError("spectrum: max_energy must be positive")
    sys = assemble_system(g)
    d = det_symbolic(sys)
    lam_max = math.sqrt(max_energy)
    spec = SpectralDecomposition(g, sys, float(max_energy), [], [], d)
    if not g.finite_edges:
        return spec
    if g.is_exact:
        omega = base_frequency(g)
        found, roots, _ = _commensurable_zeros(d, omega, lam_max)
        spec.off_circle = list(roots.off_circle)
        spec.omega = float(omega)
        if roots.warning:
            spec.notes.append(roots.warning)
    else:
        found = _incommensurable_zeros(g, d, lam_max, n_grid, fd_points_per_unit)
    for lam, m in found:
        funcs, s = _nullspace_functions(sys, lam, m)
        nullity = int(np.sum(s < 1e-7 * s[0]))
        if nullity != m:
            spec.notes.append(f"λ={lam:.12g}: root multiplicity {m} but SVD nullity {nullity}")
        spec.eigenvalues.append((lam, m))
        spec.eigenfunctions.extend(funcs)
    return spec


def _incommensurable_zeros(g, d: ExpPolynomial, lam_max, n_grid, fd_ppu):
    lmax = float(g.lengths.max())
    span = float(np.abs(d.freqs).max()) if len(d) else 1.0
    if n_grid is None:
        step = math.pi / (8 * max(span, lmax))
        n_grid = int(math.ceil(lam_max / step)) + 1
    grid = np.linspace(0.0, lam_max, int(n_grid))
    if grid[1] - grid[0] > math.pi / (4 * lmax):
        raise ResolutionError(f"spectrum: λ-grid step {grid[1] - grid[0]:.3g} exceeds π/(4·ℓ_max); raise n_grid")
    dd = d.derivative()
    vals = np.abs(ep_eval(d, grid))
    idx = np.flatnonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1
    found = []
    for i in idx:
        z = grid[i]
        for _ in range(200):
            step = ep_eval(d, z) / ep_eval(dd, z)
            z = (z - step).real
            if abs(step) < 1e-15 * max(1.0, abs(z)):
                break
        if not (1e-9 < z <= lam_max) or abs(ep_eval(d, z)) >= ZERO_REL * d.scale:
            continue
        if any(abs(z - f) < 1e-7 * max(1.0, z) for f, _ in found):
            continue
        lam_fd, err, mult = fd_confirm(g, z, fd_ppu)
        if abs(lam_fd - z * z) <= 2 * err + 1e-9 * z * z and mult > 0:
            found.append((float(z), mult))
    found.sort()
    return found


# -- factorization and lower bound -----------------------------------------------------------

@dataclass
class Factorization:
    d_d: ExpPolynomial
    d_c: ExpPolynomial
    margin: float
    on_circle: list
    omega: float
    remainder: float


def factor_determinant(sys: ScatteringSystem) -> Factorization:
    """d = d_d·d_c with d_d = Π (Y - e^{iθ}) over the unit-circle roots of the Laurent reduction."""
    g = sys.graph
    omega = base_frequency(g)
    d = det_symbolic(sys)
    P = ep_to_laurent(d, omega)
    roots = laurent_unit_circle_roots(P)
    if roots.warning:
        raise ConditioningError(f"spectrum: {roots.warning}")
    dd = np.array([1.0 + 0j])
    for theta, m in roots.on_circle:
        for _ in range(m):
            dd = np.convolve(dd, np.array([-np.exp(1j * theta), 1.0]))
    q = P.shifted()
    nq = len(q) - len(dd) + 1
    if nq < 1:
        raise ConditioningError("spectrum: more unit-circle roots than the degree allows")
    # least-squares deflation: conv(dd, quot) ≈ q
    C = np.zeros((len(q), nq), complex)
    for j in range(nq):
        C[j:j + len(dd), j] = dd
    quot, *_ = np.linalg.lstsq(C, q, rcond=None)
    rem = float(np.linalg.norm(C @ quot - q) / np.linalg.norm(q))
    d_d = LaurentPolynomial(dd, 0, float(omega), omega).to_exp_poly()
    d_c = LaurentPolynomial(quot, P.low, float(omega), omega).to_exp_poly()
    return Factorization(d_d, d_c, roots.margin, roots.on_circle, float(omega), rem)


@dataclass
class AlphaEstimate:
    alpha: float
    mu: float
    mu_max: float


def dc_lower_bound(obj, mu_max: float, n_grid: int | None = None, mu_min: float = 0.0) -> AlphaEstimate:
    """Candidate α = min |d_c(μ)| on [μ_min, μ_max] (or of d when S_d is empty).

    Some determinants vanish at μ = 0 (the Y graph: d(0) = 0); the propagator never
    uses a neighbourhood of 0, so pass mu_min > 0 for those.
    """
    if isinstance(obj, ExpPolynomial):
        p = obj
    else:
        sys = obj if isinstance(obj, ScatteringSystem) else assemble_system(obj)
        p = factor_determinant(sys).d_c if sys.graph.is_exact else det_symbolic(sys)
    if n_grid is None:
        span = float(np.abs(p.freqs).max()) if len(p) else 1.0
        n_grid = max(4001, int((mu_max - mu_min) * max(span, 1.0) * 8 / math.pi) + 1)
    mu, val = ep_min_scan(p, mu_max, n_grid, n_refine=10, mu_min=mu_min)
    return AlphaEstimate(val, mu, mu_max)


# -- counterexample sequences ----------------------------------------------------------------

def convergents(x: float, n_max: int):
    """Continued-fraction convergents p_n/q_n of x, stopping when q² exceeds 1/machine-ε."""
    out, truncated = [], False
    p0, q0, p1, q1 = 1, 0, int(math.floor(x)), 1
    r = x - math.floor(x)
    out.append((p1, q1))
    while len(out) < n_max:
        if r < 1e-15:
            truncated = True
            break
        r = 1.0 / r
        a = int(math.floor(r))
        r -= a
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        if q1 * q1 > 1 / np.finfo(float).eps:
            truncated = True
            break
        out.append((p1, q1))
    return out, truncated


def _odd_convergents(x: float, n_max: int):
    """Rational approximations p/q of x with p and q odd: convergents, plus mediants of
    consecutive convergents when a convergent has an even term."""
    raw, truncated = convergents(x, 4 * n_max + 8)
    out = []
    for j, (p, q) in enumerate(raw):
        cands = [(p, q)]
        if j > 0:
            pp, qq = raw[j - 1]
            cands.append((p + pp, q + qq))
            cands.append((p - pp, q - qq))
        for a, b in cands:
            if b > 0 and a % 2 and b % 2 and (not out or b > out[-1][1]):
                out.append((a, b))
                break
        if len(out) >= n_max:
            break
    return out, truncated and len(out) < n_max


@dataclass
class CounterexampleSequence:
    family: str
    ell: float
    rows: list              # (n, p, q, z, value, meets_bound)
    truncated: bool

    @property
    def values(self):
        return [r[4] for r in self.rows]


def _detect_family(g: MetricGraph):
    if len(g.infinite_edges) != 1 or len(g.finite_edges) != 2:
        return None
    e1, e2 = g.finite_edges
    if e1.tail == e1.head and e2.tail == e2.head and e1.tail == e2.tail == g.infinite_edges[0].vertex:
        return "double_tadpole"
    centre = g.infinite_edges[0].vertex
    ok = all(centre in (e.tail, e.head) and g.vertex(e.head if e.tail == centre else e.tail).boundary == "dirichlet"
             for e in (e1, e2))
    return "y_graph" if ok else None


def counterexample_sequence(g: MetricGraph, n_max: int = 8) -> CounterexampleSequence:
    family = _detect_family(g)
    if family is None:
        raise PreconditionError("spectrum: counterexample sequences need a double tadpole or a Y graph")
    if g.is_exact:
        raise PreconditionError("spectrum: counterexample sequences need an irrational (floating) length ratio")
    L1, L2 = g.finite_edges[0].length, g.finite_edges[1].length
    ell = L2 / L1
    sys = assemble_system(g)
    d = det_symbolic(sys)
    rows = []
    if family == "y_graph":
        approx, truncated = convergents(ell, n_max)
        for n, (p, q) in enumerate(approx, start=1):
            z = p * math.pi / ell / L1
            rows.append((n, p, q, z, abs(ep_eval(d, z)), abs(ell - p / q) < 1 / q ** 2))
    else:
        approx, truncated = _odd_convergents(ell, n_max)
        for n, (p, q) in enumerate(approx, start=1):
            z = q * math.pi / L1
            X = np.exp(-1j * z * L1)
            Xl = np.exp(-1j * z * L2)
            dd = (1 - X) * (Xl - 1)
            rows.append((n, p, q, z, abs(ep_eval(d, z) / dd), abs(ell - p / q) < 8 / q ** 2))
    return CounterexampleSequence(family, ell, rows, truncated)


# -- pole structure at an eigenvalue -------------------------------------------------------------

@dataclass
class PoleReport:
    M: np.ndarray
    kill_residual: float
    second_order_norm: float
    radius: float


def check_simple_pole(sys: ScatteringSystem, spec: SpectralDecomposition, lam: float, n_nodes: int = 64) -> PoleReport:
    """Residue and (z-λ)^{-2} coefficient of D(z)^{-1} at λ by trapezoid contour quadrature."""
    if not spec.eigenvalues:
        raise DomainError("spectrum: no eigenvalues (S_d empty)")
    near, dist = spec.nearest_eigenvalue(lam)
    if dist > 1e-8 * max(1.0, lam):
        raise DomainError(f"spectrum: λ={lam} is not an eigenvalue")
    others = [l for l in spec.lambdas if abs(l - near) > 1e-9 * max(1.0, near)]
    gap = min((abs(l - near) for l in others), default=math.inf)
    r = min(0.05, gap / 2)
    if r < 1e-3:
        raise GeometryError(f"spectrum: contour of radius {r:.2e} too close to another eigenvalue")
    for zr in spec.resonances():
        if abs(abs(zr - near) - r) < 1e-3 or abs(zr - near) < r:
            raise GeometryError(f"spectrum: resonance {zr:.6g} inside or on the contour around λ={near:.6g}")
    phi = 2 * math.pi * np.arange(n_nodes) / n_nodes
    dz = r * np.exp(1j * phi)
    inv = np.linalg.inv(sys.evaluate(near + dz))
    M = np.einsum("k,kij->ij", dz, inv) / n_nodes
    M2 = np.einsum("k,kij->ij", dz ** 2, inv) / n_nodes
    kill = float(np.linalg.norm(M @ sys.evaluate(complex(near))))
    return PoleReport(M, kill, float(np.linalg.norm(M2)), r)
