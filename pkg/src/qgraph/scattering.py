"""Transmission system D(z) X = R F(z, f) for the resolvent ansatz.

On a finite edge u_k(x) = c_k e^{-izx} + d_k e^{izx} + w_k(x), on a half-line
u_k(x) = d_k e^{izx} + w_k(x), where w_k(x) = (1/2iz) ∫ e^{iz|x-y|} f_k(y) dy is the
free particular solution on the edge.  The moments
    F_{k+} = (1/2iz) ∫ e^{izy} f_k(y) dy,   F_{k-} = (1/2iz) ∫ e^{iz(ℓ_k - y)} f_k(y) dy
are the values of w_k at x = 0 and x = ℓ_k.  Unknowns are ordered (c_k, d_k) per
finite edge, then d_k per half-line; the F vector uses the same slots
(F_{k+} in the c_k slot, F_{k-} in the d_k slot, F_{k+} in a half-line's slot).

Rows: continuity at each interior vertex (first end against every other end), then
Dirichlet/Neumann rows at exterior vertices, then one Kirchhoff row per interior
vertex.  Derivative rows are divided by iz.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import GraphSemanticError, NearSingularError, ParameterError, ResolutionError
from .exp_poly import ExpPolynomial
from .graph_model import GraphFunction, MetricGraph
from .quadrature import filon_cumulative, filon_transform

MAX_SYMBOLIC_N = 24
SINGULAR_REL = 1e-10


@dataclass(frozen=True)
class ScatteringSystem:
    graph: MetricGraph
    D: tuple                     # N×N tuple of ExpPolynomial
    R: np.ndarray                # N×N in {-1, 0, 1}
    unknowns: tuple              # (edge_id, 'c' | 'd') per column
    row_labels: tuple
    _freqs: np.ndarray           # distinct entry frequencies
    _mats: np.ndarray            # (S, N, N) coefficient matrices

    @property
    def N(self):
        return len(self.unknowns)

    def index(self, eid, kind):
        return self.unknowns.index((eid, kind))

    def evaluate(self, z):
        """Numeric D(z); z may be an array, giving shape z.shape + (N, N)."""
        z = np.asarray(z, dtype=complex)
        ph = np.exp(1j * np.multiply.outer(z, self._freqs))
        return np.tensordot(ph, self._mats, axes=(-1, 0))

    def det(self, z):
        return np.linalg.det(self.evaluate(z))


def _monomial(length, exact, sign, coef):
    """coef·e^{iz·sign·length}, exact when the length is."""
    if exact is not None:
        return ExpPolynomial([sign * length], [coef], [sign * exact])
    return ExpPolynomial([sign * length], [coef])


def _end_rows(g: MetricGraph, end, col):
    """(value, inward derivative / iz) rows as {column: ExpPolynomial} and F coefficients."""
    one = ExpPolynomial.constant
    if end.infinite:
        j = col[(end.edge, "d")]
        return {j: one(1.0)}, {j: one(1.0)}, {j: 1.0}, {j: -1.0}
    e = g.finite_edge(end.edge)
    jc, jd = col[(e.id, "c")], col[(e.id, "d")]
    if end.at_zero:
        return ({jc: one(1.0), jd: one(1.0)}, {jc: one(-1.0), jd: one(1.0)},
                {jc: 1.0}, {jc: -1.0})
    em = _monomial(e.length, e.exact, -1, 1.0)   # e^{-izℓ}
    ep = _monomial(e.length, e.exact, 1, 1.0)    # e^{izℓ}
    return ({jc: em, jd: ep}, {jc: em, jd: -ep}, {jd: 1.0}, {jd: -1.0})


def assemble_system(g: MetricGraph) -> ScatteringSystem:
    unknowns = []
    for e in g.finite_edges:
        unknowns += [(e.id, "c"), (e.id, "d")]
    unknowns += [(e.id, "d") for e in g.infinite_edges]
    col = {u: i for i, u in enumerate(unknowns)}
    N = len(unknowns)
    rows, rrows, labels = [], [], []

    def add(a, fa, b=None, fb=None, label=""):
        row, rr = dict(a), {k: -v for k, v in fa.items()}
        if b is not None:
            for k, v in b.items():
                row[k] = row.get(k, ExpPolynomial.zero()) - v
            for k, v in fb.items():
                rr[k] = rr.get(k, 0.0) + v
        rows.append(row)
        rrows.append(rr)
        labels.append(label)

    interior = g.interior_vertices
    kirchhoff = []
    for v in interior:
        ends = g.ends(v)
        if not ends:
            raise GraphSemanticError(f"scattering: vertex {v} has no incident edge")
        data = [_end_rows(g, end, col) for end in ends]
        for j in range(1, len(ends)):
            add(data[0][0], data[0][2], data[j][0], data[j][2], label=f"continuity {v}:{ends[0].edge}-{ends[j].edge}")
        krow, kr = {}, {}
        for _, der, _, fder in data:
            for k, p in der.items():
                krow[k] = krow.get(k, ExpPolynomial.zero()) + p
            for k, c in fder.items():
                kr[k] = kr.get(k, 0.0) + c
        kirchhoff.append((krow, kr, f"kirchhoff {v}"))
    for v in g.exterior_vertices:
        ends = g.ends(v)
        if len(ends) != 1:
            raise GraphSemanticError(f"scattering: exterior vertex {v} must have degree 1")
        val, der, fval, fder = _end_rows(g, ends[0], col)
        if g.vertex(v).boundary == "dirichlet":
            add(val, fval, label=f"dirichlet {v}")
        else:
            add(der, fder, label=f"neumann {v}")
    for krow, kr, label in kirchhoff:
        add(krow, kr, label=label)
    if len(rows) != N:
        raise GraphSemanticError(f"scattering: {len(rows)} conditions for {N} unknowns")

    zero = ExpPolynomial.zero()
    D = tuple(tuple(row.get(j, zero) for j in range(N)) for row in rows)
    R = np.zeros((N, N))
    for i, rr in enumerate(rrows):
        for k, v in rr.items():
            R[i, k] = v
    # collect coefficient matrices per distinct frequency for fast evaluation
    table: dict = {}
    for i in range(N):
        for j in range(N):
            for f, c in D[i][j].terms():
                key = float(f)
                table.setdefault(key, np.zeros((N, N), complex))[i, j] += c
    freqs = np.array(sorted(table))
    mats = np.array([table[f] for f in freqs]) if len(freqs) else np.zeros((0, N, N), complex)
    return ScatteringSystem(g, D, R, tuple(unknowns), tuple(labels), freqs, mats)


def det_symbolic(sys: ScatteringSystem) -> ExpPolynomial:
    """Determinant over the exponential-polynomial ring by row-wise permutation expansion.

    Partial products are shared between permutations that use the same column set,
    so the cost is governed by the number of reachable column subsets.
    """
    N = sys.N
    if N > MAX_SYMBOLIC_N:
        raise ParameterError(f"scattering: symbolic determinant limited to N <= {MAX_SYMBOLIC_N}, got {N}")
    if N == 0:
        return ExpPolynomial.constant(1.0)
    states = {0: ExpPolynomial.constant(1.0)}
    for i in range(N):
        nxt: dict[int, ExpPolynomial] = {}
        row = sys.D[i]
        for mask, acc in states.items():
            for j in range(N):
                if mask >> j & 1 or row[j].is_zero:
                    continue
                inversions = bin(mask >> (j + 1)).count("1")
                term = acc * row[j]
                if inversions % 2:
                    term = -term
                m2 = mask | (1 << j)
                nxt[m2] = nxt[m2] + term if m2 in nxt else term
        states = {k: v for k, v in nxt.items() if not v.is_zero}
        if not states:
            return ExpPolynomial.zero()
    return states.get((1 << N) - 1, ExpPolynomial.zero())


# -- right-hand side ------------------------------------------------------------------------

def edge_transforms(f: GraphFunction, w, edges=None):
    """T_k(w) = ∫ f_k(y) e^{iwy} dy for each edge (Filon quadrature); w may be an array."""
    w = np.asarray(w, dtype=complex)
    out = {}
    for eid in (edges or f.graph.edge_ids):
        v = f.values[eid]
        if not np.any(v):
            out[eid] = np.zeros(w.shape, complex)
            continue
        dx = f.spacing(eid)
        if w.size and np.abs(w).max() * dx > np.pi:
            raise ResolutionError(f"scattering: |z|·h = {np.abs(w).max() * dx:.3g} > π; refine the grid")
        out[eid] = filon_transform(v, 0.0, dx, w)
    return out


def moments_from_transforms(sys: ScatteringSystem, z, tplus, tminus):
    """F vector (shape z.shape + (N,)) from T_k(z) and T_k(-z)."""
    z = np.asarray(z, dtype=complex)
    F = np.zeros(z.shape + (sys.N,), complex)
    g = sys.graph
    for e in g.finite_edges:
        F[..., sys.index(e.id, "c")] = tplus[e.id] / (2j * z)
        F[..., sys.index(e.id, "d")] = np.exp(1j * z * e.length) * tminus[e.id] / (2j * z)
    for e in g.infinite_edges:
        F[..., sys.index(e.id, "d")] = tplus[e.id] / (2j * z)
    return F


def moments(sys: ScatteringSystem, f: GraphFunction, z):
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ParameterError("scattering: moments need z != 0")
    return moments_from_transforms(sys, z, edge_transforms(f, z), edge_transforms(f, -z, sys.graph.finite_ids))


def assemble_rhs(sys: ScatteringSystem, f: GraphFunction, z):
    """b(z, f) = R F(z, f)."""
    return moments(sys, f, z) @ sys.R.T


@dataclass
class CoefficientVector:
    system: ScatteringSystem
    z: complex
    values: np.ndarray

    def c(self, eid):
        return self.values[self.system.index(eid, "c")]

    def d(self, eid):
        return self.values[self.system.index(eid, "d")]


def hadamard_ratio(Dz):
    """|det D| / Π ‖row_i‖, a scale-free singularity indicator in [0, 1]."""
    rows = np.linalg.norm(Dz, axis=-1)
    _, logdet = np.linalg.slogdet(Dz)
    return np.exp(logdet - np.log(rows).sum(axis=-1))


def solve_system(sys: ScatteringSystem, z, b, check=True):
    """Solve D(z) X = b for a scalar or an array of z (b has shape z.shape + (N,) or + (N, m))."""
    z = np.asarray(z, dtype=complex)
    Dz = sys.evaluate(z)
    if check:
        ratio = np.atleast_1d(hadamard_ratio(Dz))
        if np.any(ratio < SINGULAR_REL):
            k = int(np.argmin(ratio))
            zz = np.atleast_1d(z)[k]
            raise NearSingularError(complex(zz), float(abs(np.linalg.det(sys.evaluate(zz)))))
    b = np.asarray(b, dtype=complex)
    vec = b.ndim == z.ndim + 1
    X = np.linalg.solve(Dz, b[..., None] if vec else b)
    return X[..., 0] if vec else X


def solve_coefficients(sys: ScatteringSystem, f: GraphFunction, z) -> CoefficientVector:
    z = complex(z)
    if z.imag < 0:
        raise ParameterError("scattering: solve_coefficients needs Im z >= 0")
    X = solve_system(sys, z, assemble_rhs(sys, f, z))
    return CoefficientVector(sys, z, X)


def solvability_at_eigenvalue(sys: ScatteringSystem, f: GraphFunction, lam: float) -> float:
    """Least-squares residual ‖D(λ)X - b(λ, f)‖; zero exactly when f is orthogonal to the eigenspace."""
    Dz = sys.evaluate(complex(lam))
    b = assemble_rhs(sys, f, complex(lam))
    X, *_ = np.linalg.lstsq(Dz, b, rcond=None)
    return float(np.linalg.norm(Dz @ X - b))


def reconstruct(coef: CoefficientVector, f: GraphFunction):
    """Per-edge samples of u = homogeneous part + free particular part on f's grids."""
    sys, z = coef.system, coef.z
    out = {}
    for eid in sys.graph.edge_ids:
        x = f.x(eid)
        dx = f.spacing(eid)
        v = f.values[eid]
        A = filon_cumulative(v, 0.0, dx, -z)[0]           # ∫_0^x e^{-izy} f
        Bt = filon_cumulative(v, 0.0, dx, z)[0]
        B = Bt[-1] - Bt                                   # ∫_x^end e^{izy} f
        w = (np.exp(1j * z * x) * A + np.exp(-1j * z * x) * B) / (2j * z)
        u = coef.d(eid) * np.exp(1j * z * x) + w
        if sys.graph.is_finite(eid):
            u = u + coef.c(eid) * np.exp(-1j * z * x)
        out[eid] = u
    return out
