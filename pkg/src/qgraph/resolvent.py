"""Resolvent kernel K(x, y, z²) and its boundary values on the real axis.

K is the kernel of (z² - H)^{-1}, so (Δ + z²)K(·, y) = δ_y and on a single edge the free
part is e^{iz|x-y|}/(2iz).  Values are obtained by solving the transmission system with
the exact moments of a point source at y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConvergenceError, DomainError, NearSingularError, ParameterError, PoleError,
                     PreconditionError)
from .graph_model import GraphFunction
from .scattering import ScatteringSystem, assemble_rhs, edge_transforms, solve_system
from .spectrum import SpectralDecomposition

EPS_LADDER = (1e-3, 5e-4, 2.5e-4)
NEAR_EIGEN = 0.05          # use the ε-ladder within this distance of some λ_m
TAGS = ("full", "Y_k", "Y_B")


@dataclass(frozen=True)
class KernelQuery:
    x: tuple                  # (edge id, coordinate)
    y: tuple
    z: complex
    tag: str = "full"         # "full", "Y_k" or "Y_B"
    k: str | None = None      # half-line of a Y_k tag; defaults to the edge of y


def _check_point(g, point, name):
    eid, s = point
    if eid not in g.edge_ids:
        raise ParameterError(f"resolvent: unknown edge {eid!r} in {name}")
    if s < 0 or (g.is_finite(eid) and s > g.edge_length(eid)):
        raise ParameterError(f"resolvent: {name} coordinate {s} outside edge {eid}")


def _check_query(sys: ScatteringSystem, q: KernelQuery):
    g = sys.graph
    _check_point(g, q.x, "x")
    _check_point(g, q.y, "y")
    if q.tag not in TAGS:
        raise ParameterError(f"resolvent: unknown subspace tag {q.tag!r}")
    if q.tag == "Y_k":
        k = q.k or q.y[0]
        if k not in g.infinite_ids or q.y[0] != k:
            raise ParameterError(f"resolvent: Y_k tag needs y on the half-line k (k={k}, y on {q.y[0]})")
    if q.tag == "Y_B" and not g.is_finite(q.y[0]):
        raise ParameterError("resolvent: Y_B tag needs y on the compact core")


def point_source_rhs(sys: ScatteringSystem, z, y_edge, ys):
    """b = R F for unit point sources at ys on y_edge; shape (N, len(ys))."""
    g = sys.graph
    ys = np.atleast_1d(np.asarray(ys, float))
    F = np.zeros((sys.N, len(ys)), complex)
    F[sys.index(y_edge, "c" if g.is_finite(y_edge) else "d")] = np.exp(1j * z * ys) / (2j * z)
    if g.is_finite(y_edge):
        L = g.edge_length(y_edge)
        F[sys.index(y_edge, "d")] = np.exp(1j * z * (L - ys)) / (2j * z)
    return sys.R @ F


def kernel_block(sys: ScatteringSystem, z, x_edge, xs, y_edge, ys, check=True):
    """K(x, y, z²) for x in xs on x_edge and y in ys on y_edge, shape (len(xs), len(ys))."""
    z = complex(z)
    if z == 0:
        raise DomainError("resolvent: z = 0 is excluded")
    xs = np.atleast_1d(np.asarray(xs, float))
    ys = np.atleast_1d(np.asarray(ys, float))
    X = solve_system(sys, z, point_source_rhs(sys, z, y_edge, ys), check=check)
    g = sys.graph
    K = np.outer(np.exp(1j * z * xs), X[sys.index(x_edge, "d")])
    if g.is_finite(x_edge):
        K += np.outer(np.exp(-1j * z * xs), X[sys.index(x_edge, "c")])
    if x_edge == y_edge:
        K += np.exp(1j * z * np.abs(xs[:, None] - ys[None, :])) / (2j * z)
    return K


def resolvent_kernel(sys: ScatteringSystem, q: KernelQuery) -> complex:
    z = complex(q.z)
    if z.imag <= 0:
        raise DomainError(f"resolvent: resolvent_kernel needs Im z > 0, got z={z}")
    _check_query(sys, q)
    return complex(kernel_block(sys, z, q.x[0], q.x[1], q.y[0], q.y[1])[0, 0])


def _eigen_part(spec: SpectralDecomposition, q: KernelQuery, z):
    """Σ_m φ_m(x)φ_m(y)/(z² - λ_m²), the pole part removed for the Y_B tag."""
    s = 0j
    for phi in spec.eigenfunctions:
        s += phi.value(q.x[0], q.x[1]) * phi.value(q.y[0], q.y[1]) / (z * z - phi.lam ** 2)
    return s


def _tagged(sys, spec, q, z):
    K = complex(kernel_block(sys, z, q.x[0], q.x[1], q.y[0], q.y[1], check=False)[0, 0])
    if q.tag == "Y_B":
        K -= _eigen_part(spec, q, z)
    return K


def richardson_limit(fn, eps=EPS_LADDER):
    """Extrapolate fn(ε) to ε = 0 from a geometric ladder (ratio 2), with an error estimate."""
    vals = np.array([fn(e) for e in eps], dtype=complex)
    r1 = 2 * vals[1:] - vals[:-1]                  # first-order eliminations
    r2 = (4 * r1[1:] - r1[:-1]) / 3                # second order
    return complex(r2[-1]), float(abs(r2[-1] - r1[-1]))


def limiting_kernel(sys: ScatteringSystem, spec: SpectralDecomposition, q: KernelQuery,
                    tol: float = 1e-6) -> complex:
    """K(x, y, (μ + i0)²) for real μ > 0.

    The full kernel is solved directly at real μ and has poles on √S_d.  The Y_k and Y_B
    kernels are regular there; near an eigenvalue they are obtained by Richardson
    extrapolation of the kernel at μ + iε, away from eigenvalues by the direct solve.
    """
    _check_query(sys, q)
    mu = complex(q.z)
    if abs(mu.imag) > 0 or mu.real <= 0:
        raise DomainError(f"resolvent: limiting_kernel needs real μ > 0, got {q.z}")
    mu = mu.real
    lam, dist = spec.nearest_eigenvalue(mu)
    if q.tag == "full":
        if lam is not None and dist < 1e-9 * max(1.0, mu):
            raise PoleError(f"resolvent: μ²={mu * mu:.12g} ∈ S_d: full-kernel pole, use a Y_k or Y_B tag")
        try:
            return complex(kernel_block(sys, mu, q.x[0], q.x[1], q.y[0], q.y[1])[0, 0])
        except NearSingularError as exc:
            raise PoleError(f"resolvent: μ²={mu * mu:.12g} is numerically in S_d: full-kernel pole, "
                            f"use a Y_k or Y_B tag") from exc
    if lam is None or dist > NEAR_EIGEN:
        return _tagged(sys, spec, q, mu)
    val, err = richardson_limit(lambda e: _tagged(sys, spec, q, mu + 1j * e))
    if err > tol * max(1.0, abs(val)):
        raise ConvergenceError(f"resolvent: ε-extrapolation disagreement {err:.2e} at μ={mu}")
    return val


# -- double tadpole --------------------------------------------------------------------------

def gamma_double_tadpole(ell, z):
    """Half-line reflection coefficient of the double tadpole with loop lengths 1 and ℓ."""
    z = np.asarray(z, dtype=complex)
    X = np.exp(-1j * z)
    Xl = np.exp(-1j * z * ell)
    num = -3 * X * Xl + Xl + X + 5
    den = -3 + X + Xl + 5 * X * Xl
    if np.any(np.abs(den) < 1e-12):
        raise PoleError("resolvent: γ denominator vanishes (d_c(z) = 0)")
    out = num / den
    return complex(out) if out.ndim == 0 else out


# -- regularity at an eigenvalue ---------------------------------------------------------------

def eigen_pairings(spec: SpectralDecomposition, f: GraphFunction, lam):
    """(f, φ) for the eigenfunctions at λ, computed from the Filon edge transforms used by
    the right-hand side, so that orthogonality here means solvability of D(λ)X = b."""
    phis = spec.functions_for(lam)
    core = f.graph.finite_ids
    tp = edge_transforms(f, lam, core)
    tm = edge_transforms(f, -lam, core)
    return phis, np.array([phi.pair(tp, tm) for phi in phis])


def project_out(spec: SpectralDecomposition, f: GraphFunction, lam):
    """f minus its component along the λ eigenspace (Gram-corrected for the sampled φ)."""
    phis, p = eigen_pairings(spec, f, lam)
    if not phis:
        return f, 0.0
    samples = [phi.sample(like=f) for phi in phis]
    G = np.array([eigen_pairings(spec, s, lam)[1] for s in samples]).T    # G[i, j] = (φ_j^h, φ_i)
    c = np.linalg.solve(G, p)
    out = f
    for cj, s in zip(c, samples):
        out = out - cj * s
    resid = float(np.abs(eigen_pairings(spec, out, lam)[1]).max())
    return out, resid


def _extrapolate_to_zero(deltas, vals):
    """Polynomial (degree len-1) extrapolation of vals(δ) to δ = 0."""
    d = np.asarray(deltas, float)
    V = np.vander(d, len(d), increasing=True)
    return np.linalg.solve(V, np.asarray(vals))[0]


def check_regularity_at_eigenvalue(sys: ScatteringSystem, spec: SpectralDecomposition, f: GraphFunction,
                                   lam, deltas=(1e-2, 1e-3, 1e-4), project=True):
    """Two-sided limits of the coefficient vector X(z, f) at z = λ.

    Returns (is_continuous, max_jump).  With project=False f is used as given
    (diagnostic mode: a component along the eigenspace shows up as a divergent jump).
    """
    if not spec.eigenvalues:
        return True, 0.0
    near, dist = spec.nearest_eigenvalue(lam)
    if dist > 1e-8 * max(1.0, lam):
        raise DomainError(f"resolvent: λ={lam} is not an eigenvalue")
    if project:
        f, resid = project_out(spec, f, near)
        scale = max(float(np.abs(np.concatenate([v for v in f.values.values()])).max()), 1e-300)
        if resid > 1e-9 * max(1.0, scale):
            raise PreconditionError(f"resolvent: projection residual {resid:.2e} exceeds 1e-9")
    sides = []
    for sgn in (-1, 1):
        zs = np.array([near + sgn * d for d in deltas], complex)
        b = assemble_rhs(sys, f, zs)
        X = solve_system(sys, zs, b, check=False)
        sides.append(np.array([_extrapolate_to_zero(deltas, X[:, j]) for j in range(sys.N)]))
    jump = float(np.abs(sides[0] - sides[1]).max())
    size = float(max(np.abs(sides[0]).max(), np.abs(sides[1]).max()))
    return bool(jump < 1e-5 * max(size, 1e-300)), jump

