"""Schrödinger propagator e^{-itH} on a metric graph.

Spectral route: with λ = μ², the absolutely continuous part is
    u(t) = -(2/π) ∫ e^{-itμ²} Im K(μ²) f μ dμ,
Im K f = (K f - conj(K conj f)) / 2i, and K f is the resolvent solution built from
the transmission system at real μ.  On every edge this gives
    u_k(t, x) = ∫ (A_k(μ) e^{iμx} + B_k(μ) e^{-iμx}) dμ,
so the μ-integral is a Gauss sum evaluated on the x grid with block exponential sums.
The point-spectrum part is Σ_m e^{-itλ_m²}(f, φ_m)φ_m.

Oracle: P1 finite elements on the truncated graph and Crank-Nicolson in time.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (ConvergenceError, DiscretizationError, ParameterError, PreconditionError,
                     ResolutionError, TruncationError, UnsupportedConfigurationError)
from .fem import build_mesh
from .graph_model import GraphFunction, MetricGraph, norm_L2, norm_Linf
from .quadrature import filon_transform, gauss_panels, sum_over_freq
from .resolvent import eigen_pairings, gamma_double_tadpole
from .scattering import ScatteringSystem, edge_transforms, moments_from_transforms, solve_system
from .spectrum import SpectralDecomposition, _detect_family

SUBSPACES = ("Y_D", "Y_k", "Y_B")
PURE_POINT_REL = 1e-12     # a.c. part below this fraction of ‖f‖ is round-off: skip the band quadrature


@dataclass
class PropagatorConfig:
    band: tuple | None = None          # (a, b) in energy λ = μ²; None selects it from the data
    panels_per_unit: int = 64          # Gauss panels per unit μ (minimum)
    order: int = 16                    # Gauss nodes per panel
    max_panel_phase: float = 12.0      # phase budget of one panel (radians)
    band_mass_target: float = 0.999
    mu_low: float = 1e-3               # lower μ cutoff of the automatic band
    mu_cap: float | None = None        # upper μ search limit; default min(π/(2h), 64)
    tail_tol: float = 1e-10            # automatic band: relative mass left above √b
    tail_report: float = 1e-6          # point-spectrum truncation threshold (relative)
    output_h: float | None = None
    output_x_cut: float | None = None

    def __post_init__(self):
        if self.band is not None:
            a, b = self.band
            if not 0 < a < b:
                raise ParameterError(f"evolution: band must satisfy 0 < a < b, got {self.band}")
        if self.panels_per_unit < 1 or self.order < 2:
            raise ParameterError("evolution: panels_per_unit >= 1 and order >= 2 required")
        if not 0 < self.band_mass_target <= 1:
            raise ParameterError("evolution: band_mass_target must be in (0, 1]")


@dataclass
class EvolutionResult:
    snapshots: list                    # (t, GraphFunction)
    norms: list                        # (t, L2, Linf)
    band_mass_used: float = 1.0
    band: tuple | None = None
    tail_estimate: float = 0.0
    contamination: float = 0.0
    warnings: list = field(default_factory=list)

    def at(self, t):
        for s, u in self.snapshots:
            if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
                return u
        raise KeyError(t)


# -- decomposition -------------------------------------------------------------------------------

@dataclass
class Decomposition:
    """f = f_ac + Σ_m c_m φ_m^h with (f_ac, φ_m) = 0 in the Filon pairing."""
    f: GraphFunction
    ac: GraphFunction
    modes: list                        # (Eigenfunction, coefficient)
    tail: float                        # norm of coefficients with λ² in (Λ/4, Λ]


def decompose(spec: SpectralDecomposition, f: GraphFunction, tail_report: float = 1e-6) -> Decomposition:
    modes, ac = [], f
    for lam, _ in spec.eigenvalues:
        phis, p = eigen_pairings(spec, f, lam)
        if not phis:
            continue
        samples = [phi.sample(like=f) for phi in phis]
        G = np.array([eigen_pairings(spec, s, lam)[1] for s in samples]).T
        c = np.linalg.solve(G, p)
        for phi, cj, s in zip(phis, c, samples):
            modes.append((phi, complex(cj)))
            ac = ac - cj * s
    big = spec.max_energy / 4
    tail = math.sqrt(sum(abs(c) ** 2 for phi, c in modes if phi.lam ** 2 > big))
    nf = norm_L2(f)
    if nf > 0 and tail > tail_report * nf:
        raise TruncationError(f"evolution: point-spectrum tail {tail / nf:.2e}·‖f‖ above Λ_max/4 = {big:.4g}; "
                              f"raise max_energy")
    return Decomposition(f, ac, modes, tail)


def _sample_modes(modes, like: GraphFunction, phases=None):
    vals = {eid: np.zeros(len(x), complex) for eid, x in like.grids.items()}
    for j, (phi, c) in enumerate(modes):
        ph = 1.0 if phases is None else phases[j]
        for eid in phi.A:
            vals[eid] = vals[eid] + ph * c * phi.value(eid, like.grids[eid])
    return like.like(vals, compact=False)


def project(spec: SpectralDecomposition, f: GraphFunction, subspace: str, k: str | None = None,
            tail_report: float = 1e-6) -> GraphFunction:
    """Component of f in Y_D, Y_k (half-line k) or Y_B."""
    g = f.graph
    if subspace == "Y_k":
        if k not in g.infinite_ids:
            raise ParameterError(f"evolution: Y_k needs a half-line id, got {k!r}")
        return f.restrict([k])
    if subspace not in SUBSPACES:
        raise ParameterError(f"evolution: unknown subspace {subspace!r}")
    dec = decompose(spec, f.core(), tail_report)
    yd = _sample_modes(dec.modes, f)
    if subspace == "Y_D":
        return yd
    return f.core() - yd


# -- spectral route --------------------------------------------------------------------------------

def _pure_point(dec: Decomposition):
    return norm_L2(dec.ac) <= PURE_POINT_REL * norm_L2(dec.f)


def _check_assumption(g: MetricGraph, dec: Decomposition):
    """The double tadpole with ℓ = p/q, p and q odd, has no propagator formula on Y_B."""
    if _detect_family(g) != "double_tadpole" or not g.is_exact:
        return
    ratio = Fraction(g.finite_edges[1].exact) / Fraction(g.finite_edges[0].exact)
    if ratio.numerator % 2 and ratio.denominator % 2:
        yb = dec.ac.core()
        if norm_L2(yb) > 1e-10 * max(norm_L2(dec.f), 1e-300):
            raise UnsupportedConfigurationError(
                f"evolution: double tadpole with ℓ = {ratio} (p, q odd): d_c vanishes on the real axis, "
                f"no spectral formula for data with a Y_B component; use the oracle")


def _panel_count(mu_a, mu_b, rate, cfg: PropagatorConfig):
    width = mu_b - mu_a
    return max(1, math.ceil(cfg.panels_per_unit * width), math.ceil(rate * width / cfg.max_panel_phase))


def _extent(f: GraphFunction):
    """Largest coordinate carrying data (per edge, 0 for empty edges)."""
    out = 0.0
    for eid, v in f.values.items():
        nz = np.flatnonzero(v)
        if nz.size:
            out = max(out, float(f.grids[eid][nz[-1]]))
    return out


class _Amplitudes:
    """Per-edge A_k(μ), B_k(μ) at t = 0 for the a.c. part of f."""

    def __init__(self, sys: ScatteringSystem, f: GraphFunction, mu, weights):
        g = sys.graph
        self.mu = mu
        tp = edge_transforms(f, mu)
        tm = edge_transforms(f, -mu)
        tpc = {k: np.conj(v) for k, v in tm.items()}     # transforms of conj f
        tmc = {k: np.conj(v) for k, v in tp.items()}
        F = moments_from_transforms(sys, mu, tp, tm)
        Fc = moments_from_transforms(sys, mu, tpc, tmc)
        b = np.stack([F @ sys.R.T, Fc @ sys.R.T], axis=-1)   # (n, N, 2)
        X = solve_system(sys, mu.astype(complex), b, check=False)
        pref = (-2 / np.pi) * mu * weights / 2j
        self.A, self.B = {}, {}
        for eid in g.edge_ids:
            d, dc = X[:, sys.index(eid, "d"), 0], X[:, sys.index(eid, "d"), 1]
            if g.is_finite(eid):
                c, cc = X[:, sys.index(eid, "c"), 0], X[:, sys.index(eid, "c"), 1]
            else:
                c = cc = np.zeros_like(d)
            self.A[eid] = pref * (d - np.conj(cc)) + weights * tm[eid] / (2 * np.pi)
            self.B[eid] = pref * (c - np.conj(dc)) + weights * tp[eid] / (2 * np.pi)
        self.tp, self.tm = tp, tm

    def density(self):
        """ρ(μ)·w: spectral mass density of f at the nodes (times the quadrature weight)."""
        s = 0.0
        for eid in self.A:
            s = s + (self.A[eid] * np.conj(self.tm[eid]) + self.B[eid] * np.conj(self.tp[eid])).real
        return s


def _mu_cap(f: GraphFunction, cfg: PropagatorConfig):
    h = max(f.spacing(e) for e in f.graph.edge_ids)
    return cfg.mu_cap if cfg.mu_cap is not None else min(math.pi / (2 * h), 64.0)


def _ac_mass(sys, ac: GraphFunction, mu_a, mu_b, cfg, panels=None):
    rate = 2 * _extent(ac) + 2 * sys.graph.total_length
    n = panels or _panel_count(mu_a, mu_b, rate, cfg)
    mu, w = gauss_panels(mu_a, mu_b, n, cfg.order)
    return float(_Amplitudes(sys, ac, mu, w).density().sum()), n


def select_band(sys: ScatteringSystem, ac: GraphFunction, cfg: PropagatorConfig):
    """Automatic band [μ_low², μ_hi²]: μ_hi is where the mass left above it drops below tail_tol."""
    cap = _mu_cap(ac, cfg)
    rate = 2 * _extent(ac) + 2 * sys.graph.total_length
    n = _panel_count(cfg.mu_low, cap, rate, cfg)
    mu, w = gauss_panels(cfg.mu_low, cap, n, cfg.order)
    rho = np.maximum(_Amplitudes(sys, ac, mu, w).density(), 0.0)
    total = rho.sum()
    if total <= 0:
        return (cfg.mu_low ** 2, cap ** 2)
    above = total - np.cumsum(rho)
    idx = np.flatnonzero(above <= cfg.tail_tol * total)
    mu_hi = cap if idx.size == 0 else min(cap, float(mu[idx[0]]) + 1.0)
    return (cfg.mu_low ** 2, mu_hi ** 2)


def band_mass(g_or_sys, spec: SpectralDecomposition, f: GraphFunction, a, b, config: PropagatorConfig | None = None,
              dec: Decomposition | None = None) -> float:
    """(E(a, b)f, f)/‖f‖² from the μ-substituted Stone formula plus the eigenvalues in (a, b)."""
    cfg = config or PropagatorConfig()
    sys = spec.system
    if not 0 < a < b:
        raise ParameterError(f"evolution: band must satisfy 0 < a < b, got {(a, b)}")
    nf2 = norm_L2(f) ** 2
    if nf2 == 0:
        return 0.0
    dec = dec or decompose(spec, f, cfg.tail_report)
    eig = sum(abs(c) ** 2 for phi, c in dec.modes if a < phi.lam ** 2 < b)
    if _pure_point(dec):
        return float(eig / nf2)
    mu_a, mu_b = math.sqrt(a), math.sqrt(b)
    m1, n = _ac_mass(sys, dec.ac, mu_a, mu_b, cfg)
    m2, _ = _ac_mass(sys, dec.ac, mu_a, mu_b, cfg, panels=2 * n)
    if abs(m1 - m2) > 1e-4 * nf2:
        raise ConvergenceError(f"evolution: band-mass quadrature disagreement {abs(m1 - m2) / nf2:.2e}")
    return float((m2 + eig) / nf2)


def _output_like(f: GraphFunction, cfg: PropagatorConfig):
    h = cfg.output_h or f.h
    x_cut = cfg.output_x_cut or f.x_cut
    return GraphFunction.zeros(f.graph, h, x_cut)


def run_spectral(g: MetricGraph, spec: SpectralDecomposition, f: GraphFunction, times,
                 config: PropagatorConfig | None = None) -> EvolutionResult:
    cfg = config or PropagatorConfig()
    if spec.graph != g:
        raise PreconditionError("evolution: spectral decomposition belongs to another graph")
    sys = spec.system
    times = [float(t) for t in np.atleast_1d(times)]
    dec = decompose(spec, f, cfg.tail_report)
    _check_assumption(g, dec)
    nf2 = norm_L2(f) ** 2
    point = _pure_point(dec)
    if point and cfg.band is None:
        a, b = cfg.mu_low ** 2, _mu_cap(f, cfg) ** 2
    else:
        a, b = cfg.band or select_band(sys, dec.ac, cfg)
    mass = band_mass(sys, spec, f, a, b, cfg, dec) if nf2 > 0 else 1.0
    if mass < cfg.band_mass_target:
        raise TruncationError(f"evolution: band ({a:.4g}, {b:.4g}) captures mass {mass:.6f} "
                              f"< target {cfg.band_mass_target}")
    out = _output_like(f, cfg)
    if point:
        snaps, norms = [], []
        for t in times:
            u = _sample_modes(dec.modes, out, [np.exp(-1j * t * phi.lam ** 2) for phi, _ in dec.modes])
            snaps.append((t, u))
            norms.append((t, norm_L2(u), norm_Linf(u)))
        return EvolutionResult(snaps, norms, mass, (a, b), dec.tail)
    mu_a, mu_b = math.sqrt(a), math.sqrt(b)
    tmax = max(abs(t) for t in times)
    rate = 2 * tmax * mu_b + out.x_cut + _extent(dec.ac) + 2 * g.total_length
    mu, w = gauss_panels(mu_a, mu_b, _panel_count(mu_a, mu_b, rate, cfg), cfg.order)
    if mu_b * max(f.spacing(e) for e in g.edge_ids) > math.pi:
        raise ResolutionError("evolution: band edge beyond the grid's resolvable frequency")
    amp = _Amplitudes(sys, dec.ac, mu, w)
    phase = np.exp(-1j * np.outer(mu ** 2, times))          # (n, T)
    freq = np.concatenate([mu, -mu])
    vals = {}
    for eid, x in out.grids.items():
        coef = np.concatenate([amp.A[eid][:, None] * phase, amp.B[eid][:, None] * phase])
        vals[eid] = sum_over_freq(freq, coef, 0.0, x[1] - x[0], len(x))
    snaps, norms = [], []
    for j, t in enumerate(times):
        ph = [np.exp(-1j * t * phi.lam ** 2) for phi, _ in dec.modes]
        u = out.like({eid: v[:, j] for eid, v in vals.items()}, compact=False) + _sample_modes(dec.modes, out, ph)
        snaps.append((t, u))
        norms.append((t, norm_L2(u), norm_Linf(u)))
    return EvolutionResult(snaps, norms, mass, (a, b), dec.tail)


def evolve_spectral(g: MetricGraph, spec: SpectralDecomposition, f: GraphFunction, t,
                    config: PropagatorConfig | None = None) -> GraphFunction:
    return run_spectral(g, spec, f, [t], config).snapshots[0][1]


# -- Crank-Nicolson oracle -------------------------------------------------------------------------

def oracle_domain(f: GraphFunction, t, band_energy=100.0):
    """Heuristic truncation x_cut ≥ 40 + 4√t·√Λ for data of energy up to Λ."""
    return 40.0 + 4 * math.sqrt(abs(t)) * math.sqrt(band_energy)


def run_oracle(g: MetricGraph, f: GraphFunction, times, dt: float | None = None, mass: str = "blend",
               contamination_tol: float = 1e-4, monitor_every: int = 100) -> EvolutionResult:
    """Crank-Nicolson on the P1 discretisation of f's grid (half-lines truncated at f.x_cut, Dirichlet there)."""
    if f.graph != g:
        raise PreconditionError("evolution: data lives on another graph")
    mesh = build_mesh(g, f.h, f.x_cut, True, mass)
    for eid, idx in mesh.index.items():
        removed = idx < 0
        if np.any(np.abs(f.values[eid][removed]) > 1e-12 * max(norm_Linf(f), 1e-300)):
            raise PreconditionError(f"evolution: data on {eid} does not vanish at a Dirichlet or truncated end")
    h = min(f.spacing(e) for e in g.edge_ids)
    dt0 = dt or h * h
    times = [float(t) for t in np.atleast_1d(times)]
    if any(t < 0 for t in times):
        raise ParameterError("evolution: the oracle runs forward in time only")
    order = np.argsort(times)
    u = mesh.to_nodes(f)
    M, K = mesh.M.tocsc(), mesh.K.tocsc()
    outer = _outer_nodes(mesh)
    Mu = lambda v: np.real(np.vdot(v, M @ v))
    total0 = Mu(u)
    cache = {}

    def stepper(step):
        key = round(step, 15)
        if key not in cache:
            lhs = (M + 0.5j * step * K).tocsc()
            cache[key] = (spla.splu(lhs), (M - 0.5j * step * K).tocsr())
        return cache[key]

    contamination = 0.0

    def monitor(v):
        if total0 == 0 or not outer.size:
            return 0.0
        vo = _mask(v, outer, mesh.n)
        return float(np.real(np.vdot(vo, M @ vo)) / total0)

    t_now = 0.0
    snaps = [None] * len(times)
    for j in order:
        span = times[j] - t_now
        if span > 0:
            nsteps = max(1, math.ceil(span / dt0 - 1e-9))
            lu, rhs = stepper(span / nsteps)
            for s in range(nsteps):
                u = lu.solve(rhs @ u)
                if s % monitor_every == 0:
                    contamination = max(contamination, monitor(u))
        t_now = times[j]
        contamination = max(contamination, monitor(u))
        snaps[j] = (times[j], f.like(mesh.from_nodes(u), compact=False))
    warn = []
    if contamination > contamination_tol:
        warn.append(f"evolution: oracle truncation contamination {contamination:.2e} > {contamination_tol:.0e}; "
                    f"raise x_cut")
    norms = [(t, norm_L2(v), norm_Linf(v)) for t, v in snaps]
    res = EvolutionResult(snaps, norms, 1.0, None, 0.0, contamination, warn)
    res.discrete_norms = [math.sqrt(Mu(mesh.to_nodes(v))) for _, v in snaps]
    res.mesh = mesh
    return res


def _outer_nodes(mesh):
    idx = []
    for eid, x in mesh.grids.items():
        if mesh.graph.is_finite(eid):
            continue
        sel = (x >= 0.9 * mesh.x_cut) & (mesh.index[eid] >= 0)
        idx.append(mesh.index[eid][sel])
    return np.concatenate(idx) if idx else np.zeros(0, int)


def _mask(v, idx, n):
    out = np.zeros(n, complex)
    out[idx] = v[idx]
    return out


def evolve_oracle(g: MetricGraph, f: GraphFunction, t, dt: float | None = None, mass: str = "blend") -> GraphFunction:
    res = run_oracle(g, f, [t], dt, mass)
    for msg in res.warnings:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return res.snapshots[0][1]


def crank_nicolson_norms(g: MetricGraph, f: GraphFunction, steps: int, dt: float, mass: str = "blend"):
    """Discrete mass-matrix norms after 0 and `steps` Crank-Nicolson steps."""
    mesh = build_mesh(g, f.h, f.x_cut, True, mass)
    M, K = mesh.M.tocsc(), mesh.K.tocsc()
    lu = spla.splu((M + 0.5j * dt * K).tocsc())
    rhs = (M - 0.5j * dt * K).tocsr()
    u = mesh.to_nodes(f)
    n0 = math.sqrt(np.real(np.vdot(u, M @ u)))
    for _ in range(steps):
        u = lu.solve(rhs @ u)
    return n0, math.sqrt(np.real(np.vdot(u, M @ u)))


# -- double tadpole half-line ------------------------------------------------------------------------

def evolve_double_tadpole_tail(u0_3, t, x, ell, h: float | None = None, x0: float = 0.0,
                               mu_max: float | None = None, order: int = 16, max_panel_phase: float = 8.0):
    """u_3(t, x) on the half-line of a double tadpole (loops 1 and ℓ) for data on the half-line only.

        u_3(t, x) = (1/2π) ∫_ℝ e^{-itμ²} e^{iμx} [û(μ) + γ(μ) û(-μ)] dμ,   û(μ) = ∫_0^∞ e^{-iμy} u0_3(y) dy.

    u0_3 holds samples on a uniform grid x0 + j·h (even number of cells).  At t = 0 the
    γ term vanishes for x > 0 because γ is analytic and bounded in the upper half-plane.
    """
    u0 = np.asarray(u0_3, dtype=complex)
    if h is None:
        raise ParameterError("evolution: grid spacing h of u0_3 is required")
    if len(u0) % 2 == 0:
        raise DiscretizationError("evolution: u0_3 needs an even number of cells")
    if max(abs(u0[0]), abs(u0[-1])) > 1e-7 * np.abs(u0).max():
        raise PreconditionError("evolution: u0_3 must vanish at 0 and at the end of its grid")
    x = np.atleast_1d(np.asarray(x, float))
    y_max = x0 + (len(u0) - 1) * h
    if mu_max is None:
        mu_max = _tail_cutoff(u0, x0, h)
    if mu_max * h > math.pi / 2:
        raise ResolutionError(f"evolution: frequency cutoff {mu_max:.3g} not resolved by h={h}")
    rate = 2 * abs(t) * mu_max + np.abs(x).max() + y_max
    n_pan = max(1, math.ceil(2 * mu_max * rate / max_panel_phase), math.ceil(2 * mu_max * 8))
    mu, w = gauss_panels(-mu_max, mu_max, n_pan, order)
    fh = filon_transform(u0, x0, h, -mu)
    fm = filon_transform(u0, x0, h, mu)
    peak = np.abs(fh).max()
    edge_val = max(abs(filon_transform(u0, x0, h, np.array([s * mu_max]))[0]) for s in (-1, 1))
    if peak > 0 and edge_val > 1e-8 * peak:
        raise ResolutionError(f"evolution: |û(±μ_max)| = {edge_val / peak:.1e}·max; raise mu_max")
    amp = w * np.exp(-1j * t * mu ** 2) * (fh + gamma_double_tadpole(ell, mu) * fm) / (2 * np.pi)
    out = np.empty(len(x), complex)
    step = max(1, int(2e6 // len(mu)))
    for s in range(0, len(x), step):
        out[s:s + step] = np.exp(1j * np.outer(x[s:s + step], mu)) @ amp
    return out


def _tail_cutoff(u0, x0, h, rel=1e-9):
    """Smallest μ (on a coarse scan) beyond which |û| stays below rel·max."""
    cap = math.pi / (2 * h)
    scan = np.linspace(0, cap, 2049)
    a = np.maximum(np.abs(filon_transform(u0, x0, h, scan)), np.abs(filon_transform(u0, x0, h, -scan)))
    big = np.flatnonzero(a > rel * a.max())
    return float(min(cap, scan[big[-1]] + 2.0)) if big.size else 1.0
