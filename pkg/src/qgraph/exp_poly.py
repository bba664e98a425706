"""Exponential polynomials Σ_j c_j e^{i z λ_j} and their Laurent reductions.

With commensurable frequencies λ_j = -n_j ω, an exponential polynomial becomes a
Laurent polynomial in Y = e^{-izω}; its roots on the unit circle give the real
zeros and the off-circle roots control how far |p| stays from zero on the real axis.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import CommensurabilityError, RangeError

MERGE_TOL = 1e-12
PRUNE_REL = 1e-14
CLUSTER_TOL = 1e-7


class ExpPolynomial:
    """Finite sum Σ c_j e^{izλ_j} with strictly increasing real frequencies.

    ``exact`` optionally holds the frequencies as Fractions; arithmetic between
    exact operands stays exact and merges frequencies by equality.
    """

    __slots__ = ("freqs", "coeffs", "exact")

    def __init__(self, freqs=(), coeffs=(), exact=None):
        f = np.asarray(freqs, dtype=float).reshape(-1)
        c = np.asarray(coeffs, dtype=complex).reshape(-1)
        if f.shape != c.shape:
            raise ValueError("frequencies and coefficients differ in length")
        if exact is not None:
            exact = [Fraction(e) for e in exact]
            if len(exact) != len(f):
                raise ValueError("exact frequencies differ in length")
        self.freqs, self.coeffs, self.exact = _normalize(f, c, exact)

    # -- constructors -----------------------------------------------------------------
    @classmethod
    def constant(cls, c=1.0):
        return cls([0.0], [c], [Fraction(0)])

    @classmethod
    def monomial(cls, freq, c=1.0):
        """c·e^{iz·freq}; int/Fraction frequencies are kept exact."""
        if isinstance(freq, (int, Fraction)) and not isinstance(freq, bool):
            return cls([float(freq)], [c], [Fraction(freq)])
        return cls([float(freq)], [c])

    @classmethod
    def zero(cls):
        return cls()

    # -- basic properties ---------------------------------------------------------------
    @property
    def is_exact(self):
        return self.exact is not None

    @property
    def is_zero(self):
        return self.coeffs.size == 0

    @property
    def scale(self):
        """Σ|c_j|, the natural size of |p(z)| on the real axis."""
        return float(np.abs(self.coeffs).sum())

    def __len__(self):
        return len(self.freqs)

    def terms(self):
        return list(zip(self.freqs.tolist(), self.coeffs.tolist()))

    def __repr__(self):
        body = " + ".join(f"({c.real:.6g}{c.imag:+.6g}j)e^{{iz·{f:.6g}}}" for f, c in self.terms())
        return f"ExpPolynomial({body or '0'})"

    # -- arithmetic ---------------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, ExpPolynomial):
            return other
        if np.isscalar(other):
            return ExpPolynomial.constant(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        exact = self.exact + other.exact if self.is_exact and other.is_exact else None
        return ExpPolynomial(np.concatenate([self.freqs, other.freqs]),
                             np.concatenate([self.coeffs, other.coeffs]), exact)

    __radd__ = __add__

    def __neg__(self):
        return ExpPolynomial(self.freqs, -self.coeffs, self.exact)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return ExpPolynomial(self.freqs, self.coeffs * other, self.exact)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.is_zero or other.is_zero:
            return ExpPolynomial.zero()
        f = (self.freqs[:, None] + other.freqs[None, :]).ravel()
        c = (self.coeffs[:, None] * other.coeffs[None, :]).ravel()
        exact = None
        if self.is_exact and other.is_exact:
            exact = [a + b for a in self.exact for b in other.exact]
        return ExpPolynomial(f, c, exact)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = ExpPolynomial.constant(1.0)
        for _ in range(int(n)):
            out = out * self
        return out

    def conj_reflect(self):
        """The exponential polynomial z ↦ conj(p(conj z))."""
        exact = [-e for e in self.exact] if self.is_exact else None
        return ExpPolynomial(-self.freqs, np.conj(self.coeffs), exact)

    def derivative(self):
        return ExpPolynomial(self.freqs, self.coeffs * 1j * self.freqs, self.exact)

    # -- evaluation ---------------------------------------------------------------------
    def __call__(self, z):
        return ep_eval(self, z)

    def allclose(self, other, rtol=1e-12):
        """Coefficientwise comparison after aligning frequencies."""
        d = self - other
        ref = max(self.scale, other.scale, 1e-300)
        return d.scale <= rtol * ref


def _normalize(f, c, exact):
    if f.size == 0:
        return f, c, ([] if exact is not None else None)
    if exact is not None:
        acc: dict[Fraction, complex] = {}
        for e, cc in zip(exact, c):
            acc[e] = acc.get(e, 0j) + cc
        keys = sorted(acc)
        ex = keys
        f = np.array([float(k) for k in keys])
        c = np.array([acc[k] for k in keys], dtype=complex)
    else:
        order = np.argsort(f, kind="stable")
        f, c = f[order], c[order]
        starts = np.concatenate([[0], np.flatnonzero(np.diff(f) >= MERGE_TOL) + 1])
        c = np.add.reduceat(c, starts)
        f = f[starts]
        ex = None
    mag = np.abs(c)
    if mag.size and mag.max() > 0:
        keep = mag >= PRUNE_REL * mag.max()
    else:
        keep = np.zeros(mag.shape, bool)
    if ex is not None:
        ex = [e for e, k in zip(ex, keep) if k]
    return f[keep], c[keep], ex


def ep_add(p, q):
    return p + q


def ep_mul(p, q):
    return p * q


def ep_scale(p, c):
    return p * c


def ep_eval(p: ExpPolynomial, z):
    """Σ c_j e^{izλ_j} by direct summation; z may be an array."""
    z = np.asarray(z, dtype=complex)
    if p.is_zero:
        return np.zeros(z.shape, complex) if z.ndim else 0j
    lam = np.abs(p.freqs).max()
    if z.size and np.abs(z.imag).max() * lam > 700:
        raise RangeError(f"exp_poly: |Im z|·max|λ| = {np.abs(z.imag).max() * lam:.1f} > 700 overflows")
    out = np.exp(1j * np.multiply.outer(z, p.freqs)) @ p.coeffs
    return out if z.ndim else complex(out)


# -- Laurent reduction -------------------------------------------------------------------

@dataclass
class LaurentPolynomial:
    """Σ_n coeffs[n - low] Y^n with Y = e^{-izω}."""
    coeffs: np.ndarray
    low: int
    omega: float
    omega_exact: Fraction | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        nz = np.flatnonzero(c)
        if nz.size == 0:
            c = np.zeros(0, complex)
        else:
            self.low += int(nz[0])
            c = c[nz[0]:nz[-1] + 1]
        self.coeffs = c

    @property
    def high(self):
        return self.low + len(self.coeffs) - 1

    @property
    def degree(self):
        return max(0, len(self.coeffs) - 1)

    @property
    def scale(self):
        return float(np.abs(self.coeffs).sum())

    def __call__(self, Y):
        return laurent_eval(self, Y)

    def shifted(self):
        """Ordinary polynomial coefficients of Y^{-low}·P(Y), lowest power first."""
        return self.coeffs.copy()

    def to_exp_poly(self) -> ExpPolynomial:
        powers = np.arange(self.low, self.high + 1)
        keep = self.coeffs != 0
        if self.omega_exact is not None:
            exact = [-int(n) * self.omega_exact for n in powers[keep]]
            return ExpPolynomial([float(e) for e in exact], self.coeffs[keep], exact)
        return ExpPolynomial(-powers[keep] * self.omega, self.coeffs[keep])


def laurent_eval(P: LaurentPolynomial, Y):
    Y = np.asarray(Y, dtype=complex)
    if P.coeffs.size == 0:
        return np.zeros(Y.shape, complex)
    out = np.polynomial.polynomial.polyval(Y, P.coeffs) * Y ** P.low
    return out if Y.ndim else complex(out)


def ep_to_laurent(p: ExpPolynomial, omega) -> LaurentPolynomial:
    """Write p(z) = P(e^{-izω}); every frequency must be an integer multiple of ω."""
    omega_exact = Fraction(omega) if isinstance(omega, (int, Fraction)) else None
    if p.is_zero:
        return LaurentPolynomial(np.zeros(0, complex), 0, float(omega), omega_exact)
    if p.is_exact and omega_exact is not None:
        powers = []
        for e in p.exact:
            n = -e / omega_exact
            if n.denominator != 1:
                raise CommensurabilityError(f"exp_poly: frequency {e} is not a multiple of ω={omega_exact}")
            powers.append(int(n))
        powers = np.array(powers)
    else:
        n = -p.freqs / float(omega)
        powers = np.round(n).astype(int)
        bad = np.abs(n - powers) > 1e-9 * np.maximum(1.0, np.abs(n))
        if np.any(bad):
            raise CommensurabilityError(
                f"exp_poly: frequency {p.freqs[bad][0]!r} is not a multiple of ω={float(omega)!r}")
    low = int(powers.min())
    c = np.zeros(int(powers.max()) - low + 1, complex)
    np.add.at(c, powers - low, p.coeffs)
    return LaurentPolynomial(c, low, float(omega), omega_exact)


@dataclass
class UnitCircleRoots:
    on_circle: list            # (theta, multiplicity), theta in (-pi, pi]
    off_circle: list           # complex roots with ||r| - 1| >= tol
    margin: float              # min over off-circle roots of ||r| - 1|
    warning: str | None = None
    clusters: list = field(default_factory=list)   # (root, multiplicity) for all roots


def _newton(q, r, iters=8):
    dq = np.polynomial.polynomial.polyder(q)
    for _ in range(iters):
        v = np.polynomial.polynomial.polyval(r, q)
        d = np.polynomial.polynomial.polyval(r, dq)
        if d == 0:
            break
        step = v / d
        r_new = r - step
        if abs(np.polynomial.polynomial.polyval(r_new, q)) >= abs(v):
            break
        r = r_new
        if abs(step) <= 1e-16 * max(1.0, abs(r)):
            break
    return r


def laurent_unit_circle_roots(P: LaurentPolynomial, tol: float = 1e-6) -> UnitCircleRoots:
    """Classify the roots of P relative to the unit circle."""
    q = P.shifted()
    if len(q) <= 1:
        return UnitCircleRoots([], [], math.inf, "no roots: degree 0")
    raw = np.roots(q[::-1])
    raw = np.array([_newton(q, r) for r in raw])
    # cluster roots closer than CLUSTER_TOL (scaled) into multiple roots
    n = len(raw)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(raw[i] - raw[j]) < CLUSTER_TOL * max(1.0, abs(raw[i])):
                parent[find(i)] = find(j)
    groups: dict[int, list] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(raw[i])
    clusters, warning = [], None
    for members in groups.values():
        m = len(members)
        r = complex(np.mean(members))
        if m > 1:
            dq = q
            for _ in range(m - 1):
                dq = np.polynomial.polynomial.polyder(dq)
            refined = _newton(dq, r)
            if abs(refined - r) < 1e-5:
                r = refined
        if m > 3:
            warning = f"ill-conditioned cluster of {m} roots near {r:.6g}"
        clusters.append((r, m))
    clusters.sort(key=lambda rm: (np.angle(rm[0]), abs(rm[0])))
    on, off = [], []
    for r, m in clusters:
        if abs(abs(r) - 1) < tol:
            on.append((float(np.angle(r)), m))
        else:
            off.extend([r] * m)
    margin = min((abs(abs(r) - 1) for r in off), default=math.inf)
    if warning:
        warnings.warn(f"exp_poly: {warning}", RuntimeWarning, stacklevel=2)
    return UnitCircleRoots(on, off, margin, warning, clusters)


# -- real-axis minimum scan ----------------------------------------------------------------

def _polish(p, mu, v, lo, hi, iters=8):
    """Gauss-Newton steps μ ← μ - Re(conj(p) p')/|p'|² for the minimum of |p|²."""
    dp = p.derivative()
    for _ in range(iters):
        pv, dv = ep_eval(p, mu), ep_eval(dp, mu)
        den = abs(dv) ** 2
        if den == 0:
            break
        m2 = min(max(mu - (np.conj(pv) * dv).real / den, lo), hi)
        v2 = abs(ep_eval(p, m2))
        if v2 >= v:
            break
        mu, v = m2, v2
    return mu, v


def ep_min_scan(p: ExpPolynomial, mu_max: float, n_grid: int = 4001, n_refine: int = 3,
                mu_min: float = 0.0):
    """Candidate global minimum of |p(μ)| on [μ_min, μ_max].

    Grid scan; each grid point is ranked by the minimum of the linearisation
    |p(μ_i) + p'(μ_i)t| over |t| ≤ step, which sees dips narrower than the grid.
    The n_refine best-ranked separated points are refined by bounded Brent search.
    """
    if mu_max <= mu_min or n_grid < 2:
        raise ValueError("ep_min_scan needs mu_max > mu_min and n_grid >= 2")
    grid = np.linspace(mu_min, mu_max, int(n_grid))
    step = grid[1] - grid[0]
    if p.is_zero:
        return float(grid[0]), 0.0
    pv = ep_eval(p, grid)
    dv = ep_eval(p.derivative(), grid)
    vals = np.abs(pv)
    den = np.abs(dv) ** 2
    t = np.where(den > 0, -np.real(np.conj(pv) * dv) / np.where(den > 0, den, 1), 0.0)
    t = np.clip(t, -step, step)
    t = np.clip(grid + t, mu_min, mu_max) - grid
    predicted = np.minimum(vals, np.abs(pv + dv * t))
    chosen = []
    for i in np.argsort(predicted, kind="stable"):
        if all(abs(int(i) - j) > 2 for j in chosen):
            chosen.append(int(i))
        if len(chosen) >= n_refine:
            break
    k0 = int(np.argmin(vals))
    best = (float(grid[k0]), float(vals[k0]))
    for i in chosen:
        lo, hi = max(grid[i] - step, mu_min), min(grid[i] + step, mu_max)
        res = minimize_scalar(lambda m: abs(ep_eval(p, m)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, hi)})
        mu, v = _polish(p, float(res.x), float(res.fun), lo, hi)
        tie = abs(v - best[1]) <= 1e-12 * max(best[1], 1e-300)
        if v < best[1] and not tie or tie and mu < best[0]:
            best = (mu, v)
    return best
