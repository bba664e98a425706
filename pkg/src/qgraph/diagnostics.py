"""Dispersive decay scans, probability densities and flows, continuity identities.

Probability on the compact core P_B(t) = Σ_{k∈I_B} ‖u_k(t)‖² obeys
    i dP_B/dt + Σ_{k∈I_U} j_k(t, 0) = 0,   j = ū u_x - u ū_x,
for i u_t = -u_xx with Kirchhoff vertices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import PreconditionError, QGraphError, ResolutionError
from .evolution import (PropagatorConfig, _extent, decompose, run_oracle, run_spectral, select_band)
from .graph_model import GraphFunction, MetricGraph, norm_L1, norm_L2, simpson_weights
from .spectrum import SpectralDecomposition

# one-sided fourth-order first-derivative stencil at the left end of a grid
_STENCIL = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


@dataclass
class DecayTable:
    rows: list                          # (t, sup_norm, sqrt_t_times_sup, l2_norm)
    slope: float
    interval: tuple                     # 95% confidence interval of the slope
    t_min_fit: float
    flagged: list = field(default_factory=list)    # (t, error message)

    @property
    def times(self):
        return np.array([r[0] for r in self.rows])

    @property
    def scaled(self):
        return np.array([r[2] for r in self.rows])

    def tail_ratio(self):
        """max/median of √t·sup over the fit window."""
        s = np.array([r[2] for r in self.rows if r[0] >= self.t_min_fit])
        return float(s.max() / np.median(s)) if s.size else math.nan


@dataclass
class FlowReport:
    t: float | None
    flows: dict                         # (vertex, edge) -> j at the edge end on that vertex
    halfline_flows: dict                # half-line id -> j_k(t, 0)
    aggregate: complex                  # Σ_{k∈I_U} j_k(0)
    core_probability: float
    dPB_dt: float | None = None
    residual: float | None = None


def fit_slope(times, values, t_min_fit=4.0, level=0.95):
    """Least-squares slope of log(values) against log(times) over t ≥ t_min_fit, with a CI."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    sel = (t >= t_min_fit) & (v > 0)
    if sel.sum() < 2:
        return math.nan, (math.nan, math.nan)
    lr = stats.linregress(np.log(t[sel]), np.log(v[sel]))
    dof = int(sel.sum()) - 2
    q = stats.t.ppf(0.5 + level / 2, dof) if dof > 0 else math.inf
    half = q * lr.stderr if dof > 0 else math.inf
    return float(lr.slope), (float(lr.slope - half), float(lr.slope + half))


def decay_scan(g: MetricGraph, spec: SpectralDecomposition, f: GraphFunction, times,
               config: PropagatorConfig | None = None, remove_point_spectrum: bool = True,
               t_min_fit: float = 4.0, output_h: float | None = None) -> DecayTable:
    """Sup and L² norms of e^{-itH}f on the whole graph (spectral route).

    Half-lines are sampled out to where the fastest captured frequency can travel,
    so the sup norm is taken over the region carrying the solution.
    """
    cfg = config or PropagatorConfig()
    times = np.asarray(times, float)
    if np.any(np.diff(times) <= 0):
        raise PreconditionError("diagnostics: times must be strictly increasing")
    if remove_point_spectrum:
        dec = decompose(spec, f, cfg.tail_report)
        f = dec.ac
    else:
        dec = decompose(spec, f, cfg.tail_report)
    band = cfg.band or select_band(spec.system, dec.ac, cfg)
    mu_b = math.sqrt(band[1])
    h_out = output_h or min(0.05, math.pi / (8 * mu_b))
    rows, flagged = [], []
    for t in times:
        x_cut = max(f.x_cut, _extent(f) + 2 * mu_b * t + 10.0)
        run_cfg = PropagatorConfig(**{**cfg.__dict__, "band": band, "output_h": h_out, "output_x_cut": x_cut})
        try:
            res = run_spectral(g, spec, f, [t], run_cfg)
        except QGraphError as exc:
            flagged.append((float(t), str(exc)))
            continue
        _, l2, sup = res.norms[0]
        rows.append((float(t), sup, math.sqrt(t) * sup, l2))
    slope, ci = fit_slope([r[0] for r in rows], [r[1] for r in rows], t_min_fit)
    return DecayTable(rows, slope, ci, t_min_fit, flagged)


# -- flows ---------------------------------------------------------------------------------------

def _end_derivative(v, dx):
    if len(v) < 5:
        raise ResolutionError("diagnostics: at least 5 grid points per edge are needed for the flow stencil")
    return float(np.real(_STENCIL @ v[:5].real)) / dx + 1j * float(_STENCIL @ v[:5].imag) / dx


def _flow(v, dx):
    """j = ū u_x - u ū_x at the first grid point of v (x increasing away from the vertex)."""
    du = _end_derivative(v, dx)
    return np.conj(v[0]) * du - v[0] * np.conj(du)


def core_probability(u: GraphFunction) -> float:
    s = 0.0
    for e in u.graph.finite_edges:
        x = u.grids[e.id]
        s += float(simpson_weights(len(x) - 1, x[1] - x[0]) @ np.abs(u.values[e.id]) ** 2)
    return s


def probability_flow(u: GraphFunction, t: float | None = None) -> FlowReport:
    """Flows j at every edge end, with x measured along the edge away from its vertex."""
    g = u.graph
    flows, half = {}, {}
    for e in g.finite_edges:
        v, dx = u.values[e.id], u.spacing(e.id)
        flows[(e.tail, e.id)] = _flow(v, dx)
        flows[(e.head, e.id)] = _flow(v[::-1], dx)
    for e in g.infinite_edges:
        half[e.id] = _flow(u.values[e.id], u.spacing(e.id))
        flows[(e.vertex, e.id)] = half[e.id]
    agg = complex(sum(half.values()))
    return FlowReport(t, flows, half, agg, core_probability(u))


def continuity_check(g: MetricGraph, spec: SpectralDecomposition | None, f: GraphFunction, t: float,
                     dt: float = 1e-3, oracle_dt: float | None = None):
    """|i dP_B/dt + Σ_{k∈I_U} j_k(t, 0)| on oracle snapshots, with the scale of both sides.

    Returns (residual, scale, FlowReport at t).
    """
    if t - dt < 0:
        raise PreconditionError("diagnostics: need t ≥ δt for the centred difference")
    if norm_L2(f) == 0:
        return 0.0, 0.0, probability_flow(f, t)
    res = run_oracle(g, f, [t - dt, t, t + dt], dt=oracle_dt)
    p_lo, p_hi = core_probability(res.at(t - dt)), core_probability(res.at(t + dt))
    rep = probability_flow(res.at(t), t)
    rep.dPB_dt = (p_hi - p_lo) / (2 * dt)
    resid = abs(1j * rep.dPB_dt + rep.aggregate)
    rep.residual = resid
    scale = max(abs(rep.dPB_dt), abs(rep.aggregate))
    return float(resid), float(scale), rep


@dataclass
class FlowDecayTable:
    rows: list                          # (t, |dP_B/dt|, t·|dP_B/dt|, P_B)
    flagged: list
    t_min_fit: float
    log_constant: float | None = None   # C in |P_B(t2) - P_B(t1)| ≤ C ln(t2/t1)

    def tail_ratio(self):
        s = np.array([r[2] for r in self.rows if r[0] >= self.t_min_fit])
        return float(s.max() / np.median(s)) if s.size else math.nan

    def bounded(self):
        return self.tail_ratio() <= 2.0


def check_hf_l1(f: GraphFunction) -> float:
    """‖Hf‖_{L¹} with H = -d²/dx² applied by centred differences edge by edge."""
    s = 0.0
    for eid, v in f.values.items():
        dx = f.spacing(eid)
        lap = np.zeros(len(v), complex)
        lap[1:-1] = -(v[2:] - 2 * v[1:-1] + v[:-2]) / dx ** 2
        x = f.grids[eid]
        s += float(simpson_weights(len(x) - 1, x[1] - x[0]) @ np.abs(lap))
    return s


def flow_decay_scan(g: MetricGraph, spec: SpectralDecomposition, f: GraphFunction, times,
                    config: PropagatorConfig | None = None, t_min_fit: float = 4.0) -> FlowDecayTable:
    """t·|dP_B/dt| with dP_B/dt = i Σ_{k∈I_U} j_k(t, 0) evaluated on the spectral route."""
    cfg = config or PropagatorConfig()
    dec = decompose(spec, f, cfg.tail_report)
    if norm_L2(dec.ac - f) > 1e-8 * max(norm_L2(f), 1e-300):
        raise PreconditionError("diagnostics: flow decay needs P_ac f = f (remove the Y_D part first)")
    if not math.isfinite(norm_L1(f) + check_hf_l1(f)):
        raise PreconditionError("diagnostics: f and Hf must be in L¹")
    band = cfg.band or select_band(spec.system, f, cfg)
    h_out = cfg.output_h or min(f.h, 0.01)
    run_cfg = PropagatorConfig(**{**cfg.__dict__, "band": band, "output_h": h_out,
                                  "output_x_cut": max(1.0, 8 * h_out)})
    rows, flagged, probs = [], [], []
    for t in np.asarray(times, float):
        try:
            u = run_spectral(g, spec, f, [t], run_cfg).snapshots[0][1]
        except QGraphError as exc:
            flagged.append((float(t), str(exc)))
            continue
        rep = probability_flow(u, t)
        rate = (1j * rep.aggregate).real
        rows.append((float(t), abs(rate), t * abs(rate), rep.core_probability))
        probs.append((float(t), rep.core_probability))
    C = None
    if len(probs) >= 2:
        ratios = [abs(p2 - p1) / math.log(t2 / t1) for (t1, p1), (t2, p2) in zip(probs, probs[1:]) if t2 > t1 > 0]
        C = max(ratios) if ratios else None
    return FlowDecayTable(rows, flagged, t_min_fit, C)
