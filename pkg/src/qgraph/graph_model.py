"""Metric graphs with finite edges and half-lines, graph functions and the text format.

A finite edge is identified with (0, length); the ``tail`` vertex sits at x = 0 and
the ``head`` vertex at x = length.  A half-line is identified with (0, inf) and is
attached at x = 0.  Interior vertices carry the Kirchhoff condition; vertices with a
boundary tag are exterior and carry a Dirichlet or Neumann condition.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .errors import (DiscretizationError, GraphParseError, GraphSemanticError,
                     ParameterError, TruncationError)

BOUNDARY_TAGS = ("dirichlet", "neumann")
DEFAULT_X_CUT = 40.0


def natural_key(s: str):
    """Sort key treating digit runs as integers, so that e2 < e10."""
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s))


def _coerce_length(value) -> tuple[float, Fraction | None]:
    if isinstance(value, bool):
        raise ParameterError("edge length must be a number")
    if isinstance(value, (int, Fraction)):
        fr = Fraction(value)
        return float(fr), fr
    if isinstance(value, str):
        return parse_length(value)
    return float(value), None


def parse_length(text: str) -> tuple[float, Fraction | None]:
    """'p/q' gives an exact rational, anything else a float."""
    text = text.strip()
    if "/" in text:
        p, q = text.split("/", 1)
        fr = Fraction(int(p), int(q))
        return float(fr), fr
    return float(text), None


def format_length(length: float, exact: Fraction | None) -> str:
    if exact is not None:
        return f"{exact.numerator}/{exact.denominator}"
    return repr(float(length))


@dataclass(frozen=True)
class Vertex:
    id: str
    boundary: str | None = None


@dataclass(frozen=True)
class FiniteEdge:
    id: str
    tail: str
    head: str
    length: float
    exact: Fraction | None = None


@dataclass(frozen=True)
class HalfLine:
    id: str
    vertex: str


@dataclass(frozen=True)
class End:
    """One end of an edge at a vertex: ``at_zero`` is False only for the x = length end."""
    edge: str
    at_zero: bool
    infinite: bool


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    entity: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    @property
    def codes(self):
        return [v.code for v in self.violations]


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[Vertex, ...]
    finite_edges: tuple[FiniteEdge, ...] = ()
    infinite_edges: tuple[HalfLine, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        vs = tuple(sorted(self.vertices, key=lambda v: natural_key(v.id)))
        fe = tuple(sorted(self.finite_edges, key=lambda e: natural_key(e.id)))
        ie = tuple(sorted(self.infinite_edges, key=lambda e: natural_key(e.id)))
        object.__setattr__(self, "vertices", vs)
        object.__setattr__(self, "finite_edges", fe)
        object.__setattr__(self, "infinite_edges", ie)
        vids = [v.id for v in vs]
        if len(set(vids)) != len(vids):
            raise GraphSemanticError("graph_model: duplicate vertex id")
        eids = [e.id for e in fe] + [e.id for e in ie]
        if len(set(eids)) != len(eids):
            raise GraphSemanticError("graph_model: duplicate edge id")
        known = set(vids)
        for v in vs:
            if v.boundary is not None and v.boundary not in BOUNDARY_TAGS:
                raise GraphSemanticError(f"graph_model: vertex {v.id}: unknown boundary tag {v.boundary!r}")
        for e in fe:
            for w in (e.tail, e.head):
                if w not in known:
                    raise GraphSemanticError(f"graph_model: edge {e.id} references undefined vertex {w!r}")
        for e in ie:
            if e.vertex not in known:
                raise GraphSemanticError(f"graph_model: halfline {e.id} references undefined vertex {e.vertex!r}")

    # -- structure -----------------------------------------------------------------
    @property
    def vertex_ids(self):
        return [v.id for v in self.vertices]

    @property
    def finite_ids(self):
        return [e.id for e in self.finite_edges]

    @property
    def infinite_ids(self):
        return [e.id for e in self.infinite_edges]

    @property
    def edge_ids(self):
        return self.finite_ids + self.infinite_ids

    def vertex(self, vid) -> Vertex:
        for v in self.vertices:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def finite_edge(self, eid) -> FiniteEdge:
        for e in self.finite_edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def is_finite(self, eid) -> bool:
        return eid in self.finite_ids

    def edge_length(self, eid) -> float:
        """Length of a finite edge, inf for a half-line."""
        for e in self.finite_edges:
            if e.id == eid:
                return e.length
        if eid in self.infinite_ids:
            return np.inf
        raise KeyError(eid)

    def ends(self, vid) -> list[End]:
        """Edge ends meeting at a vertex, in edge order with the x=0 end first."""
        out = []
        for e in self.finite_edges:
            if e.tail == vid:
                out.append(End(e.id, True, False))
            if e.head == vid:
                out.append(End(e.id, False, False))
        for e in self.infinite_edges:
            if e.vertex == vid:
                out.append(End(e.id, True, True))
        return out

    def degree(self, vid) -> int:
        return len(self.ends(vid))

    def is_exterior(self, vid) -> bool:
        return self.vertex(vid).boundary is not None

    @property
    def interior_vertices(self):
        return [v.id for v in self.vertices if v.boundary is None]

    @property
    def exterior_vertices(self):
        return [v.id for v in self.vertices if v.boundary is not None]

    @property
    def connecting_vertices(self):
        halfline_vertices = {e.vertex for e in self.infinite_edges}
        return [v for v in self.interior_vertices if v in halfline_vertices]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.finite_edges], dtype=float)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum()) if self.finite_edges else 0.0

    @property
    def is_exact(self) -> bool:
        """True when every finite length is an exact rational (commensurable graph)."""
        return bool(self.finite_edges) and all(e.exact is not None for e in self.finite_edges)

    def with_name(self, name):
        return MetricGraph(self.vertices, self.finite_edges, self.infinite_edges, name=name)

    def hash(self) -> str:
        return hashlib.sha256(save_graph(self).encode()).hexdigest()


# -- validation ----------------------------------------------------------------------

def validate_graph(g: MetricGraph) -> ValidationReport:
    """List every violated structural assumption, ordered by entity id."""
    out: list[Violation] = []
    if not g.infinite_edges:
        out.append(Violation("I_U_EMPTY", "I_U empty: the graph has no infinite edge", "graph"))
    # connectivity over vertices (half-lines hang off one vertex each)
    adj = {v: set() for v in g.vertex_ids}
    for e in g.finite_edges:
        adj[e.tail].add(e.head)
        adj[e.head].add(e.tail)
    if g.vertices:
        seen = {g.vertex_ids[0]}
        stack = [g.vertex_ids[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        for v in g.vertex_ids:
            if v not in seen:
                out.append(Violation("DISCONNECTED", "graph is not connected", v))
    for e in g.finite_edges:
        if not (e.length > 0) or not np.isfinite(e.length):
            out.append(Violation("NONPOSITIVE_LENGTH", f"length {e.length} is not positive", e.id))
    for v in g.connecting_vertices:
        if g.degree(v) < 3:
            out.append(Violation("CONNECTING_DEGREE", f"connecting degree < 3 (degree {g.degree(v)})", v))
    for v in g.exterior_vertices:
        if g.degree(v) != 1:
            out.append(Violation("EXTERIOR_DEGREE",
                                 f"boundary tag on a vertex of degree {g.degree(v)} (must be 1)", v))
    out.sort(key=lambda x: (natural_key(x.entity), x.code))
    return ValidationReport(tuple(out))


# -- example families ----------------------------------------------------------------

FAMILIES = ("star", "tree_one_dirichlet", "triangle", "tadpole", "double_tadpole", "spider", "y_graph", "line")


def _positive(name, value):
    flt, ex = _coerce_length(value)
    if not flt > 0 or not np.isfinite(flt):
        raise ParameterError(f"graph_model: {name} must be a positive length, got {value!r}")
    return flt, ex


def _edge(eid, tail, head, value, name="length"):
    flt, ex = _positive(name, value)
    return FiniteEdge(eid, tail, head, flt, ex)


def star(valency: int = 3, length=1) -> MetricGraph:
    """One finite edge from the centre (x=0) to a Dirichlet vertex plus valency-1 half-lines at the centre."""
    if int(valency) != valency or valency < 3:
        raise ParameterError(f"graph_model: star valency must be an integer >= 3, got {valency!r}")
    valency = int(valency)
    vs = (Vertex("v0"), Vertex("v1", "dirichlet"))
    hs = tuple(HalfLine(f"h{j}", "v0") for j in range(1, valency))
    return MetricGraph(vs, (_edge("e1", "v0", "v1", length),), hs, name=f"star({valency})")


def tree_one_dirichlet(lengths=(1, 1)) -> MetricGraph:
    """Dirichlet vertex -- e1 -- a (one half-line) -- e2 -- b (two half-lines)."""
    l1, l2 = lengths
    vs = (Vertex("a"), Vertex("b"), Vertex("d", "dirichlet"))
    es = (_edge("e1", "d", "a", l1), _edge("e2", "a", "b", l2))
    hs = (HalfLine("h1", "a"), HalfLine("h2", "b"), HalfLine("h3", "b"))
    return MetricGraph(vs, es, hs, name="tree_one_dirichlet")


def triangle(side=1) -> MetricGraph:
    """Cycle of three equal edges with a half-line at each vertex."""
    vs = (Vertex("v1"), Vertex("v2"), Vertex("v3"))
    es = (_edge("e1", "v1", "v2", side, "side"), _edge("e2", "v2", "v3", side, "side"),
          _edge("e3", "v3", "v1", side, "side"))
    hs = (HalfLine("h1", "v1"), HalfLine("h2", "v2"), HalfLine("h3", "v3"))
    return MetricGraph(vs, es, hs, name="triangle")


def spider(n: int = 1, length=1) -> MetricGraph:
    """A loop of the given length with n half-lines at its vertex."""
    if int(n) != n or n < 1:
        raise ParameterError(f"graph_model: spider needs N >= 1 half-lines, got {n!r}")
    n = int(n)
    hs = tuple(HalfLine(f"h{j}", "v0") for j in range(1, n + 1))
    return MetricGraph((Vertex("v0"),), (_edge("e1", "v0", "v0", length),), hs,
                       name="tadpole" if n == 1 else f"spider({n})")


def tadpole(length=1) -> MetricGraph:
    return spider(1, length)


def double_tadpole(ell=1) -> MetricGraph:
    """Loops e1 (length 1) and e2 (length ell) and half-line e3 at one vertex.

    Unknown ordering is (c1, d1, c2, d2, d3).
    """
    es = (_edge("e1", "v", "v", 1), _edge("e2", "v", "v", ell, "ell"))
    return MetricGraph((Vertex("v"),), es, (HalfLine("e3", "v"),), name="double_tadpole")


def y_graph(ell=1) -> MetricGraph:
    """Dirichlet-ended edges of lengths 1 and ell and a half-line at the centre."""
    vs = (Vertex("v0"), Vertex("v1", "dirichlet"), Vertex("v2", "dirichlet"))
    es = (_edge("e1", "v0", "v1", 1), _edge("e2", "v0", "v2", ell, "ell"))
    return MetricGraph(vs, es, (HalfLine("e3", "v0"),), name="y_graph")


def line() -> MetricGraph:
    """Two half-lines glued at a degree-2 vertex: the free line (not a valid fixture graph)."""
    return MetricGraph((Vertex("v0"),), (), (HalfLine("h1", "v0"), HalfLine("h2", "v0")), name="line")


_BUILDERS = {
    "star": star, "tree_one_dirichlet": tree_one_dirichlet, "triangle": triangle,
    "tadpole": tadpole, "double_tadpole": double_tadpole, "spider": spider,
    "y_graph": y_graph, "line": line,
}


def build_example(family: str, *args, **params) -> MetricGraph:
    try:
        builder = _BUILDERS[family]
    except KeyError:
        raise ParameterError(f"graph_model: unknown family {family!r}; choose from {', '.join(FAMILIES)}") from None
    try:
        return builder(*args, **params)
    except TypeError as exc:
        raise ParameterError(f"graph_model: bad parameters for {family}: {exc}") from None


# -- text format ---------------------------------------------------------------------

_KEYS = {"vertex": {"boundary"}, "edge": {"from", "to", "length"}, "halfline": {"from"}}
_REQUIRED = {"vertex": set(), "edge": {"from", "to", "length"}, "halfline": {"from"}}


def save_graph(g: MetricGraph) -> str:
    lines = []
    for v in g.vertices:
        lines.append(f"vertex {v.id}" + (f" boundary={v.boundary}" if v.boundary else ""))
    for e in g.finite_edges:
        lines.append(f"edge {e.id} from={e.tail} to={e.head} length={format_length(e.length, e.exact)}")
    for e in g.infinite_edges:
        lines.append(f"halfline {e.id} from={e.vertex}")
    return "\n".join(lines) + "\n"


def load_graph(text: str) -> MetricGraph:
    vertices, finite, infinite = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", body)]
        if not tokens:
            continue
        kind, col = tokens[0]
        if kind not in _KEYS:
            raise GraphParseError(f"unknown statement {kind!r}", lineno, col)
        if len(tokens) < 2 or "=" in tokens[1][0]:
            raise GraphParseError(f"{kind} needs an id", lineno, col)
        ident = tokens[1][0]
        kv = {}
        for tok, tcol in tokens[2:]:
            if "=" not in tok:
                raise GraphParseError(f"expected key=value, got {tok!r}", lineno, tcol)
            key, value = tok.split("=", 1)
            if key not in _KEYS[kind]:
                raise GraphParseError(f"unknown key {key!r} for {kind}", lineno, tcol)
            if key in kv:
                raise GraphParseError(f"duplicate key {key!r}", lineno, tcol)
            if not value:
                raise GraphParseError(f"empty value for {key!r}", lineno, tcol)
            kv[key] = (value, tcol)
        missing = _REQUIRED[kind] - kv.keys()
        if missing:
            raise GraphParseError(f"{kind} {ident}: missing {', '.join(sorted(missing))}", lineno, col)
        if kind == "vertex":
            b = kv.get("boundary", (None, 0))
            if b[0] is not None and b[0] not in BOUNDARY_TAGS:
                raise GraphParseError(f"boundary must be dirichlet or neumann, got {b[0]!r}", lineno, b[1])
            vertices.append(Vertex(ident, b[0]))
        elif kind == "edge":
            value, lcol = kv["length"]
            try:
                flt, ex = parse_length(value)
            except (ValueError, ZeroDivisionError):
                raise GraphParseError(f"bad length {value!r}", lineno, lcol) from None
            if not (flt > 0) or not np.isfinite(flt):
                raise GraphParseError(f"length must be positive, got {value!r}", lineno, lcol)
            finite.append(FiniteEdge(ident, kv["from"][0], kv["to"][0], flt, ex))
        else:
            infinite.append(HalfLine(ident, kv["from"][0]))
    return MetricGraph(tuple(vertices), tuple(finite), tuple(infinite))


# -- graph functions -----------------------------------------------------------------

def default_h(g: MetricGraph) -> float:
    return float(g.lengths.min()) / 200 if g.finite_edges else 0.005


def edge_grid(g: MetricGraph, h: float, x_cut: float) -> dict[str, np.ndarray]:
    """Uniform grids with an even number of cells: exact fit on finite edges, [0, x_cut] on half-lines."""
    grids = {}
    for e in g.finite_edges:
        n = max(2, 2 * int(round(e.length / (2 * h))))
        grids[e.id] = np.linspace(0.0, e.length, n + 1)
    n = max(2, 2 * int(np.ceil(x_cut / (2 * h) - 1e-9)))
    for e in g.infinite_edges:
        grids[e.id] = np.linspace(0.0, x_cut, n + 1)
    return grids


def simpson_weights(n: int, dx: float) -> np.ndarray:
    if n % 2:
        raise DiscretizationError("Simpson rule needs an even number of cells")
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * dx / 3


class GraphFunction:
    """Complex samples on per-edge uniform grids.

    ``compact`` asserts that half-line samples vanish on the last grid cell, so the
    function is supported in [0, x_cut] on every half-line.
    """

    def __init__(self, graph: MetricGraph, values: Mapping[str, np.ndarray], h: float,
                 x_cut: float = DEFAULT_X_CUT, compact: bool = True):
        self.graph = graph
        self.h = float(h)
        self.x_cut = float(x_cut)
        self.compact = bool(compact)
        self.grids = edge_grid(graph, self.h, self.x_cut)
        vals = {}
        for eid, x in self.grids.items():
            v = np.asarray(values.get(eid, np.zeros(len(x))), dtype=complex).copy()
            if v.shape != x.shape:
                raise DiscretizationError(f"graph_model: edge {eid} expects {len(x)} samples, got {v.shape}")
            v.setflags(write=False)
            vals[eid] = v
        self.values = vals
        if compact:
            for eid in graph.infinite_ids:
                if np.any(vals[eid][-2:] != 0):
                    raise TruncationError(f"graph_model: samples on {eid} do not vanish on the last cell")

    @classmethod
    def zeros(cls, graph, h=None, x_cut=DEFAULT_X_CUT):
        return cls(graph, {}, default_h(graph) if h is None else h, x_cut)

    @classmethod
    def from_functions(cls, graph, funcs: Mapping[str, Callable], h=None, x_cut=DEFAULT_X_CUT,
                       tail_tol=1e-12):
        """Sample per-edge callables; half-line tails below tail_tol·max are set to zero."""
        h = default_h(graph) if h is None else h
        grids = edge_grid(graph, h, x_cut)
        vals = {}
        for eid, fn in funcs.items():
            if eid not in grids:
                raise KeyError(eid)
            v = np.asarray(fn(grids[eid]), dtype=complex) * np.ones(len(grids[eid]))
            if eid in graph.infinite_ids:
                scale = np.abs(v).max() if v.size else 0.0
                tail = np.abs(v[-2:])
                if np.any(tail > tail_tol * scale):
                    raise TruncationError(f"graph_model: function on {eid} is not negligible at x_cut={x_cut}")
                v[-2:] = 0
            vals[eid] = v
        return cls(graph, vals, h, x_cut)

    def like(self, values, compact=None):
        return GraphFunction(self.graph, values, self.h, self.x_cut,
                             self.compact if compact is None else compact)

    def x(self, eid) -> np.ndarray:
        return self.grids[eid]

    def spacing(self, eid) -> float:
        x = self.grids[eid]
        return float(x[1] - x[0])

    def __getitem__(self, eid):
        return self.values[eid]

    def check_compatible(self, other: "GraphFunction"):
        if self.graph != other.graph or self.h != other.h or self.x_cut != other.x_cut:
            raise DiscretizationError("graph_model: graph functions live on incompatible grids")

    def _binary(self, other, op):
        if isinstance(other, GraphFunction):
            self.check_compatible(other)
            return self.like({k: op(v, other.values[k]) for k, v in self.values.items()},
                             compact=self.compact and other.compact)
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        if isinstance(c, GraphFunction):
            return NotImplemented
        return self.like({k: c * v for k, v in self.values.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def conj(self):
        return self.like({k: np.conj(v) for k, v in self.values.items()})

    def restrict(self, edge_ids):
        keep = set(edge_ids)
        return self.like({k: (v if k in keep else np.zeros_like(v)) for k, v in self.values.items()},
                         compact=True if keep <= set(self.graph.finite_ids) else self.compact)

    def core(self):
        return self.restrict(self.graph.finite_ids)

    def support_edges(self):
        return [k for k, v in self.values.items() if np.any(v != 0)]


def _pairs(f: GraphFunction, g: GraphFunction):
    f.check_compatible(g)
    for eid in f.graph.edge_ids:
        x = f.grids[eid]
        yield simpson_weights(len(x) - 1, x[1] - x[0]), f.values[eid], g.values[eid]


def inner_product(f: GraphFunction, g: GraphFunction) -> complex:
    """Sum over edges of the integral of f·conj(g), composite Simpson per edge."""
    return complex(sum(np.dot(w, a * np.conj(b)) for w, a, b in _pairs(f, g)))


def norm_L2(f: GraphFunction) -> float:
    return float(np.sqrt(sum(np.dot(w, np.abs(a) ** 2) for w, a, _ in _pairs(f, f))))


def norm_L1(f: GraphFunction) -> float:
    return float(sum(np.dot(w, np.abs(a)) for w, a, _ in _pairs(f, f)))


def norm_Linf(f: GraphFunction) -> float:
    return float(max((np.abs(v).max() for v in f.values.values() if v.size), default=0.0))


def norm_L2_core(f: GraphFunction) -> float:
    return norm_L2(f.core())
