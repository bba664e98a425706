"""P1 finite elements on a metric graph.

Vertex nodes are shared by all incident edges, so continuity is built in and the
Kirchhoff condition is the natural boundary condition of the weak form.
Dirichlet vertices and the far ends of truncated half-lines are removed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph_model import GraphFunction, MetricGraph, edge_grid


@dataclass
class GraphMesh:
    graph: MetricGraph
    h: float
    x_cut: float
    grids: dict          # edge id -> grid
    index: dict          # edge id -> global node index per grid point, -1 where removed
    n: int
    K: sp.csr_matrix     # stiffness ∫ u' v'
    M: sp.csr_matrix     # mass ∫ u v (lumped, consistent or blended)
    vertex_node: dict    # vertex id -> node index or -1

    def to_nodes(self, f: GraphFunction) -> np.ndarray:
        """Nodal vector from edge samples; shared vertex values are averaged over incident ends."""
        u = np.zeros(self.n, complex)
        cnt = np.zeros(self.n)
        for eid, idx in self.index.items():
            keep = idx >= 0
            np.add.at(u, idx[keep], f.values[eid][keep])
            np.add.at(cnt, idx[keep], 1)
        return u / np.maximum(cnt, 1)

    def from_nodes(self, u) -> dict:
        out = {}
        for eid, idx in self.index.items():
            v = np.zeros(len(idx), complex)
            keep = idx >= 0
            v[keep] = u[idx[keep]]
            out[eid] = v
        return out


def build_mesh(g: MetricGraph, h: float, x_cut: float = 40.0, include_halflines: bool = True,
               mass: str = "lumped") -> GraphMesh:
    grids = edge_grid(g, h, x_cut)
    if not include_halflines:
        grids = {k: v for k, v in grids.items() if g.is_finite(k)}
    vertex_node = {}
    n = 0
    for v in g.vertices:
        used = any(e.edge in grids for e in g.ends(v.id))
        if v.boundary == "dirichlet" or not used:
            vertex_node[v.id] = -1
        else:
            vertex_node[v.id] = n
            n += 1
    index = {}
    for eid, x in grids.items():
        m = len(x)
        idx = np.empty(m, dtype=int)
        idx[1:-1] = np.arange(n, n + m - 2)
        n += m - 2
        if g.is_finite(eid):
            e = g.finite_edge(eid)
            idx[0], idx[-1] = vertex_node[e.tail], vertex_node[e.head]
        else:
            vtx = [e.vertex for e in g.infinite_edges if e.id == eid][0]
            idx[0], idx[-1] = vertex_node[vtx], -1
        index[eid] = idx
    rows, cols, kv, mv = [], [], [], []
    for eid, x in grids.items():
        idx = index[eid]
        dx = np.diff(x)
        a, b = idx[:-1], idx[1:]
        ke = np.stack([1 / dx, -1 / dx, -1 / dx, 1 / dx], axis=1)
        cons = np.stack([dx / 3, dx / 6, dx / 6, dx / 3], axis=1)
        lump = np.stack([dx / 2, 0 * dx, 0 * dx, dx / 2], axis=1)
        me = {"lumped": lump, "consistent": cons, "blend": 0.5 * (cons + lump)}[mass]
        pairs = [(a, a), (a, b), (b, a), (b, b)]
        for j, (r, c) in enumerate(pairs):
            keep = (r >= 0) & (c >= 0)
            rows.append(r[keep])
            cols.append(c[keep])
            kv.append(ke[keep, j])
            mv.append(me[keep, j])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    K = sp.csr_matrix((np.concatenate(kv), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((np.concatenate(mv), (rows, cols)), shape=(n, n))
    return GraphMesh(g, h, x_cut, grids, index, n, K, M, vertex_node)
