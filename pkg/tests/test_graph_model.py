import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qgraph.errors import GraphParseError, GraphSemanticError, ParameterError, TruncationError
from qgraph.graph_model import (FAMILIES, GraphFunction, build_example, inner_product, load_graph, norm_L1,
                                norm_L2, norm_Linf, save_graph, validate_graph)

PARAMS = {
    "star": [(3,), (5,)], "tree_one_dirichlet": [((1, 2),)], "triangle": [(1,), ("1/2",)],
    "tadpole": [(1,)], "double_tadpole": [(1,), ("1/2",), (math.sqrt(2),)], "spider": [(1,), (2,), (4,)],
    "y_graph": [("3/2",), (1.618,)], "line": [()],
}


@pytest.mark.parametrize("family", FAMILIES)
def test_builders_validate_clean(family):
    for args in PARAMS[family]:
        g = build_example(family, *args)
        report = validate_graph(g)
        if family == "line":
            # two half-lines on a degree-2 vertex: the free-line sanity fixture
            assert report.codes == ["CONNECTING_DEGREE"]
        else:
            assert not report, report.codes


def test_triangle_structure():
    g = build_example("triangle", 1)
    assert len(g.finite_edges) == 3 and len(g.infinite_edges) == 3
    assert all(e.length == 1 for e in g.finite_edges)
    assert len(g.connecting_vertices) == 3
    assert all(g.degree(v) == 3 for v in g.vertex_ids)


def test_double_tadpole_structure():
    g = build_example("double_tadpole", 1)
    v = g.infinite_edges[0].vertex
    assert len(g.infinite_edges) == 1
    assert all(e.tail == e.head == v for e in g.finite_edges)


def test_spider_one_is_tadpole():
    assert save_graph(build_example("spider", 1)) == save_graph(build_example("tadpole", 1))


def test_no_infinite_edge_violation():
    g = load_graph("vertex a\nvertex b\nedge e1 from=a to=b length=1\n")
    assert "I_U_EMPTY" in validate_graph(g).codes
    assert any("I_U empty" in v.message for v in validate_graph(g))


def test_connecting_degree_two_violation():
    g = load_graph("vertex a\nvertex b\nedge e1 from=a to=b length=1\nhalfline h1 from=a\nhalfline h2 from=b\n")
    assert "CONNECTING_DEGREE" in validate_graph(g).codes


@pytest.mark.parametrize("family", FAMILIES)
def test_save_load_round_trip(family):
    for args in PARAMS[family]:
        g = build_example(family, *args)
        g2 = load_graph(save_graph(g))
        assert g2 == g
        assert save_graph(g2) == save_graph(g)
        assert g2.hash() == g.hash()


def test_exact_lengths_survive():
    g = load_graph(save_graph(build_example("double_tadpole", "3/5")))
    assert g.is_exact
    assert not build_example("double_tadpole", math.sqrt(2)).is_exact


def test_unknown_vertex_is_semantic_error():
    with pytest.raises(GraphSemanticError):
        load_graph("vertex a\nedge e1 from=a to=b length=1\nhalfline h from=a\n")


def test_negative_length_rejected():
    with pytest.raises((GraphParseError, GraphSemanticError, ParameterError)):
        load_graph("vertex a\nvertex b\nedge e1 from=a to=b length=-1\nhalfline h from=a\n")


def test_unknown_key_rejected():
    with pytest.raises(GraphParseError):
        load_graph("vertex a colour=red\nhalfline h from=a\n")


def test_comments_and_blank_lines():
    text = "# a star\n\nvertex c  # centre\nhalfline h1 from=c\nhalfline h2 from=c\nhalfline h3 from=c\n"
    g = load_graph(text)
    assert len(g.infinite_edges) == 3


def test_unknown_family():
    with pytest.raises(ParameterError):
        build_example("hexagon")


def _triangle_fn(funcs, h=0.01, x_cut=10):
    return GraphFunction.from_functions(build_example("triangle", 1), funcs, h=h, x_cut=x_cut)


def test_sin_norm():
    f = _triangle_fn({"e1": lambda x: np.sin(2 * np.pi * x)})
    assert abs(norm_L2(f) ** 2 - 0.5) < 1e-10


def test_disjoint_support_zero():
    f = _triangle_fn({"e1": lambda x: np.sin(np.pi * x)})
    g = _triangle_fn({"e2": lambda x: np.sin(np.pi * x)})
    assert inner_product(f, g) == 0


def test_unit_bump_inner_product():
    bump = lambda x: np.exp(-(x - 5) ** 2 / 0.5)
    f = _triangle_fn({"h1": bump})
    f = f * (1 / norm_L2(f))
    assert abs(inner_product(f, f) - 1) < 1e-12
    assert norm_Linf(f) > 0 and norm_L1(f) > 0


def test_tail_must_vanish():
    with pytest.raises(TruncationError):
        _triangle_fn({"h1": lambda x: np.exp(-x / 10)})


@given(st.floats(0.5, 8), st.floats(0.3, 2), st.floats(-5, 5), st.floats(0.5, 8), st.floats(0.3, 2))
def test_cauchy_schwarz(c1, w1, k, c2, w2):
    f = _triangle_fn({"h1": lambda x: np.exp(-(x - c1) ** 2 / w1 + 1j * k * x), "e1": lambda x: np.sin(np.pi * x)},
                     h=0.02, x_cut=20)
    g = _triangle_fn({"h1": lambda x: np.exp(-(x - c2) ** 2 / w2), "e2": lambda x: x * (1 - x)}, h=0.02, x_cut=20)
    ff = inner_product(f, f)
    assert abs(ff.imag) <= 1e-12 * abs(ff) and ff.real >= 0
    assert abs(inner_product(f, g)) <= norm_L2(f) * norm_L2(g) + 1e-9
