"""Initial-profile mini-language.

    gaussian(edge, center, width)          exp(-(x-c)²/(2w²)) on one edge
    packet(edge, center, width, k)         gaussian times e^{ikx}
    bump(edge, center, width)              C^∞ bump supported in (c-w, c+w)
    eigenmode(m)                           m-th eigenfunction (1-based, ascending λ)

Terms combine with +, -, * by numbers (complex literals such as 2j allowed), e.g.
``0.5*gaussian(h1, 6, 1) - 1j*bump(e1, 0.5, 0.2)``.
"""
from __future__ import annotations

import ast

import numpy as np

from .errors import ParameterError
from .graph_model import GraphFunction, MetricGraph

_ARITY = {"gaussian": 3, "packet": 4, "bump": 3, "eigenmode": 1}


def _gaussian(c, w, k=0.0):
    return lambda x: np.exp(-(x - c) ** 2 / (2 * w * w) + 1j * k * x)


def _bump(c, w):
    def fn(x):
        s = (np.asarray(x, float) - c) / w
        out = np.zeros(s.shape)
        inside = np.abs(s) < 1
        out[inside] = np.exp(1 - 1 / (1 - s[inside] ** 2))
        return out
    return fn


class Profile:
    """Parsed profile: a list of (coefficient, kind, args)."""

    def __init__(self, text: str, terms):
        self.text = text
        self.terms = terms

    @property
    def needs_spectrum(self):
        return any(kind == "eigenmode" for _, kind, _ in self.terms)

    def edges(self):
        return sorted({args[0] for _, kind, args in self.terms if kind != "eigenmode"})

    def validate(self, g: MetricGraph, n_modes: int | None = None):
        for _, kind, args in self.terms:
            if kind == "eigenmode":
                m = args[0]
                if m < 1 or (n_modes is not None and m > n_modes):
                    raise ParameterError(f"profiles: eigenmode({m}) not available ({n_modes} modes)")
                continue
            eid = args[0]
            if eid not in g.edge_ids:
                raise ParameterError(f"profiles: unknown edge {eid!r} in {kind}")
            if args[2] <= 0:
                raise ParameterError(f"profiles: width must be positive in {kind}")

    def sample(self, g: MetricGraph, h: float, x_cut: float, spec=None) -> GraphFunction:
        self.validate(g, None if spec is None else len(spec.eigenfunctions))
        total = GraphFunction.zeros(g, h, x_cut)
        for coef, kind, args in self.terms:
            if kind == "eigenmode":
                if spec is None:
                    raise ParameterError("profiles: eigenmode(m) needs a spectral decomposition")
                part = spec.eigenfunctions[args[0] - 1].sample(h=h, x_cut=x_cut)
            else:
                eid, c, w = args[0], args[1], args[2]
                fn = _bump(c, w) if kind == "bump" else _gaussian(c, w, args[3] if kind == "packet" else 0.0)
                part = GraphFunction.from_functions(g, {eid: fn}, h=h, x_cut=x_cut)
            total = total + coef * part
        return total


def _number(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)) \
            and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
        a, b = _number(node.left), _number(node.right)
        if isinstance(node.op, ast.Div):
            if b == 0:
                raise ParameterError("profiles: division by zero")
            return a / b
        return {ast.Add: a + b, ast.Sub: a - b, ast.Mult: a * b}[type(node.op)]
    raise ParameterError(f"profiles: expected a number, got {ast.unparse(node)!r}")


def _is_number(node):
    try:
        _number(node)
        return True
    except ParameterError:
        return False


def _call(node):
    name = node.func.id if isinstance(node.func, ast.Name) else None
    if name not in _ARITY:
        raise ParameterError(f"profiles: unknown profile {ast.unparse(node.func)!r}; "
                             f"choose from {', '.join(_ARITY)}")
    if node.keywords or len(node.args) != _ARITY[name]:
        raise ParameterError(f"profiles: {name} takes {_ARITY[name]} positional arguments")
    if name == "eigenmode":
        m = _number(node.args[0])
        if not isinstance(m, int):
            raise ParameterError("profiles: eigenmode index must be an integer")
        return name, (m,)
    edge = node.args[0]
    if isinstance(edge, ast.Name):
        eid = edge.id
    elif isinstance(edge, ast.Constant) and isinstance(edge.value, str):
        eid = edge.value
    else:
        raise ParameterError(f"profiles: first argument of {name} must be an edge id")
    nums = tuple(float(_number(a).real) for a in node.args[1:])
    return name, (eid,) + nums


def _terms(node, coef=1.0):
    if isinstance(node, ast.Call):
        return [(coef,) + _call(node)]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _terms(node.operand, -coef if isinstance(node.op, ast.USub) else coef)
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, (ast.Add, ast.Sub)):
            sign = 1 if isinstance(node.op, ast.Add) else -1
            return _terms(node.left, coef) + _terms(node.right, sign * coef)
        if isinstance(node.op, ast.Mult):
            if _is_number(node.left):
                return _terms(node.right, coef * _number(node.left))
            if _is_number(node.right):
                return _terms(node.left, coef * _number(node.right))
        if isinstance(node.op, ast.Div) and _is_number(node.right):
            d = _number(node.right)
            if d == 0:
                raise ParameterError("profiles: division by zero")
            return _terms(node.left, coef / d)
    raise ParameterError(f"profiles: unsupported expression {ast.unparse(node)!r}")


def parse_profile(text: str) -> Profile:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ParameterError(f"profiles: syntax error at column {exc.offset}: {text!r}") from None
    return Profile(text, _terms(tree.body))
