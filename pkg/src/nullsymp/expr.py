"""Symbolic expression trees with exact differentiation and compiled evaluation.

Nodes are hash-consed: structurally equal expressions are the same object,
so identity comparison is structural comparison and derivative trees share
subtrees.  Evaluation compiles a batch of expressions into one straight-line
Python function over the shared DAG.
"""

from __future__ import annotations

import functools
import math
import threading
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError

__all__ = [
    "Expr", "Const", "Coord", "Param", "Ref", "Unary", "Binary",
    "const", "add", "sub", "mul", "div", "neg", "power", "apply_func",
    "diff", "evaluate", "compile_exprs", "to_source", "free_symbols",
    "FUNCTIONS", "ZERO", "ONE",
]

FUNCTIONS = ("neg", "sin", "cos", "sqrt", "exp", "log")

_table: dict = {}
_table_lock = threading.Lock()


def _intern(cls, key, init):
    node = _table.get(key)
    if node is not None:
        return node
    with _table_lock:
        node = _table.get(key)
        if node is None:
            node = object.__new__(cls)
            init(node)
            _table[key] = node
    return node


class Expr:
    """Base class of all expression nodes.  Instances are immutable."""

    __slots__ = ("__weakref__",)

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __reduce__(self):
        raise TypeError("Expr nodes are interned and cannot be pickled")

    def children(self) -> tuple:
        return ()

    def __str__(self):
        return to_source(self)

    def __repr__(self):
        return f"<{type(self).__name__} {to_source(self)}>"

    # operator sugar, used by the catalog and tests
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __pow__(self, other):
        return power(self, _lift(other))

    def __neg__(self):
        return neg(self)


def _set(node, **fields):
    for name, value in fields.items():
        object.__setattr__(node, name, value)


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {value!r}")
        if value == 0.0:
            value = 0.0  # fold -0.0
        return _intern(cls, (cls, value), lambda n: _set(n, value=value))


class Coord(Expr):
    __slots__ = ("name",)

    def __new__(cls, name):
        return _intern(cls, (cls, name), lambda n: _set(n, name=name))


class Param(Expr):
    __slots__ = ("name",)

    def __new__(cls, name):
        return _intern(cls, (cls, name), lambda n: _set(n, name=name))


class Ref(Expr):
    """A named definition; evaluates and differentiates as its body."""

    __slots__ = ("name", "body")

    def __new__(cls, name, body):
        return _intern(cls, (cls, name, body), lambda n: _set(n, name=name, body=body))

    def children(self):
        return (self.body,)


class Unary(Expr):
    __slots__ = ("op", "arg")

    def __new__(cls, op, arg):
        if op not in FUNCTIONS:
            raise ValueError(f"unknown function {op!r}")
        return _intern(cls, (cls, op, arg), lambda n: _set(n, op=op, arg=arg))

    def children(self):
        return (self.arg,)


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __new__(cls, op, left, right):
        if op not in "+-*/^":
            raise ValueError(f"unknown operator {op!r}")
        return _intern(cls, (cls, op, left, right),
                       lambda n: _set(n, op=op, left=left, right=right))

    def children(self):
        return (self.left, self.right)


def const(value) -> Const:
    return Const(value)


ZERO = Const(0.0)
ONE = Const(1.0)


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(x)


def _is(e, value):
    return isinstance(e, Const) and e.value == value


# -- smart constructors: constant folding and identity elimination only ------


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Binary("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            value = _scalar_pow(a.value, b.value)
        except (ValueError, ZeroDivisionError, OverflowError):
            return Binary("^", a, b)
        if math.isfinite(value):
            return Const(value)
    return Binary("^", a, b)


_FOLD = {
    "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt,
    "exp": math.exp, "log": math.log,
}


def apply_func(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        try:
            value = _FOLD[op](a.value)
        except (ValueError, OverflowError):
            return Unary(op, a)
        return Const(value)
    return Unary(op, a)


def _integer_exponent(e: Expr):
    if isinstance(e, Const) and e.value.is_integer() and abs(e.value) < 2**31:
        return int(e.value)
    return None


def _scalar_pow(a, b):
    if float(b).is_integer():
        return float(a) ** int(b)
    return math.pow(a, b)


# -- differentiation ---------------------------------------------------------


@functools.lru_cache(maxsize=None)
def diff(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to the coordinate ``var``."""
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Coord):
        return ONE if e.name == var else ZERO
    if isinstance(e, Ref):
        return diff(e.body, var)
    if isinstance(e, Unary):
        u = e.arg
        du = diff(u, var)
        if _is(du, 0.0):
            return ZERO
        if e.op == "neg":
            return neg(du)
        if e.op == "sin":
            return mul(apply_func("cos", u), du)
        if e.op == "cos":
            return neg(mul(apply_func("sin", u), du))
        if e.op == "exp":
            return mul(e, du)
        if e.op == "log":
            return div(du, u)
        if e.op == "sqrt":
            return div(du, mul(Const(2.0), e))
        raise AssertionError(e.op)
    l, r = e.left, e.right
    if e.op == "+":
        return add(diff(l, var), diff(r, var))
    if e.op == "-":
        return sub(diff(l, var), diff(r, var))
    if e.op == "*":
        return add(mul(diff(l, var), r), mul(l, diff(r, var)))
    if e.op == "/":
        dl, dr = diff(l, var), diff(r, var)
        if _is(dr, 0.0):
            return div(dl, r)
        return div(sub(mul(dl, r), mul(l, dr)), power(r, Const(2.0)))
    # a^b
    n = _integer_exponent(r)
    if n is not None:
        dl = diff(l, var)
        if n == 2:
            return mul(mul(Const(2.0), l), dl)
        return mul(mul(Const(float(n)), power(l, Const(float(n - 1)))), dl)
    # general rule d(a^b) = a^b (b' log a + b a'/a); b' = 0 keeps it log-free
    dl, dr = diff(l, var), diff(r, var)
    term = div(mul(r, dl), l)
    if not _is(dr, 0.0):
        term = add(mul(dr, apply_func("log", l)), term)
    return mul(e, term)


# -- traversal ---------------------------------------------------------------


def _postorder(roots: Iterable[Expr]) -> list:
    """Unique nodes reachable from ``roots``, children before parents."""
    seen = set()
    order = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.children()):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def free_symbols(e: Expr) -> tuple[set, set]:
    """Return (coordinate names, parameter names) appearing in ``e``."""
    coords, params = set(), set()
    for node in _postorder([e]):
        if isinstance(node, Coord):
            coords.add(node.name)
        elif isinstance(node, Param):
            params.add(node.name)
    return coords, params


# -- compilation -------------------------------------------------------------

_SCALAR_ENV = {
    "_sin": math.sin, "_cos": math.cos, "_sqrt": math.sqrt,
    "_exp": math.exp, "_log": math.log, "_pow": math.pow,
}
_NUMPY_ENV = {
    "_sin": np.sin, "_cos": np.cos, "_sqrt": np.sqrt,
    "_exp": np.exp, "_log": np.log, "_pow": np.power,
}


class CompiledExprs:
    """A batch of expressions compiled into one straight-line function.

    Calling with scalar arguments returns a tuple of floats and raises
    :class:`EvaluationError` on domain errors.  :meth:`vectorized` evaluates
    on numpy arrays and follows IEEE semantics (nan/inf, no exception).
    """

    def __init__(self, exprs: Sequence[Expr], argnames: Sequence[str]):
        self.exprs = tuple(exprs)
        self.argnames = tuple(argnames)
        self.source = self._generate()
        self._scalar = self._build(_SCALAR_ENV)
        self._numpy = self._build(_NUMPY_ENV)

    def _generate(self) -> str:
        names = {}
        args = {name: f"a{i}" for i, name in enumerate(self.argnames)}
        lines = []
        for node in _postorder(self.exprs):
            key = id(node)
            if isinstance(node, Const):
                names[key] = repr(node.value)
                continue
            if isinstance(node, (Coord, Param)):
                if node.name not in args:
                    raise ValueError(f"unbound symbol {node.name!r}")
                names[key] = args[node.name]
                continue
            if isinstance(node, Ref):
                names[key] = names[id(node.body)]
                continue
            var = f"v{len(lines)}"
            if isinstance(node, Unary):
                a = names[id(node.arg)]
                code = f"-{a}" if node.op == "neg" else f"_{node.op}({a})"
            else:
                a, b = names[id(node.left)], names[id(node.right)]
                if node.op == "^":
                    n = _integer_exponent(node.right)
                    code = f"({a}) ** {n}" if n is not None else f"_pow({a}, {b})"
                else:
                    code = f"({a}) {node.op} ({b})"
            lines.append(f"    {var} = {code}")
            names[key] = var
        outs = ", ".join(names[id(e)] for e in self.exprs)
        header = "def _program(" + ", ".join(args.values()) + "):"
        return "\n".join([header, *lines, f"    return ({outs}{',' if self.exprs else ''})"])

    def _build(self, env):
        namespace = dict(env)
        exec(compile(self.source, "<nullsymp-expr>", "exec"), namespace)
        return namespace["_program"]

    def __len__(self):
        return len(self.exprs)

    def __call__(self, *args: float) -> tuple:
        try:
            out = self._scalar(*[float(a) for a in args])
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise EvaluationError(f"evaluation failed: {exc}") from None
        return out

    def vectorized(self, *args) -> np.ndarray:
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        shape = arrays[0].shape if arrays else ()
        with np.errstate(all="ignore"):
            out = self._numpy(*arrays)
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in out])


@functools.lru_cache(maxsize=4096)
def compile_exprs(exprs: tuple, argnames: tuple) -> CompiledExprs:
    return CompiledExprs(exprs, argnames)


def evaluate(e: Expr, point: Mapping[str, float], params: Mapping[str, float] | None = None) -> float:
    """Evaluate ``e`` with coordinate values ``point`` and parameter ``params``."""
    values = dict(params or {})
    values.update(point)
    coords, pars = free_symbols(e)
    missing = (coords | pars) - values.keys()
    if missing:
        raise EvaluationError(f"unbound symbols: {sorted(missing)}")
    names = tuple(sorted(coords | pars))
    (value,) = compile_exprs((e,), names)(*[values[n] for n in names])
    return value


# -- printing ----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        return 3 if e.value < 0 else _ATOM
    if isinstance(e, Unary):
        return 3 if e.op == "neg" else _ATOM
    if isinstance(e, Binary):
        return _PREC[e.op]
    return _ATOM


def to_source(e: Expr) -> str:
    """Render ``e`` in the DSL infix syntax; parsing the result rebuilds ``e``."""
    text = {}
    for node in _postorder([e]):
        text[id(node)] = _render(node, text)
    return text[id(e)]


def _render(node, text):
    if isinstance(node, Const):
        v = node.value
        return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)
    if isinstance(node, (Coord, Param, Ref)):
        return node.name
    if isinstance(node, Unary):
        inner = text[id(node.arg)]
        if node.op == "neg":
            return "-" + (inner if _prec(node.arg) > 3 else f"({inner})")
        return f"{node.op}({inner})"
    p = _PREC[node.op]
    lt, rt = text[id(node.left)], text[id(node.right)]
    lp, rp = _prec(node.left), _prec(node.right)
    if node.op == "^":
        if lp <= p:
            lt = f"({lt})"
        if rp < _ATOM:
            rt = f"({rt})"
        return f"{lt}^{rt}"
    if lp < p:
        lt = f"({lt})"
    if rp <= p:
        rt = f"({rt})"
    return f"{lt} {node.op} {rt}"
