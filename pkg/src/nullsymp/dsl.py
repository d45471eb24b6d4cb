"""Parser and printer for the line-oriented spacetime definition language.

Example source::

    spacetime minkowski
    dim 4
    chart cart
      coords t x y z
      g tt = -1
      g xx = 1
      g yy = 1
      g zz = 1

Beyond the core directives, a chart may declare ``event <name> = <expr>``
(terminal flow event when the expression crosses zero), ``sample <coord>
<lo> <hi>`` (random-point sampling box) and a spacetime may declare
``signature riemannian`` (default ``lorentzian``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

from . import expr as ex
from .errors import (
    ConstraintError, DimensionError, MetricConflictError, ParseError,
    UnknownIdentifierError,
)

__all__ = [
    "Constraint", "Chart", "Transition", "SpacetimeSpec",
    "parse_spacetime", "parse_expr", "format_spacetime",
]

BUILTIN_CONSTANTS = {"pi": math.pi}


@dataclass(frozen=True, eq=False)
class Constraint:
    """Strict inequality ``lhs op rhs`` with ``op`` in ``<``, ``>``."""

    lhs: ex.Expr
    op: str
    rhs: ex.Expr

    @property
    def margin_expr(self) -> ex.Expr:
        """Expression that is positive exactly where the constraint holds."""
        if self.op == ">":
            return ex.sub(self.lhs, self.rhs)
        return ex.sub(self.rhs, self.lhs)

    def __str__(self):
        return f"{ex.to_source(self.lhs)} {self.op} {ex.to_source(self.rhs)}"


@dataclass(frozen=True, eq=False)
class Chart:
    name: str
    coords: tuple
    metric: Mapping  # (i, j) -> Expr, both orders stored for off-diagonals
    domain: tuple = ()
    vectors: Mapping = field(default_factory=dict)
    scalars: Mapping = field(default_factory=dict)
    defs: Mapping = field(default_factory=dict)
    events: Mapping = field(default_factory=dict)
    sample_box: Mapping = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def g(self, i: int, j: int) -> ex.Expr:
        return self.metric.get((i, j), ex.ZERO)

    def index(self, coord: str) -> int:
        return self.coords.index(coord)


@dataclass(frozen=True, eq=False)
class Transition:
    source: str
    target: str
    maps: tuple  # one Expr per target coordinate, in target order
    overlap: tuple = ()


@dataclass(frozen=True, eq=False)
class SpacetimeSpec:
    name: str
    dim: int
    params: Mapping
    param_constraints: tuple
    charts: tuple
    transitions: tuple = ()
    signature: str = "lorentzian"

    @property
    def param_names(self) -> tuple:
        return tuple(self.params)

    @property
    def param_values(self) -> tuple:
        return tuple(self.params.values())

    def chart(self, name) -> Chart:
        if isinstance(name, Chart):
            return name
        if name is None:
            return self.charts[0]
        for chart in self.charts:
            if chart.name == name:
                return chart
        raise KeyError(f"no chart named {name!r} in {self.name!r}")

    def transitions_from(self, name: str) -> list:
        return [t for t in self.transitions if t.source == name]

    def transition(self, source: str, target: str):
        for t in self.transitions:
            if t.source == source and t.target == target:
                return t
        return None


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[^\W\d]\w*)
  | (?P<op>->|[-+*/^(),<>=])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int = 1) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        if m.lastgroup != "ws":
            tokens.append(_Tok(m.lastgroup, m.group(), col0 + pos))
        pos = m.end()
    return tokens


class _ExprParser:
    """Recursive descent: ``+ -`` < ``* /`` < unary ``-`` < ``^``."""

    def __init__(self, tokens, line, resolve: Callable):
        self.tokens = tokens
        self.pos = 0
        self.line = line
        self.resolve = resolve

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, text=None):
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of expression", self.line)
        if text is not None and tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", self.line, tok.col)
        self.pos += 1
        return tok

    def at(self, *texts):
        tok = self.peek()
        return tok is not None and tok.kind == "op" and tok.text in texts

    def expression(self):
        node = self.term()
        while self.at("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = ex.add(node, rhs) if op == "+" else ex.sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.at("*", "/"):
            op = self.take().text
            rhs = self.unary()
            node = ex.mul(node, rhs) if op == "*" else ex.div(node, rhs)
        return node

    def unary(self):
        if self.at("-"):
            self.take()
            return ex.neg(self.unary())
        if self.at("+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.at("^"):
            self.take()
            return ex.power(base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return ex.Const(float(tok.text))
        if tok.kind == "ident":
            if self.at("("):
                if tok.text not in ex.FUNCTIONS or tok.text == "neg":
                    raise UnknownIdentifierError(tok.text, self.line, tok.col)
                self.take("(")
                arg = self.expression()
                self.take(")")
                return ex.apply_func(tok.text, arg)
            node = self.resolve(tok.text)
            if node is None:
                raise UnknownIdentifierError(tok.text, self.line, tok.col)
            return node
        if tok.text == "(":
            node = self.expression()
            self.take(")")
            return node
        raise ParseError(f"unexpected token {tok.text!r}", self.line, tok.col)


def _parse_tokens(tokens, line, resolve):
    if not tokens:
        raise ParseError("empty expression", line)
    p = _ExprParser(tokens, line, resolve)
    node = p.expression()
    if p.peek() is not None:
        tok = p.peek()
        raise ParseError(f"unexpected token {tok.text!r}", line, tok.col)
    return node


def parse_expr(text: str, coords=(), params=(), defs: Mapping | None = None) -> ex.Expr:
    """Parse a standalone expression with the given names in scope."""
    defs = defs or {}
    coords, params = set(coords), set(params)

    def resolve(name):
        if name in defs:
            return defs[name]
        if name in coords:
            return ex.Coord(name)
        if name in params:
            return ex.Param(name)
        if name in BUILTIN_CONSTANTS:
            return ex.Const(BUILTIN_CONSTANTS[name])
        return None

    return _parse_tokens(_tokenize(text, 1), 1, resolve)


def _split_constraint(tokens, line):
    idx = [i for i, t in enumerate(tokens) if t.kind == "op" and t.text in "<>"]
    if len(idx) != 1:
        col = tokens[0].col if tokens else None
        raise ParseError("constraint needs exactly one of '<' or '>'", line, col)
    i = idx[0]
    return tokens[:i], tokens[i].text, tokens[i + 1:]


def _split_commas(tokens, line):
    parts, depth, current = [], 0, []
    for tok in tokens:
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        if tok.text == "," and depth == 0:
            parts.append(current)
            current = []
        else:
            current.append(tok)
    parts.append(current)
    return parts


# -- source parser -----------------------------------------------------------


class _ChartBuilder:
    def __init__(self, name, line):
        self.name = name
        self.line = line
        self.coords = None
        self.metric = {}
        self.metric_lines = {}
        self.domain = []
        self.vectors = {}
        self.scalars = {}
        self.defs = {}
        self.events = {}
        self.sample_box = {}


class _SourceParser:
    def __init__(self, text):
        self.text = text
        self.name = None
        self.dim = None
        self.signature = "lorentzian"
        self.params = {}
        self.param_constraints = []
        self.charts = []
        self.transitions = []
        self.block = None  # current _ChartBuilder or transition dict

    def resolver(self, chart=None, line=None, params_only=False):
        def resolve(name):
            if chart is not None and not params_only:
                if name in chart.defs:
                    return chart.defs[name]
                if chart.coords and name in chart.coords:
                    return ex.Coord(name)
            if name in self.params:
                return ex.Param(name)
            if name in BUILTIN_CONSTANTS:
                return ex.Const(BUILTIN_CONSTANTS[name])
            return None
        return resolve

    def parse(self):
        for lineno, raw in enumerate(self.text.splitlines(), start=1):
            body = raw.split("#", 1)[0]
            stripped = body.strip()
            if not stripped:
                continue
            col0 = len(body) - len(body.lstrip()) + 1
            keyword, _, rest = stripped.partition(" ")
            rest_col = col0 + len(keyword) + 1
            handler = getattr(self, "do_" + keyword, None)
            if handler is None:
                raise ParseError(f"unknown directive {keyword!r}", lineno, col0)
            handler(rest.strip(), lineno, rest_col + (len(rest) - len(rest.lstrip())))
        return self.finish()

    # top-level directives
    def do_spacetime(self, rest, line, col):
        if not rest or len(rest.split()) != 1:
            raise ParseError("expected 'spacetime <name>'", line, col)
        self.name = rest

    def do_dim(self, rest, line, col):
        if rest not in ("3", "4"):
            raise DimensionError(f"dim must be 3 or 4, got {rest!r}", line, col)
        self.dim = int(rest)

    def do_signature(self, rest, line, col):
        if rest not in ("lorentzian", "riemannian"):
            raise ParseError(f"unknown signature {rest!r}", line, col)
        self.signature = rest

    def do_param(self, rest, line, col):
        tokens = _tokenize(rest, line, col)
        if len(tokens) < 3 or tokens[0].kind != "ident" or tokens[1].text != "=":
            raise ParseError("expected 'param <name> = <number>'", line, col)
        name = tokens[0].text
        if name in self.params:
            raise ParseError(f"duplicate parameter {name!r}", line, tokens[0].col)
        req = [i for i, t in enumerate(tokens) if t.kind == "ident" and t.text == "require"]
        value_toks = tokens[2:req[0]] if req else tokens[2:]
        const_resolver = lambda n: (ex.Const(self.params[n]) if n in self.params
                                    else ex.Const(BUILTIN_CONSTANTS[n]) if n in BUILTIN_CONSTANTS
                                    else None)
        value = _parse_tokens(value_toks, line, const_resolver)
        if not isinstance(value, ex.Const):
            raise ParseError(f"parameter {name!r} must be a constant", line, value_toks[0].col)
        self.params[name] = value.value
        if req:
            lhs, op, rhs = _split_constraint(tokens[req[0] + 1:], line)
            resolve = self.resolver(params_only=True)
            self.param_constraints.append(
                Constraint(_parse_tokens(lhs, line, resolve), op, _parse_tokens(rhs, line, resolve)))

    def do_chart(self, rest, line, col):
        if not rest or len(rest.split()) != 1:
            raise ParseError("expected 'chart <name>'", line, col)
        if any(c.name == rest for c in self.charts):
            raise ParseError(f"duplicate chart {rest!r}", line, col)
        self.block = _ChartBuilder(rest, line)
        self.charts.append(self.block)

    def do_transition(self, rest, line, col):
        tokens = _tokenize(rest, line, col)
        if len(tokens) != 3 or tokens[1].text != "->":
            raise ParseError("expected 'transition <chartA> -> <chartB>'", line, col)
        names = {c.name: c for c in self.charts}
        for tok in (tokens[0], tokens[2]):
            if tok.text not in names:
                raise UnknownIdentifierError(tok.text, line, tok.col)
        self.block = {"source": names[tokens[0].text], "target": names[tokens[2].text],
                      "maps": {}, "overlap": [], "line": line}
        self.transitions.append(self.block)

    # chart directives
    def chart(self, line, col, what):
        if not isinstance(self.block, _ChartBuilder):
            raise ParseError(f"'{what}' outside a chart block", line, col)
        if what != "coords" and self.block.coords is None:
            raise ParseError(f"'{what}' before 'coords'", line, col)
        return self.block

    def do_coords(self, rest, line, col):
        chart = self.chart(line, col, "coords")
        names = rest.split()
        if self.dim is not None and len(names) != self.dim:
            raise DimensionError(
                f"chart {chart.name!r} has {len(names)} coordinates, dim is {self.dim}", line, col)
        if len(set(names)) != len(names):
            raise ParseError("repeated coordinate name", line, col)
        for n in names:
            if not n.isidentifier():
                raise ParseError(f"bad coordinate name {n!r}", line, col)
        chart.coords = tuple(names)

    def named_expr(self, rest, line, col, chart):
        tokens = _tokenize(rest, line, col)
        if len(tokens) < 3 or tokens[0].kind != "ident" or tokens[1].text != "=":
            raise ParseError("expected '<name> = <expr>'", line, col)
        return tokens[0], _parse_tokens(tokens[2:], line, self.resolver(chart))

    def do_def(self, rest, line, col):
        chart = self.chart(line, col, "def")
        tok, body = self.named_expr(rest, line, col, chart)
        if tok.text in chart.defs or tok.text in chart.coords:
            raise ParseError(f"name {tok.text!r} already bound", line, tok.col)
        chart.defs[tok.text] = ex.Ref(tok.text, body)

    def do_scalar(self, rest, line, col):
        chart = self.chart(line, col, "scalar")
        tok, body = self.named_expr(rest, line, col, chart)
        chart.scalars[tok.text] = body

    def do_event(self, rest, line, col):
        chart = self.chart(line, col, "event")
        tok, body = self.named_expr(rest, line, col, chart)
        chart.events[tok.text] = body

    def do_g(self, rest, line, col):
        chart = self.chart(line, col, "g")
        tokens = _tokenize(rest, line, col)
        eq = [i for i, t in enumerate(tokens) if t.text == "="]
        if not eq:
            raise ParseError("expected 'g <ci><cj> = <expr>'", line, col)
        head = tokens[:eq[0]]
        pair = self._metric_indices(chart, head, line, col)
        value = _parse_tokens(tokens[eq[0] + 1:], line, self.resolver(chart))
        i, j = sorted(pair)
        if (i, j) in chart.metric and chart.metric[(i, j)] is not value:
            raise MetricConflictError(
                f"conflicting entries for g_{chart.coords[i]}{chart.coords[j]} "
                f"(first given on line {chart.metric_lines[(i, j)]})", line, col)
        chart.metric[(i, j)] = value
        chart.metric_lines[(i, j)] = line

    def _metric_indices(self, chart, head, line, col):
        coords = chart.coords
        if len(head) == 2 and all(t.text in coords for t in head):
            return coords.index(head[0].text), coords.index(head[1].text)
        if len(head) == 1:
            word = head[0].text
            splits = [(word[:k], word[k:]) for k in range(1, len(word))
                      if word[:k] in coords and word[k:] in coords]
            if len(splits) == 1:
                a, b = splits[0]
                return coords.index(a), coords.index(b)
            if len(splits) > 1:
                raise ParseError(f"ambiguous metric index {word!r}", line, head[0].col)
            raise UnknownIdentifierError(word, line, head[0].col)
        raise ParseError("metric entry needs two coordinate names", line, col)

    def do_vector(self, rest, line, col):
        chart = self.chart(line, col, "vector")
        tokens = _tokenize(rest, line, col)
        if (len(tokens) < 5 or tokens[0].kind != "ident" or tokens[1].text != "="
                or tokens[2].text != "(" or tokens[-1].text != ")"):
            raise ParseError("expected 'vector <name> = ( <expr> , ... )'", line, col)
        parts = _split_commas(tokens[3:-1], line)
        if len(parts) != len(chart.coords):
            raise DimensionError(
                f"vector {tokens[0].text!r} has {len(parts)} components, "
                f"chart has {len(chart.coords)} coordinates", line, tokens[0].col)
        resolve = self.resolver(chart)
        chart.vectors[tokens[0].text] = tuple(_parse_tokens(p, line, resolve) for p in parts)

    def do_domain(self, rest, line, col):
        chart = self.chart(line, col, "domain")
        lhs, op, rhs = _split_constraint(_tokenize(rest, line, col), line)
        resolve = self.resolver(chart)
        chart.domain.append(Constraint(_parse_tokens(lhs, line, resolve), op,
                                       _parse_tokens(rhs, line, resolve)))

    def do_sample(self, rest, line, col):
        chart = self.chart(line, col, "sample")
        parts = rest.split()
        if len(parts) != 3 or parts[0] not in chart.coords:
            raise ParseError("expected 'sample <coord> <lo> <hi>'", line, col)
        const = self.resolver()
        lo = _parse_tokens(_tokenize(parts[1], line, col), line, const)
        hi = _parse_tokens(_tokenize(parts[2], line, col), line, const)
        if not (isinstance(lo, ex.Const) and isinstance(hi, ex.Const)) or not lo.value < hi.value:
            raise ParseError("sample bounds must be constants with lo < hi", line, col)
        chart.sample_box[parts[0]] = (lo.value, hi.value)

    # transition directives
    def trans(self, line, col, what):
        if not isinstance(self.block, dict):
            raise ParseError(f"'{what}' outside a transition block", line, col)
        return self.block

    def do_map(self, rest, line, col):
        block = self.trans(line, col, "map")
        tokens = _tokenize(rest, line, col)
        if len(tokens) < 3 or tokens[1].text != "=":
            raise ParseError("expected 'map <coord> = <expr>'", line, col)
        target = block["target"]
        if tokens[0].text not in target.coords:
            raise UnknownIdentifierError(tokens[0].text, line, tokens[0].col)
        block["maps"][tokens[0].text] = _parse_tokens(
            tokens[2:], line, self.resolver(block["source"]))

    def do_overlap(self, rest, line, col):
        block = self.trans(line, col, "overlap")
        lhs, op, rhs = _split_constraint(_tokenize(rest, line, col), line)
        resolve = self.resolver(block["source"])
        block["overlap"].append(Constraint(_parse_tokens(lhs, line, resolve), op,
                                           _parse_tokens(rhs, line, resolve)))

    def finish(self) -> SpacetimeSpec:
        if self.name is None:
            raise ParseError("missing 'spacetime <name>'")
        if self.dim is None:
            raise DimensionError("missing 'dim' directive")
        if not self.charts:
            raise ParseError("no charts declared")
        values = dict(self.params)
        for c in self.param_constraints:
            margin = ex.evaluate(c.margin_expr, {}, values)
            if not margin > 0:
                raise ConstraintError(f"parameter constraint violated: {c} "
                                      f"(bound values {values})")
        charts = []
        for b in self.charts:
            if b.coords is None:
                raise ParseError(f"chart {b.name!r} has no coords", b.line)
            if len(b.coords) != self.dim:
                raise DimensionError(f"chart {b.name!r} dimension mismatch", b.line)
            metric = {}
            for (i, j), e in b.metric.items():
                metric[(i, j)] = e
                metric[(j, i)] = e
            charts.append(Chart(
                name=b.name, coords=b.coords, metric=MappingProxyType(metric),
                domain=tuple(b.domain), vectors=MappingProxyType(dict(b.vectors)),
                scalars=MappingProxyType(dict(b.scalars)), defs=MappingProxyType(dict(b.defs)),
                events=MappingProxyType(dict(b.events)),
                sample_box=MappingProxyType(dict(b.sample_box))))
        transitions = []
        for block in self.transitions:
            target = block["target"]
            missing = [c for c in target.coords if c not in block["maps"]]
            if missing:
                raise ParseError(f"transition {block['source'].name} -> {target.name} "
                                 f"lacks maps for {missing}", block["line"])
            transitions.append(Transition(
                source=block["source"].name, target=target.name,
                maps=tuple(block["maps"][c] for c in target.coords),
                overlap=tuple(block["overlap"])))
        return SpacetimeSpec(
            name=self.name, dim=self.dim, params=MappingProxyType(dict(self.params)),
            param_constraints=tuple(self.param_constraints), charts=tuple(charts),
            transitions=tuple(transitions), signature=self.signature)


def parse_spacetime(text: str) -> SpacetimeSpec:
    """Parse DSL source into a fully resolved :class:`SpacetimeSpec`."""
    return _SourceParser(text).parse()


def format_spacetime(spec: SpacetimeSpec) -> str:
    """Print ``spec`` as DSL source; ``parse_spacetime`` of the result is equivalent."""
    src = ex.to_source
    out = [f"spacetime {spec.name}", f"dim {spec.dim}"]
    if spec.signature != "lorentzian":
        out.append(f"signature {spec.signature}")
    # each constraint is emitted after the last parameter it mentions
    pending = list(spec.param_constraints)
    seen = set()
    for name, value in spec.params.items():
        seen.add(name)
        line = f"param {name} = {value!r}"
        for c in list(pending):
            names = ex.free_symbols(c.lhs)[1] | ex.free_symbols(c.rhs)[1]
            if names <= seen:
                line += f" require {c}"
                pending.remove(c)
                break
        out.append(line)
    for chart in spec.charts:
        out.append(f"chart {chart.name}")
        out.append("  coords " + " ".join(chart.coords))
        for name, ref in chart.defs.items():
            out.append(f"  def {name} = {src(ref.body)}")
        n = chart.dim
        for i in range(n):
            for j in range(i, n):
                if (i, j) in chart.metric:
                    out.append(f"  g {chart.coords[i]} {chart.coords[j]} = {src(chart.metric[(i, j)])}")
        for name, comps in chart.vectors.items():
            out.append(f"  vector {name} = ( " + " , ".join(src(c) for c in comps) + " )")
        for name, e in chart.scalars.items():
            out.append(f"  scalar {name} = {src(e)}")
        for c in chart.domain:
            out.append(f"  domain {c}")
        for name, e in chart.events.items():
            out.append(f"  event {name} = {src(e)}")
        for coord, (lo, hi) in chart.sample_box.items():
            out.append(f"  sample {coord} {lo!r} {hi!r}")
    target_coords = {c.name: c.coords for c in spec.charts}
    for t in spec.transitions:
        out.append(f"transition {t.source} -> {t.target}")
        for coord, e in zip(target_coords[t.target], t.maps):
            out.append(f"  map {coord} = {src(e)}")
        for c in t.overlap:
            out.append(f"  overlap {c}")
    if pending:
        raise ValueError("unprintable parameter constraints")
    return "\n".join(out) + "\n"
