"""Payoff expressions over the terminal price and discrete fixings.

Grammar (precedence high to low: ``^``, unary minus, ``* /``, ``+ -``)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | 'S' | 'S' '[' INT ']' | 'AVG' | 'MAXF' | 'MINF'
             | FUNC '(' expr ')'            FUNC in abs, exp, log
             | ('max' | 'min') '(' expr (',' expr)+ ')'
             | '(' expr ')'

``S[i]`` is the i-th fixing (1-based). Aggregates run over all fixings of the
monitoring schedule, the terminal date included.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, PayoffEvaluationError, PayoffSyntaxError

AGGREGATES = ("AVG", "MAXF", "MINF")
UNARY_FUNCS = ("abs", "exp", "log")
NARY_FUNCS = ("max", "min")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Spot:
    pass


@dataclass(frozen=True)
class Fixing:
    index: int


@dataclass(frozen=True)
class Aggregate:
    kind: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg, abs, exp, log
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class NAry:
    op: str  # max, min
    args: Tuple["Node", ...]


Node = Union[Num, Spot, Fixing, Aggregate, Unary, Binary, NAry]


def to_text(node: Node) -> str:
    """Canonical form: fully parenthesized, lowercase function names."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Spot):
        return "S"
    if isinstance(node, Fixing):
        return f"S[{node.index}]"
    if isinstance(node, Aggregate):
        return node.kind
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    if isinstance(node, Binary):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, NAry):
        return f"{node.op}(" + ", ".join(to_text(a) for a in node.args) + ")"
    raise TypeError(f"not a payoff node: {node!r}")


def walk(node: Node):
    yield node
    if isinstance(node, Unary):
        yield from walk(node.arg)
    elif isinstance(node, Binary):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, NAry):
        for a in node.args:
            yield from walk(a)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),\[\]]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise PayoffSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise PayoffSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise PayoffSyntaxError(f"unexpected token {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val == "S":
                if self.peek()[:2] == ("op", "["):
                    self.take()
                    k, v, p = self.take()
                    if k != "num" or not re.fullmatch(r"\d+", v):
                        raise PayoffSyntaxError("fixing index must be a positive integer", p)
                    if int(v) < 1:
                        raise PayoffSyntaxError("fixing index must be >= 1", p)
                    self.expect("]")
                    return Fixing(int(v))
                return Spot()
            upper, lower = val.upper(), val.lower()
            if upper in AGGREGATES:
                return Aggregate(upper)
            if lower in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(lower, arg)
            if lower in NARY_FUNCS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) < 2:
                    raise PayoffSyntaxError(f"{lower} needs at least two arguments", pos)
                return NAry(lower, tuple(args))
            raise PayoffSyntaxError(f"unknown identifier {val!r}", pos)
        if kind == "end":
            raise PayoffSyntaxError("unexpected end of input", pos)
        raise PayoffSyntaxError(f"unexpected token {val!r}", pos)


@dataclass(frozen=True)
class Payoff:
    ast: Node
    n_fixings: int
    source_text: str

    @property
    def aggregates(self) -> frozenset:
        return frozenset(n.kind for n in walk(self.ast) if isinstance(n, Aggregate))

    @property
    def fixing_indices(self) -> frozenset:
        return frozenset(n.index for n in walk(self.ast) if isinstance(n, Fixing))

    @property
    def is_state_dependent(self) -> bool:
        return not self.aggregates and not self.fixing_indices

    def __str__(self):
        return to_text(self.ast)

    def __add__(self, other: "Payoff") -> "Payoff":
        ast = Binary("+", self.ast, other.ast)
        return Payoff(ast, max(self.n_fixings, other.n_fixings), to_text(ast))

    def evaluate(self, terminal, fixings=None, aggregates: Optional[Dict[str, object]] = None):
        """Vectorized evaluation.

        ``fixings`` has the fixing axis last. ``aggregates`` may supply AVG /
        MAXF / MINF values directly (used by the augmented-state solver).
        """
        terminal = np.asarray(terminal, dtype=float)
        fix = None if fixings is None else np.asarray(fixings, dtype=float)
        if self.n_fixings and (fix is None or fix.shape[-1] < self.n_fixings):
            raise ValueError(f"payoff needs at least {self.n_fixings} fixings")
        aggs = dict(aggregates or {})
        for kind in self.aggregates - set(aggs):
            if fix is None or fix.shape[-1] == 0:
                raise ValueError(f"{kind} needs a non-empty fixing vector")
            aggs[kind] = {"AVG": np.mean, "MAXF": np.max, "MINF": np.min}[kind](fix, axis=-1)
        with np.errstate(all="ignore"):
            out = _eval(self.ast, terminal, fix, aggs)
        out = np.asarray(out, dtype=float)
        return float(out) if out.ndim == 0 else out


def _eval(node, S, fix, aggs):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Spot):
        return S
    if isinstance(node, Fixing):
        return fix[..., node.index - 1]
    if isinstance(node, Aggregate):
        return aggs[node.kind]
    if isinstance(node, Unary):
        x = _eval(node.arg, S, fix, aggs)
        if node.op == "neg":
            return -x
        if node.op == "abs":
            return np.abs(x)
        if node.op == "exp":
            return np.exp(x)
        if np.any(np.asarray(x) <= 0):
            raise PayoffEvaluationError("log of non-positive value", to_text(node))
        return np.log(x)
    if isinstance(node, Binary):
        a = _eval(node.left, S, fix, aggs)
        b = _eval(node.right, S, fix, aggs)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(np.asarray(b) == 0):
                raise PayoffEvaluationError("division by zero", to_text(node))
            return a / b
        out = np.power(a, b)
        if not np.all(np.isfinite(out)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b)):
            raise PayoffEvaluationError("undefined power", to_text(node))
        return out
    if isinstance(node, NAry):
        vals = [_eval(a, S, fix, aggs) for a in node.args]
        fn = np.maximum if node.op == "max" else np.minimum
        out = vals[0]
        for v in vals[1:]:
            out = fn(out, v)
        return out
    raise TypeError(f"not a payoff node: {node!r}")


def parse_payoff(text: str) -> Payoff:
    if not text or not text.strip():
        raise PayoffSyntaxError("empty payoff", 0)
    ast = _Parser(text).parse()
    n = max((node.index for node in walk(ast) if isinstance(node, Fixing)), default=0)
    return Payoff(ast, n, text)


def eval_payoff(p: Payoff, terminal, fixings: Sequence[float] = ()):
    fixings = np.asarray(fixings, dtype=float)
    return p.evaluate(terminal, fixings if fixings.size else None)


@dataclass(frozen=True)
class MonitoringSchedule:
    dates: Tuple[float, ...]

    def __post_init__(self):
        d = tuple(float(x) for x in self.dates)
        if not d:
            raise DomainError("monitoring schedule is empty")
        if d[0] <= 0 or any(b <= a for a, b in zip(d, d[1:])):
            raise DomainError("monitoring dates must be strictly increasing in (0, T]")
        object.__setattr__(self, "dates", d)

    @classmethod
    def uniform(cls, maturity: float, n: int) -> "MonitoringSchedule":
        return cls(tuple(maturity * k / n for k in range(1, n + 1)))

    @property
    def maturity(self) -> float:
        return self.dates[-1]

    def __len__(self):
        return len(self.dates)


__all__ = [
    "Payoff",
    "MonitoringSchedule",
    "parse_payoff",
    "eval_payoff",
    "to_text",
    "Num",
    "Spot",
    "Fixing",
    "Aggregate",
    "Unary",
    "Binary",
    "NAry",
]
