"""Scalar expression language for coefficients.

Grammar (EBNF; whitespace is insignificant)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = atom [ "^" unary ] ;            (* right-associative *)
    atom    = number | name | name "(" expr { "," expr } ")" | "(" expr ")" ;
    number  = digits [ "." digits ] [ exponent ] | "." digits [ exponent ] ;
    exponent= ("e" | "E") [ "+" | "-" ] digits ;
    name    = letter { letter | digit | "_" } ;

Precedence from tightest: ``^``, unary minus, ``* /``, ``+ -``.  So ``-x^2``
is ``-(x^2)`` and ``2^3^2`` is ``2^(3^2)``.

Functions: ``sin cos exp log abs sqrt tanh`` (one argument) and ``min max``
(two or more).  Evaluation is vectorized over numpy arrays; any non-finite
intermediate value raises :class:`EvalError`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

from .errors import EvalError, ExprSyntaxError, UnboundVariable, UnknownIdentifier


# AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

UNARY_FUNCS: dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log,
    "abs": np.abs, "sqrt": np.sqrt, "tanh": np.tanh,
}
NARY_FUNCS: dict[str, Callable] = {"min": np.minimum, "max": np.maximum}
FUNCTIONS = set(UNARY_FUNCS) | set(NARY_FUNCS)

_DEFAULT_VAR = re.compile(r"^(t|e|y|x\d*|z\d*|j\d*)$")


# tokenizer ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> list[_Tok]:
    toks, pos = [], 0
    while True:
        m = _TOKEN.match(src, pos)
        if m is None:
            rest = src[pos:]
            if rest.strip() == "":
                break
            offset = len(src[:pos].encode()) + (len(rest.encode()) - len(rest.lstrip().encode()))
            raise ExprSyntaxError(f"unexpected character {rest.lstrip()[0]!r}", offset, src)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), len(src[:m.start(kind)].encode())))
        pos = m.end()
    toks.append(_Tok("end", "", len(src.encode())))
    return toks


# Pratt parser -------------------------------------------------------------

_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30


class _Parser:
    def __init__(self, src: str, is_var: Callable[[str], bool]):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.is_var = is_var

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.next()
        if tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}", tok.offset, self.src)

    def parse(self) -> Node:
        node = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset, self.src)
        return node

    def expression(self, rbp: int) -> Node:
        left = self.nud(self.next())
        while True:
            tok = self.peek()
            lbp = _LBP.get(tok.text, 0) if tok.kind == "op" else 0
            if lbp <= rbp:
                return left
            self.next()
            if tok.text == "^":
                left = BinOp("^", left, self.expression(lbp - 1))
            else:
                left = BinOp(tok.text, left, self.expression(lbp))

    def nud(self, tok: _Tok) -> Node:
        if tok.kind == "num":
            value = float(tok.text)
            if not np.isfinite(value):
                raise ExprSyntaxError("numeric literal overflows", tok.offset, self.src)
            return Num(value)
        if tok.kind == "name":
            if self.peek().text == "(":
                return self.call(tok)
            if tok.text in FUNCTIONS or not self.is_var(tok.text):
                raise UnknownIdentifier(tok.text, tok.offset)
            return Var(tok.text)
        if tok.text == "-":
            return Neg(self.expression(_UNARY_BP))
        if tok.text == "+":
            return self.expression(_UNARY_BP)
        if tok.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.offset, self.src)

    def call(self, name: _Tok) -> Node:
        if name.text not in FUNCTIONS:
            raise UnknownIdentifier(name.text, name.offset)
        self.expect("(")
        args = [self.expression(0)]
        while self.peek().text == ",":
            self.next()
            args.append(self.expression(0))
        self.expect(")")
        if name.text in UNARY_FUNCS and len(args) != 1:
            raise ExprSyntaxError(f"{name.text} takes one argument", name.offset, self.src)
        if name.text in NARY_FUNCS and len(args) < 2:
            raise ExprSyntaxError(f"{name.text} takes at least two arguments", name.offset, self.src)
        return Call(name.text, tuple(args))


# public expression type -----------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """Parsed expression: source text plus immutable AST."""

    source: str
    root: Node

    def __call__(self, **bindings) -> np.ndarray | float:
        return evaluate(self, bindings)

    @property
    def free_vars(self) -> frozenset[str]:
        return frozenset(_free(self.root))

    def depends_on(self, *names: str) -> bool:
        fv = self.free_vars
        return any(n in fv for n in names)

    def rename(self, mapping: Mapping[str, str]) -> "Expr":
        """Simultaneous variable renaming."""
        root = _rename(self.root, mapping)
        return Expr(to_text(root), root)

    def __str__(self) -> str:
        return to_text(self.root)


def parse(source: str, variables: Iterable[str] | None = None) -> Expr:
    """Parse ``source``; identifiers must be in ``variables`` (default signature if omitted)."""
    if variables is None:
        is_var = lambda name: bool(_DEFAULT_VAR.match(name))
    else:
        allowed = frozenset(variables)
        is_var = allowed.__contains__
    return Expr(source, _Parser(source, is_var).parse())


def constant(value: float) -> Expr:
    return Expr(repr(float(value)), Num(float(value)))


def _free(node: Node):
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, Neg):
        yield from _free(node.operand)
    elif isinstance(node, BinOp):
        yield from _free(node.left)
        yield from _free(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _free(a)


def _rename(node: Node, mapping: Mapping[str, str]) -> Node:
    if isinstance(node, Var):
        return Var(mapping.get(node.name, node.name))
    if isinstance(node, Neg):
        return Neg(_rename(node.operand, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, _rename(node.left, mapping), _rename(node.right, mapping))
    if isinstance(node, Call):
        return Call(node.func, tuple(_rename(a, mapping) for a in node.args))
    return node


# printer ------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return 5


def to_text(node: Node) -> str:
    """Print with the fewest parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        return f"-({inner})" if _prec(node.operand) < _NEG_PREC else f"-{inner}"
    p = _PREC[node.op]
    left, right = to_text(node.left), to_text(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    return f"{left} {node.op} {right}"


# evaluation ---------------------------------------------------------------

def _checked(value, what: str):
    if not np.all(np.isfinite(value)):
        raise EvalError(f"non-finite result in {what}")
    return value


def _eval(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnboundVariable(node.name) from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a, b = _eval(node.left, env), _eval(node.right, env)
        with np.errstate(all="ignore"):
            if node.op == "+":
                out = np.add(a, b)
            elif node.op == "-":
                out = np.subtract(a, b)
            elif node.op == "*":
                out = np.multiply(a, b)
            elif node.op == "/":
                out = np.divide(a, b)
            else:
                out = np.power(np.asarray(a, dtype=float), b)
        return _checked(out, node.op)
    args = [_eval(a, env) for a in node.args]
    with np.errstate(all="ignore"):
        if node.func in UNARY_FUNCS:
            out = UNARY_FUNCS[node.func](args[0])
        else:
            out = args[0]
            for a in args[1:]:
                out = NARY_FUNCS[node.func](out, a)
    return _checked(out, node.func)


def evaluate(expr: Expr, bindings: Mapping[str, object]):
    """Evaluate with numpy broadcasting; returns a float for scalar bindings."""
    env = {k: (v if np.isscalar(v) or isinstance(v, np.ndarray) else np.asarray(v, dtype=float))
           for k, v in bindings.items()}
    out = _eval(expr.root, env)
    if isinstance(out, np.ndarray) and out.ndim == 0:
        return float(out)
    return out if isinstance(out, np.ndarray) else float(out)


def num_grad(expr: Expr, var: str, point: Mapping[str, object], scale: float = 1.0):
    """Central difference ``(f(v+h) - f(v-h)) / (2h)`` with ``h = 1e-6 max(1, |v|) scale``."""
    v = np.asarray(point[var], dtype=float)
    h = 1e-6 * np.maximum(1.0, np.abs(v)) * scale
    lo, hi = dict(point), dict(point)
    lo[var], hi[var] = v - h, v + h
    out = (np.asarray(evaluate(expr, hi)) - np.asarray(evaluate(expr, lo))) / (2 * h)
    return float(out) if np.ndim(out) == 0 else out
