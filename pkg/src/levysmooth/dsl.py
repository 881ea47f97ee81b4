"""A small expression language for path functionals Y = F(X).

Grammar (EBNF, also in docs/grammar.md)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | primary ;
    primary = number | "XT" | call | "(" expr ")" ;
    call    = name "(" [ expr { "," expr } ] ")" ;

``count(A)`` and ``sumjumps(A, g)`` take a box name as their first
argument; ``g`` is one of ``x, x2, tx, absx, log1pabsx``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .model import BoxSet, JumpModel
from .simulate import JumpPath, PathBatch, terminal_value


class DSLError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        where = f" at line {line}, column {col}" if line else ""
        super().__init__(f"{message}{where}")


class DSLSyntaxError(DSLError):
    pass


class UnknownIdentifier(DSLError):
    pass


class ArityError(DSLError):
    pass


class EvaluationError(ArithmeticError):
    pass


WEIGHTS = {
    "x": kernels.G_X,
    "x2": kernels.G_X2,
    "tx": kernels.G_TX,
    "absx": kernels.G_ABSX,
    "log1pabsx": kernels.G_LOG1P_ABSX,
}

# name -> number of expression arguments
FUNCTIONS = {
    "pow": 2,
    "min": 2,
    "max": 2,
    "clamp": 3,
    "abs": 1,
    "exp": 1,
    "lnplus": 1,
    "ind": 2,
}


@dataclass(frozen=True)
class Node:
    span: tuple[int, int] = field(default=(0, 0), compare=False, repr=False, kw_only=True)


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Terminal(Node):
    pass


@dataclass(frozen=True)
class Count(Node):
    box: str


@dataclass(frozen=True)
class SumJumps(Node):
    box: str
    weight: str


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple[Node, ...]


@dataclass(frozen=True)
class Functional:
    root: Node
    source: str = field(default="", compare=False)

    def __str__(self):
        return to_source(self.root)

    @property
    def boxes(self) -> tuple[str, ...]:
        return tuple(sorted({n.box for n in walk(self.root) if isinstance(n, (Count, SumJumps))}))

    @property
    def uses_terminal(self) -> bool:
        return any(isinstance(n, Terminal) for n in walk(self.root))

    def depth(self) -> int:
        return _depth(self.root)


def walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.arg)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def _depth(node: Node) -> int:
    children = {Neg: lambda n: (n.arg,), BinOp: lambda n: (n.left, n.right), Call: lambda n: n.args}
    for kind, get in children.items():
        if isinstance(node, kind):
            return 1 + max(_depth(c) for c in get(node))
    return 1


# --- lexer / parser -------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/(),])"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise DSLSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            for i, ch in enumerate(m.group(), start=pos):
                if ch == "\n":
                    line, line_start = line + 1, i + 1
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str, boxes):
        self.toks = _tokenize(src)
        self.i = 0
        self.boxes = boxes

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self, text: str | None = None, kind: str | None = None) -> _Tok:
        t = self.tok
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = repr(text) if text is not None else kind
            got = "end of input" if t.kind == "eof" else repr(t.text)
            raise DSLSyntaxError(f"expected {want}, found {got}", t.line, t.col)
        self.i += 1
        return t

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise DSLSyntaxError(f"unexpected {self.tok.text!r}", self.tok.line, self.tok.col)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            t = self.take()
            node = BinOp(t.text, node, self.term(), span=(t.line, t.col))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            t = self.take()
            node = BinOp(t.text, node, self.unary(), span=(t.line, t.col))
        return node

    def unary(self) -> Node:
        if self.tok.text == "-":
            t = self.take()
            if self.tok.kind == "num":
                return Num(-float(self.take().text), span=(t.line, t.col))
            return Neg(self.unary(), span=(t.line, t.col))
        return self.primary()

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Num(float(t.text), span=(t.line, t.col))
        if t.text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if t.kind == "name":
            self.take()
            if t.text == "XT":
                return Terminal(span=(t.line, t.col))
            return self.call(t)
        got = "end of input" if t.kind == "eof" else repr(t.text)
        raise DSLSyntaxError(f"expected an expression, found {got}", t.line, t.col)

    def box_name(self) -> str:
        t = self.take(kind="name")
        if self.boxes is not None and t.text not in self.boxes:
            raise UnknownIdentifier(f"undeclared box {t.text!r}", t.line, t.col)
        return t.text

    def call(self, name: _Tok) -> Node:
        span = (name.line, name.col)
        if name.text not in FUNCTIONS and name.text not in ("count", "sumjumps"):
            raise UnknownIdentifier(f"unknown function {name.text!r}", *span)
        self.take("(")
        if name.text == "count":
            box = self.box_name()
            self._close(name, 1)
            return Count(box, span=span)
        if name.text == "sumjumps":
            box = self.box_name()
            self.take(",")
            w = self.take(kind="name")
            if w.text not in WEIGHTS:
                raise UnknownIdentifier(
                    f"unknown jump weight {w.text!r}; choose from {', '.join(WEIGHTS)}", w.line, w.col
                )
            self._close(name, 2)
            return SumJumps(box, w.text, span=span)
        args = []
        if self.tok.text != ")":
            args.append(self.expr())
            while self.tok.text == ",":
                self.take()
                args.append(self.expr())
        self.take(")")
        if len(args) != FUNCTIONS[name.text]:
            raise ArityError(
                f"{name.text} takes {FUNCTIONS[name.text]} argument(s), got {len(args)}", *span
            )
        return Call(name.text, tuple(args), span=span)

    def _close(self, name: _Tok, arity: int):
        if self.tok.text == ",":
            raise ArityError(f"{name.text} takes {arity} argument(s)", name.line, name.col)
        self.take(")")


def parse(source: str, boxes=None) -> Functional:
    """Parse ``source``; when ``boxes`` is given, box names must be among them."""
    return Functional(_Parser(source, boxes).parse(), source)


def to_source(node: Node) -> str:
    """Canonical, fully parenthesized text; ``parse(to_source(n))`` gives back ``n``."""
    if isinstance(node, Num):
        s = repr(float(node.value))
        return f"({s})" if node.value < 0 or s.startswith("-") else s
    if isinstance(node, Terminal):
        return "XT"
    if isinstance(node, Count):
        return f"count({node.box})"
    if isinstance(node, SumJumps):
        return f"sumjumps({node.box}, {node.weight})"
    if isinstance(node, Neg):
        return f"(-({to_source(node.arg)}))"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(node)


# --- evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class Env:
    """Binds box names to box sets and supplies drift and horizon for XT."""

    model: JumpModel
    boxes: Mapping[str, BoxSet]

    def box(self, name: str) -> BoxSet:
        try:
            return self.boxes[name]
        except KeyError:
            raise UnknownIdentifier(f"undeclared box {name!r}") from None


def primitives(f: Functional | Node) -> set[Node]:
    root = f.root if isinstance(f, Functional) else f
    return {n for n in walk(root) if isinstance(n, (Count, SumJumps, Terminal))}


def primitive_values(prims, batch: PathBatch, env: Env) -> dict[Node, np.ndarray]:
    """Evaluate every primitive on every path, one kernel call per weight."""
    out: dict[Node, np.ndarray] = {}
    by_code: dict[int, list[Node]] = {}
    for p in prims:
        if isinstance(p, Terminal):
            out[p] = terminal_value(env.model, batch)
        else:
            code = kernels.G_ONE if isinstance(p, Count) else WEIGHTS[p.weight]
            by_code.setdefault(code, []).append(p)
    for code, nodes in by_code.items():
        rects, owner = [], []
        for k, node in enumerate(nodes):
            arr = env.box(node.box).as_array()
            rects.append(arr)
            owner.extend([k] * len(arr))
        sums = kernels.box_sums(
            batch.offsets, batch.times, batch.sizes, np.concatenate(rects), np.array(owner, dtype=np.int64), len(nodes), code
        )
        for k, node in enumerate(nodes):
            out[node] = sums[:, k]
    return out


def _pow(a, b):
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        r = np.power(a, b)
    if np.any(np.isnan(r) & ~np.isnan(a) & ~np.isnan(b)):
        raise EvaluationError("pow: negative base with non-integer exponent")
    if np.any((a == 0) & (b < 0)):
        raise EvaluationError("pow: zero base with negative exponent")
    return r


def lnplus(v):
    """ln+ v = max(ln v, 0), taken as 0 for v <= 1."""
    return np.log(np.maximum(v, 1.0))


def eval_node(node: Node, values: Mapping[Node, np.ndarray], n: int):
    if isinstance(node, Num):
        return np.full(n, node.value)
    if isinstance(node, (Count, SumJumps, Terminal)):
        return np.asarray(values[node], dtype=float)
    if isinstance(node, Neg):
        return -eval_node(node.arg, values, n)
    if isinstance(node, BinOp):
        a = eval_node(node.left, values, n)
        b = eval_node(node.right, values, n)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        zero = b == 0
        if np.any(zero):
            raise EvaluationError(
                f"division by zero in {to_source(node)} on {int(zero.sum())} of {n} path(s)"
            )
        return a / b
    args = [eval_node(a, values, n) for a in node.args]
    name = node.name
    if name == "pow":
        return _pow(*args)
    if name == "min":
        return np.minimum(*args)
    if name == "max":
        return np.maximum(*args)
    if name == "clamp":
        v, lo, hi = args
        return np.minimum(np.maximum(v, lo), hi)
    if name == "abs":
        return np.abs(args[0])
    if name == "exp":
        with np.errstate(over="ignore"):
            return np.exp(args[0])
    if name == "lnplus":
        return lnplus(args[0])
    if name == "ind":
        return (args[0] > args[1]).astype(float)
    raise UnknownIdentifier(f"unknown function {name!r}", *node.span)


def evaluate_batch(f: Functional | Node, batch: PathBatch, env: Env) -> np.ndarray:
    root = f.root if isinstance(f, Functional) else f
    return eval_node(root, primitive_values(primitives(root), batch, env), len(batch))


def evaluate(f: Functional | Node, path: JumpPath, env: Env) -> float:
    return float(evaluate_batch(f, path.batch(), env)[0])


# --- measurability --------------------------------------------------------


@dataclass(frozen=True)
class MeasurabilityReport:
    referenced: tuple[str, ...]
    uses_terminal_value: bool
    certified: bool
    offending: tuple[str, ...] = ()
    note: str = ""


def measurability(f: Functional, A: BoxSet, env: Env) -> MeasurabilityReport:
    """Syntactic certificate that Y depends only on jumps inside A.

    Every referenced box must lie inside A. XT is accepted only when A covers
    the whole jump space [0, T) x R_0, where it equals a deterministic drift
    plus a function of the jumps in A.
    """
    offending = tuple(name for name in f.boxes if not env.box(name).issubset(A))
    note = ""
    if f.uses_terminal:
        if BoxSet.full(env.model.horizon).issubset(A):
            note = "XT certified: the drift term is deterministic"
        else:
            offending = offending + ("XT",)
    return MeasurabilityReport(f.boxes, f.uses_terminal, not offending, offending, note)


def depends_only_on_count(f: Functional, env: Env, A: BoxSet) -> bool:
    """True when Y = phi(N(A)): every primitive is count(.) of a box equal to A.

    Constants qualify.
    """
    for p in primitives(f):
        if not isinstance(p, Count) or env.box(p.box) != A:
            return False
    return True


def evaluate_on_counts(f: Functional, n: np.ndarray) -> np.ndarray:
    """phi(n) for a functional of the form phi(count(A))."""
    n = np.asarray(n, dtype=float)
    values = {p: n for p in primitives(f)}
    return eval_node(f.root, values, len(n))
