"""Small functional-expression language for model coefficients and rates.

Grammar (bit-exact contract of model files)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := NUMBER | 'i' | 'x' ('[' INDEX ']')?
            | 'SEG0' ('[' INDEX ']')? | 'SEGR' ('[' INDEX ']')?
            | 'SUPNORM' | 'INTABS'
            | func '(' expr (',' expr)? ')' | '(' expr ')' | '-' factor
    func   := abs|exp|log|pow|min|max

Two expression kinds exist.  Point expressions (drift, diffusion, Lyapunov
building blocks) may reference ``x`` and ``i``; segment expressions (rates
q_ij) may reference ``SEG0`` (phi(0)), ``SEGR`` (phi(-r)), ``SUPNORM``
(sup-norm of the window), ``INTABS`` (integral of |phi| over the window) and
``i``.  ``abs`` applied to a bare vector symbol is the Euclidean norm; with
dim == 1 that reduces to the ordinary absolute value.

Evaluation is numpy-vectorised: environment entries may be scalars or arrays
(batch lanes), and results broadcast accordingly.  Undefined operations
(division by zero, log of a non-positive number, fractional powers of
negatives) raise EvalError instead of propagating NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import EvalError, ExprKindError, ExprSyntaxError

__all__ = [
    "Expr",
    "PointEnv",
    "SegEnv",
    "parse_expr",
    "parse_point_expr",
    "parse_segment_expr",
]

POINT = "point"
SEGMENT = "segment"

_POINT_SYMBOLS = {"x", "i"}
_SEGMENT_SYMBOLS = {"SEG0", "SEGR", "SUPNORM", "INTABS", "i"}
_VECTOR_SYMBOLS = {"x", "SEG0", "SEGR"}
_FUNCS = {"abs": 1, "exp": 1, "log": 1, "pow": 2, "min": 2, "max": 2}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Sym:
    """Scalar symbol: 'i', 'SUPNORM' or 'INTABS'."""

    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Var:
    """Vector-valued symbol ('x', 'SEG0', 'SEGR'), optionally indexed."""

    name: str
    index: Optional[int] = None

    def __str__(self):
        return self.name if self.index is None else f"{self.name}[{self.index}]"


@dataclass(frozen=True)
class Neg:
    arg: "Node"

    def __str__(self):
        return f"-{_paren(self.arg, tight=True)}"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"

    def __str__(self):
        lt = _paren(self.left) if self.op in "*/" and _is_sum(self.left) else str(self.left)
        rt = str(self.right)
        if self.op in "*/" and (_is_sum(self.right) or isinstance(self.right, Bin)):
            rt = f"({rt})"
        elif self.op == "-" and _is_sum(self.right):
            rt = f"({rt})"
        return f"{lt} {self.op} {rt}"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    def __str__(self):
        return f"{self.func}({', '.join(str(a) for a in self.args)})"


Node = Union[Num, Sym, Var, Neg, Bin, Call]


def _is_sum(node) -> bool:
    return isinstance(node, Bin) and node.op in "+-"


def _paren(node, tight: bool = False) -> str:
    if isinstance(node, (Num, Sym, Var, Call)):
        return str(node)
    if tight or _is_sum(node):
        return f"({node})"
    return str(node)


# ---------------------------------------------------------------------------
# Tokeniser / recursive-descent parser
# ---------------------------------------------------------------------------

class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, ch: str):
        self._skip_ws()
        if not self.text.startswith(ch, self.pos):
            raise ExprSyntaxError(f"expected {ch!r}", self.pos)
        self.pos += len(ch)

    def number(self) -> float:
        self._skip_ws()
        start = self.pos
        n = len(self.text)
        while self.pos < n and (self.text[self.pos].isdigit() or self.text[self.pos] == "."):
            self.pos += 1
        if self.pos < n and self.text[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < n and self.text[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and self.text[self.pos].isdigit():
                while self.pos < n and self.text[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark
        token = self.text[start:self.pos]
        try:
            return float(token)
        except ValueError:
            raise ExprSyntaxError(f"bad number {token!r}", start) from None

    def word(self) -> str:
        self._skip_ws()
        start = self.pos
        n = len(self.text)
        while self.pos < n and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        return self.text[start:self.pos]


@dataclass(frozen=True)
class Expr:
    """Parsed expression plus its declared kind."""

    root: Node
    kind: str
    text: str

    def __str__(self):
        return str(self.root)

    def symbols(self) -> set:
        out = set()
        _collect_symbols(self.root, out)
        return out

    def __call__(self, env):
        return self.eval(env)

    def eval(self, env):
        """Evaluate against a PointEnv or SegEnv; broadcasts over arrays."""
        return _eval(self.root, env)


def _collect_symbols(node, out: set):
    if isinstance(node, (Sym, Var)):
        out.add(node.name)
    elif isinstance(node, Neg):
        _collect_symbols(node.arg, out)
    elif isinstance(node, Bin):
        _collect_symbols(node.left, out)
        _collect_symbols(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _collect_symbols(a, out)


def parse_expr(text: str, kind: str) -> Expr:
    """Parse `text` into an Expr of the given kind ('point' or 'segment')."""
    if kind not in (POINT, SEGMENT):
        raise ValueError(f"unknown expression kind {kind!r}")
    toks = _Tokens(text)
    root = _parse_sum(toks)
    toks._skip_ws()
    if toks.pos != len(text):
        raise ExprSyntaxError("trailing input", toks.pos)
    allowed = _POINT_SYMBOLS if kind == POINT else _SEGMENT_SYMBOLS
    used = set()
    _collect_symbols(root, used)
    stray = used - allowed
    if stray:
        raise ExprKindError(
            f"symbols {sorted(stray)} not allowed in a {kind} expression"
        )
    return Expr(root=root, kind=kind, text=text)


def parse_point_expr(text: str) -> Expr:
    return parse_expr(text, POINT)


def freeze_regime(expr: Expr, i: int) -> Expr:
    """Substitute the regime symbol by a constant, keeping the kind."""

    def sub(node):
        if isinstance(node, Sym) and node.name == "i":
            return Num(float(i))
        if isinstance(node, (Num, Sym, Var)):
            return node
        if isinstance(node, Neg):
            return Neg(sub(node.arg))
        if isinstance(node, Bin):
            return Bin(node.op, sub(node.left), sub(node.right))
        if isinstance(node, Call):
            return Call(node.func, tuple(sub(a) for a in node.args))
        raise TypeError(node)

    root = sub(expr.root)
    return Expr(root=root, kind=expr.kind, text=str(root))


def parse_segment_expr(text: str) -> Expr:
    return parse_expr(text, SEGMENT)


def _parse_sum(toks: _Tokens) -> Node:
    node = _parse_term(toks)
    while toks.peek() and toks.peek() in "+-":
        op = toks.peek()
        toks.take(op)
        node = Bin(op, node, _parse_term(toks))
    return node


def _parse_term(toks: _Tokens) -> Node:
    node = _parse_factor(toks)
    while toks.peek() and toks.peek() in "*/":
        op = toks.peek()
        toks.take(op)
        node = Bin(op, node, _parse_factor(toks))
    return node


def _parse_factor(toks: _Tokens) -> Node:
    ch = toks.peek()
    if ch == "":
        raise ExprSyntaxError("unexpected end of input", toks.pos)
    if ch == "-":
        toks.take("-")
        return Neg(_parse_factor(toks))
    if ch == "(":
        toks.take("(")
        node = _parse_sum(toks)
        toks.take(")")
        return node
    if ch.isdigit() or ch == ".":
        return Num(toks.number())
    if ch.isalpha():
        word = toks.word()
        if word in _FUNCS:
            toks.take("(")
            args = [_parse_sum(toks)]
            if toks.peek() == ",":
                toks.take(",")
                args.append(_parse_sum(toks))
            toks.take(")")
            arity = _FUNCS[word]
            if len(args) != arity:
                raise ExprSyntaxError(
                    f"{word} takes {arity} argument(s), got {len(args)}", toks.pos
                )
            return Call(word, tuple(args))
        if word in _VECTOR_SYMBOLS:
            index = None
            if toks.peek() == "[":
                toks.take("[")
                index = int(toks.number())
                toks.take("]")
            return Var(word, index)
        if word in ("i", "SUPNORM", "INTABS"):
            return Sym(word)
        raise ExprSyntaxError(f"unknown symbol {word!r}", toks.pos - len(word))
    raise ExprSyntaxError(f"unexpected character {ch!r}", toks.pos)


# ---------------------------------------------------------------------------
# Evaluation environments
# ---------------------------------------------------------------------------

class PointEnv:
    """Environment for point expressions.

    With dim == 1, ``x`` is a scalar or a (B,) batch; with dim > 1 it is a
    single (dim,) vector or a (B, dim) batch.  Bare ``x`` is only legal when
    dim == 1 (use ``x[k]`` or ``abs(x)`` otherwise); ``i`` may be a scalar or
    a (B,) array of regime indices.
    """

    kind = POINT

    def __init__(self, x, i, dim: int = 1):
        self.x = np.asarray(x, dtype=float)
        self.i = i
        self.dim = dim

    def component(self, index):
        if self.dim == 1:
            # any array shape is a batch of scalar points
            if index not in (None, 0):
                raise EvalError(f"x[{index}] out of range (dim == 1)")
            return self.x
        if index is None:
            raise EvalError("bare x needs dim == 1; use x[k] or abs(x)")
        if not 0 <= index < self.dim:
            raise EvalError(f"x[{index}] out of range (dim == {self.dim})")
        return self.x[..., index]

    def norm(self, name):
        if self.dim == 1:
            return np.abs(self.component(None))
        return np.linalg.norm(self.x, axis=-1)

    def lookup(self, name):
        if name == "i":
            return self.i
        raise EvalError(f"symbol {name} not available in point context")


class SegEnv:
    """Environment for segment expressions.

    Carries the four window functionals.  ``seg0``/``segr`` follow the same
    scalar/vector/batch conventions as PointEnv.x; ``supnorm``/``intabs`` are
    scalars or (B,) arrays.
    """

    kind = SEGMENT

    def __init__(self, seg0, segr, supnorm, intabs, i, dim: int = 1):
        self.seg0 = np.asarray(seg0, dtype=float)
        self.segr = np.asarray(segr, dtype=float)
        self.supnorm = supnorm
        self.intabs = intabs
        self.i = i
        self.dim = dim

    @classmethod
    def from_segment(cls, seg, i):
        head = seg.head()
        tail = seg.tail()
        if seg.dim == 1:
            head, tail = head[0], tail[0]
        return cls(head, tail, seg.sup_norm(), seg.abs_integral(), i, dim=seg.dim)

    def _vec(self, name):
        return self.seg0 if name == "SEG0" else self.segr

    def component(self, name, index):
        v = self._vec(name)
        if self.dim == 1:
            if index not in (None, 0):
                raise EvalError(f"{name}[{index}] out of range (dim == 1)")
            return v
        if index is None:
            raise EvalError(f"bare {name} needs dim == 1; use {name}[k] or abs({name})")
        if not 0 <= index < self.dim:
            raise EvalError(f"{name}[{index}] out of range (dim == {self.dim})")
        return v[..., index]

    def norm(self, name):
        if self.dim == 1:
            return np.abs(self.component(name, None))
        return np.linalg.norm(self._vec(name), axis=-1)

    def lookup(self, name):
        if name == "i":
            return self.i
        if name == "SUPNORM":
            return self.supnorm
        if name == "INTABS":
            return self.intabs
        raise EvalError(f"symbol {name} not available in segment context")


# ---------------------------------------------------------------------------
# Evaluator
# ---------------------------------------------------------------------------

def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Sym):
        return env.lookup(node.name)
    if isinstance(node, Var):
        if node.name == "x":
            return env.component(node.index)
        return env.component(node.name, node.index)
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Bin):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if np.any(np.asarray(right) == 0):
            raise EvalError(f"division by zero in {node}")
        return left / right
    if isinstance(node, Call):
        if node.func == "abs":
            arg = node.args[0]
            if isinstance(arg, Var) and arg.index is None:
                return env.norm(arg.name)
            return np.abs(_eval(arg, env))
        vals = [_eval(a, env) for a in node.args]
        if node.func == "exp":
            return np.exp(vals[0])
        if node.func == "log":
            if np.any(np.asarray(vals[0]) <= 0):
                raise EvalError(f"log of non-positive value in {node}")
            return np.log(vals[0])
        if node.func == "pow":
            base, expo = np.asarray(vals[0], dtype=float), vals[1]
            e_arr = np.asarray(expo, dtype=float)
            frac = e_arr != np.floor(e_arr)
            if np.any((base < 0) & frac):
                raise EvalError(f"fractional power of negative value in {node}")
            if np.any((base == 0) & (e_arr < 0)):
                raise EvalError(f"zero raised to negative power in {node}")
            return np.power(base, e_arr)
        if node.func == "min":
            return np.minimum(vals[0], vals[1])
        if node.func == "max":
            return np.maximum(vals[0], vals[1])
    raise TypeError(f"cannot evaluate node {node!r}")
