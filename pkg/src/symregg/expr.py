"""Expression trees: construction, parsing, printing, relabeling, evaluation.

An expression is an immutable tree of tokens: variables ``x<j>``, parameter
placeholders ``t`` / ``t<i>``, numeric constants, and operators. Trees are
hashable and compare structurally, so they can be used as set/dict keys.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

VAR = "var"
PARAM = "param"
CONST = "const"
OP = "op"

UNARY_OPS = ("recip", "log", "exp", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "powabs")
DEFAULT_OPS = ("+", "-", "*", "/", "powabs", "recip")


def arity(symbol: str) -> int:
    """Arity of an operator symbol (1 or 2)."""
    if symbol in UNARY_OPS:
        return 1
    if symbol in BINARY_OPS:
        return 2
    raise ValueError(f"unknown operator: {symbol!r}")


class ParseError(ValueError):
    """Raised for malformed expression text; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Expr:
    """Immutable expression tree node.

    ``value`` holds the variable index, the parameter index (``None`` for the
    anonymous placeholder), the constant value, or the operator symbol,
    depending on ``kind``. ``size`` is the node count, every token counts 1.
    """

    kind: str
    value: object
    children: tuple["Expr", ...] = ()
    size: int = field(init=False, compare=False)

    def __post_init__(self):
        if self.kind == OP:
            if arity(self.value) != len(self.children):
                raise ValueError(
                    f"operator {self.value!r} expects {arity(self.value)} "
                    f"children, got {len(self.children)}"
                )
        elif self.children:
            raise ValueError(f"{self.kind} token cannot have children")
        object.__setattr__(
            self, "size", 1 + sum(c.size for c in self.children)
        )

    def __str__(self) -> str:
        if self.kind == VAR:
            return f"x{self.value}"
        if self.kind == PARAM:
            return "t" if self.value is None else f"t{self.value}"
        if self.kind == CONST:
            return format_const(self.value)
        if self.kind == "pvar":
            return f"?{self.value}"
        sym = self.value
        if sym in UNARY_OPS:
            return f"{sym}({self.children[0]})"
        if sym == "powabs":
            return f"powabs({self.children[0]}, {self.children[1]})"
        return f"({self.children[0]} {sym} {self.children[1]})"

    def __repr__(self) -> str:
        return f"Expr({self})"


def Var(index: int) -> Expr:
    return Expr(VAR, int(index))


def Param(index: int | None = None) -> Expr:
    return Expr(PARAM, None if index is None else int(index))


def Const(value: float) -> Expr:
    return Expr(CONST, float(value))


def Op(symbol: str, *children: Expr) -> Expr:
    return Expr(OP, symbol, tuple(children))


def PatternVar(name: str) -> Expr:
    """Pattern variable node; only valid inside rewrite patterns."""
    e = Expr.__new__(Expr)
    object.__setattr__(e, "kind", "pvar")
    object.__setattr__(e, "value", name)
    object.__setattr__(e, "children", ())
    object.__setattr__(e, "size", 1)
    return e


def format_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"(\?[A-Za-z_]\w*"
    r"|[A-Za-z_]\w*"
    r"|\d+\.?\d*(?:[eE][+-]?\d+)?"
    r"|\.\d+(?:[eE][+-]?\d+)?"
    r"|[()+\-*/,])"
)

_NAME_RE = re.compile(r"[A-Za-z_]\w*$")
_NUM_START = re.compile(r"[\d.]")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        tokens.append((m.group(0), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens, text_len, allow_pattern_vars):
        self.tokens = tokens
        self.i = 0
        self.end = text_len
        self.allow_pvars = allow_pattern_vars

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, want):
        tok, pos = self.take()
        if tok != want:
            raise ParseError(f"expected {want!r}, found {tok!r}", pos)

    def parse_expr(self) -> Expr:
        tok, pos = self.take()
        if tok is None:
            raise ParseError("unexpected end of input", pos)
        if tok == "(":
            left = self.parse_expr()
            sym, spos = self.take()
            if sym not in ("+", "-", "*", "/"):
                raise ParseError(f"expected binary operator, found {sym!r}", spos)
            right = self.parse_expr()
            self.expect(")")
            return Op(sym, left, right)
        if tok == "-":
            num, npos = self.take()
            if num is None or not _NUM_START.match(num[0]):
                raise ParseError("expected number after unary '-'", npos)
            return Const(-float(num))
        if _NUM_START.match(tok[0]):
            return Const(float(tok))
        if tok.startswith("?"):
            if not self.allow_pvars:
                raise ParseError("pattern variables not allowed here", pos)
            return PatternVar(tok[1:])
        if _NAME_RE.match(tok):
            if tok in UNARY_OPS or tok == "powabs":
                self.expect("(")
                args = [self.parse_expr()]
                nxt, _ = self.peek()
                if nxt == ",":
                    self.take()
                    args.append(self.parse_expr())
                self.expect(")")
                if len(args) != arity(tok):
                    raise ParseError(
                        f"{tok!r} expects {arity(tok)} arguments, got {len(args)}",
                        pos,
                    )
                return Op(tok, *args)
            m = re.match(r"x(\d+)$", tok)
            if m:
                return Var(int(m.group(1)))
            m = re.match(r"t(\d*)$", tok)
            if m:
                return Param(int(m.group(1)) if m.group(1) else None)
            raise ParseError(f"unknown symbol {tok!r}", pos)
        raise ParseError(f"unexpected token {tok!r}", pos)


def parse(text: str, *, allow_pattern_vars: bool = False) -> Expr:
    """Parse expression text (infix with mandatory parentheses for binary
    operators, function-call syntax for unary operators and powabs)."""
    parser = _Parser(_tokenize(text), len(text), allow_pattern_vars)
    e = parser.parse_expr()
    tok, pos = parser.peek()
    if tok is not None:
        raise ParseError(f"trailing input {tok!r}", pos)
    return e


# ---------------------------------------------------------------------------
# Parameter relabeling

def has_anonymous_params(e: Expr) -> bool:
    if e.kind == PARAM and e.value is None:
        return True
    return any(has_anonymous_params(c) for c in e.children)


def relabel_params(e: Expr) -> Expr:
    """Assign indices to anonymous parameter placeholders left-to-right.

    Expressions already built from indexed parameters pass through unchanged.
    If indexed and anonymous parameters coexist, fresh indices start above the
    largest existing index.
    """
    if not has_anonymous_params(e):
        return e
    start = max(_indexed_params(e), default=-1) + 1
    counter = [start]

    def rename(node: Expr) -> Expr:
        if node.kind == PARAM and node.value is None:
            i = counter[0]
            counter[0] += 1
            return Param(i)
        if node.children:
            return Op(node.value, *[rename(c) for c in node.children])
        return node

    return rename(e)


def _indexed_params(e: Expr):
    if e.kind == PARAM and e.value is not None:
        yield e.value
    for c in e.children:
        yield from _indexed_params(c)


def n_params(e: Expr) -> int:
    """Length of the parameter vector needed to evaluate ``e``."""
    best = -1
    stack = [e]
    while stack:
        node = stack.pop()
        if node.kind == PARAM:
            if node.value is None:
                raise ValueError("expression has anonymous parameters; relabel first")
            best = max(best, node.value)
        stack.extend(node.children)
    return best + 1


# ---------------------------------------------------------------------------
# Evaluation

def apply_op(symbol: str, *args):
    """Numeric semantics of every operator; non-finite results propagate."""
    if symbol == "+":
        return args[0] + args[1]
    if symbol == "-":
        return args[0] - args[1]
    if symbol == "*":
        return args[0] * args[1]
    if symbol == "/":
        return np.divide(args[0], args[1])
    if symbol == "powabs":
        return np.power(np.abs(args[0]), args[1])
    if symbol == "recip":
        return np.divide(1.0, args[0])
    if symbol == "log":
        return np.log(args[0])
    if symbol == "exp":
        return np.exp(args[0])
    if symbol == "sqrt":
        return np.sqrt(args[0])
    if symbol == "abs":
        return np.abs(args[0])
    raise ValueError(f"unknown operator: {symbol!r}")


def fold_constants(symbol: str, values) -> float:
    """Constant value of ``symbol`` applied to known constant children."""
    with np.errstate(all="ignore"):
        return float(apply_op(symbol, *[np.float64(v) for v in values]))


def compile_expr(e: Expr):
    """Compile to a closure ``f(params, X) -> (n,) array``.

    Faster than tree-walking when the same expression is evaluated many times
    (parameter fitting).
    """
    def build(node: Expr):
        if node.kind == VAR:
            j = node.value
            return lambda p, X: X[:, j]
        if node.kind == PARAM:
            if node.value is None:
                raise ValueError("cannot evaluate anonymous parameters; relabel first")
            i = node.value
            return lambda p, X: p[i]
        if node.kind == CONST:
            v = float(node.value)
            return lambda p, X: v
        sym = node.value
        subs = [build(c) for c in node.children]
        if len(subs) == 1:
            f = subs[0]
            return lambda p, X: apply_op(sym, f(p, X))
        f, g = subs
        return lambda p, X: apply_op(sym, f(p, X), g(p, X))

    f = build(e)

    def run(params, X):
        params = np.asarray(params, dtype=np.float64)
        with np.errstate(all="ignore"):
            out = f(params, X)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (X.shape[0],)).copy()

    return run


def evaluate(e: Expr, params, data) -> np.ndarray:
    """Evaluate ``e`` element-wise over a dataset (or raw design matrix).

    ``params`` must cover the largest parameter index in ``e``; non-finite
    results are propagated, not masked.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    need = n_params(e)
    if len(params) < need:
        raise ValueError(f"parameter vector too short: need {need}, got {len(params)}")
    return compile_expr(e)(params, X)


# ---------------------------------------------------------------------------
# Random expressions

def random_expr(max_size: int, terminals, ops, rng) -> Expr:
    """Grow-style random expression of size <= ``max_size``.

    Terminal probability rises with depth; operator choice is uniform among
    the ones that still fit in the remaining budget.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    terminals = list(terminals)
    ops = list(ops)

    def grow(budget: int, depth: int) -> Expr:
        if budget < 2:
            return rng.choice(terminals)
        p_term = min(0.9, 0.2 + 0.12 * depth)
        if rng.random() < p_term:
            return rng.choice(terminals)
        avail = [o for o in ops if arity(o) == 1 or budget >= 3]
        if not avail:
            return rng.choice(terminals)
        sym = rng.choice(avail)
        if arity(sym) == 1:
            return Op(sym, grow(budget - 1, depth + 1))
        left = rng.randint(1, budget - 2)
        a = grow(left, depth + 1)
        b = grow(budget - 1 - a.size, depth + 1)
        return Op(sym, a, b)

    return grow(max_size, 0)


# ---------------------------------------------------------------------------
# Subtree access (used by the variation operators)

def subtrees(e: Expr) -> list[Expr]:
    """All subtrees of ``e`` in pre-order (index 0 is ``e`` itself)."""
    out = []
    def walk(node):
        out.append(node)
        for c in node.children:
            walk(c)
    walk(e)
    return out


def replace_subtree(e: Expr, index: int, replacement: Expr) -> Expr:
    """Replace the subtree at pre-order position ``index``."""
    counter = [0]

    def walk(node: Expr) -> Expr:
        if counter[0] == index:
            counter[0] += node.size
            return replacement
        counter[0] += 1
        if not node.children:
            return node
        newc = []
        changed = False
        for c in node.children:
            nc = walk(c)
            changed = changed or nc is not c
            newc.append(nc)
        return Op(node.value, *newc) if changed else node

    if not 0 <= index < e.size:
        raise IndexError(f"subtree index {index} out of range for size {e.size}")
    return walk(e)


# ---------------------------------------------------------------------------
# Dataset

@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observations: an n x d design matrix and target vector."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be a vector with one entry per row of X")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one column")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains non-finite entries")
        cols = tuple(self.columns) if self.columns else tuple(
            f"x{j}" for j in range(X.shape[1])
        )
        if len(cols) != X.shape[1]:
            raise ValueError("column names do not match the number of columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]
