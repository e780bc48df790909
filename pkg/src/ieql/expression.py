"""Immutable symbolic expression trees.

An :class:`Expression` is the final product of the equation learner: a small
tree over constants, input variables, the four arithmetic operations and a
handful of unary functions. Nodes are hashable and compare structurally, so
they can be used as dictionary keys when collecting like terms.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_EVEN, Context, Decimal
from typing import Iterable, Sequence

import numpy as np

BINARY_KINDS = ("add", "sub", "mul", "div")
UNARY_KINDS = ("cos", "sin", "exp", "log", "sqrt", "square", "neg")
LEAF_KINDS = ("const", "var")
ALL_KINDS = LEAF_KINDS + BINARY_KINDS + UNARY_KINDS

_KIND_RANK = {kind: rank for rank, kind in enumerate(ALL_KINDS)}


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its mathematical domain."""


class Expression:
    """A node of an expression tree.

    Use the module-level constructors (:func:`const`, :func:`var`,
    :func:`add`, ...) rather than calling this class directly.
    """

    __slots__ = ("kind", "value", "var", "children", "_hash", "_key")

    def __init__(self, kind: str, children: Sequence[Expression] = (),
                 value: float | None = None, var: int | None = None):
        if kind not in _KIND_RANK:
            raise ValueError(f"unknown expression kind {kind!r}")
        children = tuple(children)
        arity = 0 if kind in LEAF_KINDS else (2 if kind in BINARY_KINDS else 1)
        if len(children) != arity:
            raise ValueError(f"{kind} expects {arity} children, got {len(children)}")
        if kind == "const":
            value = float(value)
        if kind == "var" and (var is None or int(var) < 0):
            raise ValueError("variable index must be a non-negative integer")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", value if kind == "const" else None)
        object.__setattr__(self, "var", int(var) if kind == "var" else None)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "_hash", hash((kind, self.value, self.var,
                                                tuple(hash(c) for c in children))))
        object.__setattr__(self, "_key", None)

    def __setattr__(self, name, value):
        raise AttributeError("Expression is immutable")

    def __reduce__(self):
        # rebuild through __init__ so the cached hash matches the receiving process
        return (Expression, (self.kind, self.children, self.value, self.var))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Expression) or self._hash != other._hash:
            return False
        if self.kind != other.kind or self.var != other.var:
            return False
        if self.kind == "const":
            # bit-level comparison so that 0.0 and -0.0 stay distinct keys
            return self.value.hex() == other.value.hex()
        return self.children == other.children

    def __repr__(self) -> str:
        return f"Expression({format_expr(self, precision=6)!r})"

    def sort_key(self) -> tuple:
        """Total order used to arrange terms deterministically."""
        if self._key is None:
            if self.kind == "const":
                k = (_KIND_RANK["const"], self.value, ())
            elif self.kind == "var":
                k = (_KIND_RANK["var"], self.var, ())
            else:
                k = (_KIND_RANK[self.kind], 0, tuple(c.sort_key() for c in self.children))
            object.__setattr__(self, "_key", k)
        return self._key

    @property
    def is_const(self) -> bool:
        return self.kind == "const"


# -- constructors ------------------------------------------------------------

def const(value: float) -> Expression:
    return Expression("const", value=value)


def var(index: int) -> Expression:
    return Expression("var", var=index)


def add(a: Expression, b: Expression) -> Expression:
    return Expression("add", (a, b))


def sub(a: Expression, b: Expression) -> Expression:
    return Expression("sub", (a, b))


def mul(a: Expression, b: Expression) -> Expression:
    return Expression("mul", (a, b))


def div(a: Expression, b: Expression) -> Expression:
    return Expression("div", (a, b))


def unary(kind: str, a: Expression) -> Expression:
    return Expression(kind, (a,))


def sum_of(terms: Iterable[Expression]) -> Expression:
    """Left-associated sum; the empty sum is the constant 0."""
    out = None
    for t in terms:
        out = t if out is None else add(out, t)
    return const(0.0) if out is None else out


# -- traversal ---------------------------------------------------------------

def iter_nodes(e: Expression):
    """Yield every distinct node object once (shared sub-trees are visited once)."""
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node.children)


def variables(e: Expression) -> set[int]:
    return {n.var for n in iter_nodes(e) if n.kind == "var"}


def count_kinds(e: Expression) -> dict[str, int]:
    """Number of tree occurrences of each node kind (shared sub-trees counted per use)."""
    memo: dict[int, dict[str, int]] = {}

    def visit(node):
        got = memo.get(id(node))
        if got is not None:
            return got
        counts = {node.kind: 1}
        for child in node.children:
            for k, v in visit(child).items():
                counts[k] = counts.get(k, 0) + v
        memo[id(node)] = counts
        return counts

    return dict(visit(e))


def tree_size(e: Expression) -> int:
    return sum(count_kinds(e).values())


# -- evaluation ----------------------------------------------------------------

def eval_expr(e: Expression, x: Sequence[float]) -> float:
    """Evaluate at a single input vector, raising :class:`DomainError` on violations."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(evaluate(e, x)[0])


def evaluate(e: Expression, X, strict: bool = True) -> np.ndarray:
    """Vectorised evaluation over the rows of ``X``.

    With ``strict=True`` any domain violation (log of a non-positive number,
    sqrt of a negative number, division by zero) raises :class:`DomainError`;
    otherwise the offending entries become NaN.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    memo: dict[int, np.ndarray] = {}

    def fail(what, mask):
        if strict:
            rows = np.flatnonzero(mask)
            raise DomainError(f"{what} at {len(rows)} point(s), first row {rows[0]}")

    # explicit post-order walk; deep trees would overflow the recursion limit
    stack = [(e, False)]
    while stack:
        node, ready = stack.pop()
        if id(node) in memo:
            continue
        if not ready:
            stack.append((node, True))
            stack.extend((c, False) for c in node.children if id(c) not in memo)
            continue
        k = node.kind
        if k == "const":
            out = np.full(n, node.value)
        elif k == "var":
            if node.var >= X.shape[1]:
                raise IndexError(f"variable index {node.var} out of range for {X.shape[1]} inputs")
            out = X[:, node.var].copy()
        else:
            args = [memo[id(c)] for c in node.children]
            with np.errstate(all="ignore"):
                if k == "add":
                    out = args[0] + args[1]
                elif k == "sub":
                    out = args[0] - args[1]
                elif k == "mul":
                    out = args[0] * args[1]
                elif k == "div":
                    bad = args[1] == 0
                    if bad.any():
                        fail("division by zero", bad)
                    out = np.where(bad, np.nan, args[0] / np.where(bad, 1.0, args[1]))
                elif k == "neg":
                    out = -args[0]
                elif k == "square":
                    out = args[0] * args[0]
                elif k == "cos":
                    out = np.cos(args[0])
                elif k == "sin":
                    out = np.sin(args[0])
                elif k == "exp":
                    out = np.exp(args[0])
                elif k == "log":
                    bad = ~(args[0] > 0)
                    if bad.any():
                        fail("log of non-positive value", bad)
                    out = np.where(bad, np.nan, np.log(np.where(bad, 1.0, args[0])))
                elif k == "sqrt":
                    bad = ~(args[0] >= 0)
                    if bad.any():
                        fail("sqrt of negative value", bad)
                    out = np.where(bad, np.nan, np.sqrt(np.where(bad, 0.0, args[0])))
                else:  # pragma: no cover - guarded by the constructor
                    raise ValueError(k)
        memo[id(node)] = out
    return memo[id(e)]


def domain_arguments(e: Expression) -> list[tuple[str, Expression]]:
    """Sub-expressions whose values must stay positive (log, div) or non-negative (sqrt)."""
    out = []
    for node in iter_nodes(e):
        if node.kind in ("log", "sqrt"):
            out.append((node.kind, node.children[0]))
        elif node.kind == "div" and not node.children[1].is_const:
            out.append(("div", node.children[1]))
    return out


# -- JSON ----------------------------------------------------------------------

def to_json(e: Expression) -> dict:
    out: dict = {"kind": e.kind}
    if e.kind == "const":
        out["value"] = e.value
    elif e.kind == "var":
        out["var"] = e.var
    out["children"] = [to_json(c) for c in e.children]
    return out


def from_json(obj: dict) -> Expression:
    kind = obj["kind"]
    children = [from_json(c) for c in obj.get("children", [])]
    return Expression(kind, children, value=obj.get("value"), var=obj.get("var"))


# -- formatting ----------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "square": 4}


def round_sig(value: float, digits: int) -> Decimal:
    """Round to ``digits`` significant figures, half-to-even on the decimal repr."""
    if digits < 1:
        raise ValueError("precision must be at least 1")
    return Context(prec=digits, rounding=ROUND_HALF_EVEN).plus(Decimal(repr(float(value))))


def format_number(value: float, digits: int = 3) -> str:
    if not math.isfinite(value):
        raise ValueError(f"cannot format non-finite constant {value}")
    d = round_sig(value, digits)
    if d.is_zero():
        return "0"
    exp = d.adjusted()
    if -5 <= exp < 16:
        text = format(d, "f")
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text
    return format(d, "E").replace("E+", "E")


def default_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def format_expr(e: Expression, precision: int = 3, names: Sequence[str] | None = None) -> str:
    """Render ``e`` as an infix string with constants rounded to ``precision`` significant figures.

    Variables are printed with ``names`` when given, otherwise as ``x1, x2, ...``.
    Negative summands are folded into subtraction so that
    ``add(a, mul(const(-2), x))`` prints as ``a - 2*x``.
    """
    if precision < 1:
        raise ValueError("precision must be at least 1")

    def name(i):
        if names is not None and i < len(names):
            return names[i]
        return f"x{i + 1}"

    def negative_term(node):
        # returns the positive counterpart of a term that starts with a minus sign
        if node.kind == "const" and node.value < 0:
            return const(-node.value)
        if node.kind == "neg":
            return node.children[0]
        if node.kind in ("mul", "div") and node.children[0].kind == "const" and node.children[0].value < 0:
            return Expression(node.kind, (const(-node.children[0].value), node.children[1]))
        return None

    def render(node, parent_prec=0, right_side=False, parent=None):
        k = node.kind
        if k == "const":
            text = format_number(node.value, precision)
            if text.startswith("-") and (right_side or parent_prec >= _PREC["neg"]):
                return f"({text})"
            return text
        if k == "var":
            return name(node.var)
        if k in ("cos", "sin", "exp", "log", "sqrt"):
            return f"{k}({render(node.children[0])})"
        prec = _PREC[k]
        if k == "square":
            text = render(node.children[0], prec + 1, parent=k) + "^2"
        elif k == "neg":
            text = "-" + render(node.children[0], prec, parent=k)
        elif k in ("add", "sub"):
            left = render(node.children[0], prec, parent=k)
            rhs = node.children[1]
            op = "+" if k == "add" else "-"
            flipped = negative_term(rhs)
            if flipped is not None:
                op = "-" if k == "add" else "+"
                rhs = flipped
            sub_like = (op == "-")
            text = f"{left} {op} {render(rhs, prec, True, 'sub' if sub_like else 'add')}"
        else:
            op = "*" if k == "mul" else "/"
            left = render(node.children[0], prec, parent=k)
            text = f"{left}{op}{render(node.children[1], prec, True, k)}"
        # same-precedence right operands need brackets only under - and /
        needs = prec < parent_prec or (prec == parent_prec and right_side and parent in ("sub", "div"))
        if k == "square" and parent == "square":
            needs = True
        return f"({text})" if needs else text

    return render(e)
