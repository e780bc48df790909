"""Value-preserving simplification.

Every expression is brought into a sum of monomials over *atoms* (variables,
function applications, non-constant divisions).  Collecting that sum folds
constants, merges nested affine maps, absorbs additive offsets into the
constant term (which is how relaxation offsets disappear into biases), drops
zero terms and removes multiplications by one.  Products of sums are expanded
only while the result stays small.  No trigonometric or logarithmic identities
are applied.
"""

from __future__ import annotations

import math

from .expression import Expression, const, div, mul, unary

MAX_ITERATIONS = 100
MAX_EXPANDED_TERMS = 64

# A polynomial maps a monomial -> coefficient.  A monomial is a tuple of
# (atom, power) pairs sorted by atom.sort_key(); the empty tuple is the constant.
Poly = dict


def _mono_mul(m1: tuple, m2: tuple) -> tuple:
    if not m1:
        return m2
    if not m2:
        return m1
    powers: dict[Expression, int] = {}
    for atom, p in m1 + m2:
        powers[atom] = powers.get(atom, 0) + p
    return tuple(sorted(powers.items(), key=lambda ap: ap[0].sort_key()))


def _add(p: Poly, q: Poly, sign: float = 1.0) -> Poly:
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + sign * c
    return {m: c for m, c in out.items() if c != 0.0}


def _scale(p: Poly, c: float) -> Poly:
    if c == 0.0:
        return {}
    return {m: c * v for m, v in p.items() if c * v != 0.0}


def _mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            out[m] = out.get(m, 0.0) + c1 * c2
    return {m: c for m, c in out.items() if c != 0.0}


def _constant(p: Poly):
    """Return the value if ``p`` is constant, else None."""
    if not p:
        return 0.0
    if len(p) == 1 and () in p:
        return p[()]
    return None


def _atom(e: Expression) -> Poly:
    return {((e, 1),): 1.0}


def _single_term(p: Poly):
    if len(p) == 1:
        (m, c), = p.items()
        return m, c
    return None


def _ordered_terms(p: Poly):
    terms = [(m, c) for m, c in p.items() if m]
    terms.sort(key=lambda mc: tuple((a.sort_key(), -k) for a, k in mc[0]))
    if () in p:
        terms.append(((), p[()]))
    return terms


def _monomial_expr(m: tuple) -> Expression:
    out = None
    for atom, power in m:
        factor = _power_expr(atom, power)
        out = factor if out is None else mul(out, factor)
    return out


def _power_expr(atom: Expression, power: int) -> Expression:
    if power == 1:
        return atom
    if power % 2 == 0:
        return unary("square", _power_expr(atom, power // 2))
    return mul(_power_expr(atom, power - 1), atom)


def _term_expr(m: tuple, c: float) -> Expression:
    if not m:
        return const(c)
    if len(m) == 1 and m[0][1] == 1 and m[0][0].kind == "div" and m[0][0].children[0] == const(1.0):
        # c * (1/d) reads better as c/d
        return div(const(c), m[0][0].children[1]) if c != 1.0 else m[0][0]
    body = _monomial_expr(m)
    if c == 1.0:
        return body
    if c == -1.0:
        return unary("neg", body)
    return mul(const(c), body)


def rebuild(p: Poly) -> Expression:
    """Turn a polynomial back into an expression tree (canonical term order)."""
    terms = _ordered_terms(p)
    if not terms:
        return const(0.0)
    out = _term_expr(*terms[0])
    for m, c in terms[1:]:
        if c < 0:
            out = Expression("sub", (out, _term_expr(m, -c)))
        else:
            out = Expression("add", (out, _term_expr(m, c)))
    return out


class _Normalizer:
    def __init__(self, max_terms: int):
        self.max_terms = max_terms
        self.memo: dict[int, Poly] = {}
        self.rebuilt: dict[int, tuple] = {}

    def expr(self, p: Poly) -> Expression:
        # the polynomial is stored with its rebuild so its id cannot be recycled
        hit = self.rebuilt.get(id(p))
        if hit is not None and hit[0] is p:
            return hit[1]
        got = rebuild(p)
        self.rebuilt[id(p)] = (p, got)
        return got

    def poly(self, e: Expression) -> Poly:
        # iterative post-order so deep networks do not hit the recursion limit
        stack = [(e, False)]
        while stack:
            node, ready = stack.pop()
            if id(node) in self.memo:
                continue
            if not ready:
                stack.append((node, True))
                stack.extend((c, False) for c in node.children if id(c) not in self.memo)
                continue
            self.memo[id(node)] = self._node(node, [self.memo[id(c)] for c in node.children])
        return self.memo[id(e)]

    def _product(self, a: Poly, b: Poly) -> Poly:
        ca, cb = _constant(a), _constant(b)
        if ca is not None:
            return _scale(b, ca)
        if cb is not None:
            return _scale(a, cb)
        if len(a) * len(b) <= self.max_terms:
            return _mul(a, b)
        # too large to expand; keep constant factors of single terms outside
        ka = kb = 1.0
        sa, sb = _single_term(a), _single_term(b)
        if sa is not None:
            ka, a = sa[1], {sa[0]: 1.0}
        if sb is not None:
            kb, b = sb[1], {sb[0]: 1.0}
        return _scale(_atom(mul(self.expr(a), self.expr(b))), ka * kb)

    def _node(self, node: Expression, args: list) -> Poly:
        k = node.kind
        if k == "const":
            return {(): node.value} if node.value != 0.0 else {}
        if k == "var":
            return _atom(node)
        if k == "add":
            return _add(args[0], args[1])
        if k == "sub":
            return _add(args[0], args[1], -1.0)
        if k == "neg":
            return _scale(args[0], -1.0)
        if k == "mul":
            return self._product(args[0], args[1])
        if k == "square":
            a = args[0]
            c = _constant(a)
            if c is not None:
                return {(): c * c} if c != 0.0 else {}
            single = _single_term(a)
            if single is not None:
                m, c = single
                return {_mono_mul(m, m): c * c}
            if len(a) ** 2 <= self.max_terms:
                return _mul(a, a)
            return _atom(unary("square", self.expr(a)))
        if k == "div":
            return self._quotient(args[0], args[1])
        # unary functions
        a = args[0]
        c = _constant(a)
        if c is not None:
            folded = _fold(k, c)
            if folded is not None:
                return {(): folded} if folded != 0.0 else {}
        return _atom(unary(k, self.expr(a)))

    def _quotient(self, a: Poly, b: Poly) -> Poly:
        cb = _constant(b)
        if cb is not None and cb != 0.0:
            return _scale(a, 1.0 / cb)
        if _constant(a) == 0.0 and cb is None:
            return {}
        if cb is not None:
            # x / 0 is left alone so that evaluation keeps reporting it
            return _atom(div(self.expr(a), const(0.0)))
        # normalise the denominator so its leading coefficient is one
        lead = _ordered_terms(b)[0][1]
        b = _scale(b, 1.0 / lead)
        scale = 1.0 / lead
        single = _single_term(a)
        if single is not None:
            m, ca = single
            scale *= ca
            a = {m: 1.0}
        num = self.expr(a) if a else const(1.0)
        return _scale(_atom(div(num, self.expr(b))), scale)


def _fold(kind: str, c: float):
    try:
        if kind == "cos":
            return math.cos(c)
        if kind == "sin":
            return math.sin(c)
        if kind == "exp":
            v = math.exp(c)
            return v if math.isfinite(v) else None
        if kind == "log":
            return math.log(c) if c > 0 else None
        if kind == "sqrt":
            return math.sqrt(c) if c >= 0 else None
    except OverflowError:
        return None
    raise ValueError(kind)


def simplify(e: Expression, max_terms: int = MAX_EXPANDED_TERMS) -> Expression:
    """Return an expression equal to ``e`` wherever ``e`` is defined.

    The normal-form pass is repeated until the tree stops changing, with a hard
    cap of 100 passes; the input itself is always a valid (if unsimplified)
    answer.
    """
    current = e
    for _ in range(MAX_ITERATIONS):
        nxt = rebuild(_Normalizer(max_terms).poly(current))
        if nxt == current:
            return nxt
        current = nxt
    return current
