"""Collapse a trained network into closed-form expressions.

Extraction uses the deterministic gates.  A unit is *live* when its output
reaches a network output through non-zero effective weights, and *dependent*
when its value changes with the input.  Units that are live but independent
of the input collapse to constants; live dependent units become exact
functions whose relaxation offset is folded into the input bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expression as ex
from . import kernels
from .architecture import KIND_NAMES, SINGULAR_UNITS
from .network import Network, forward, predict, singular_inputs
from .simplify import simplify as simplify_expr


@dataclass
class Extraction:
    expressions: list             # simplified, one per output
    raw: list                     # before simplification
    active_weights: int
    active_biases: int
    weighted_counts: dict = field(default_factory=dict)   # active weights per consumer kind
    unit_counts: dict = field(default_factory=dict)       # live dependent units per kind

    @property
    def active_parameters(self) -> int:
        return self.active_weights + self.active_biases


def _analyse(net: Network, weff: np.ndarray):
    """Per ytilde column: live and dependent flags; per pre-activation: dependent flag."""
    lay = net.layout
    D = net.spec.input_dim
    width = lay.width
    dep_col = np.zeros(width, dtype=bool)
    dep_col[:D] = True
    dep_pre = np.zeros(lay.n_biases, dtype=bool)
    n_layers = lay.n_layers
    for layer in range(n_layers):
        sl, (rows, cols) = lay.weight_matrix_slice(layer)
        W = weff[sl].reshape(rows, cols)
        b0 = int(lay.layer_boff[layer])
        dep_pre[b0:b0 + rows] = np.any((W != 0.0) & dep_col[:cols], axis=1)
        for u in range(lay.layer_ufirst[layer], lay.layer_ufirst[layer] + lay.layer_ucount[layer]):
            d = dep_pre[lay.unit_a0[u]]
            if lay.unit_a1[u] >= 0:
                d = d or dep_pre[lay.unit_a1[u]]
            dep_col[lay.unit_col[u]] = d

    live_col = np.zeros(width, dtype=bool)
    live_pre = np.zeros(lay.n_biases, dtype=bool)
    sl, (rows, cols) = lay.weight_matrix_slice(n_layers - 1)
    live_pre[lay.bias_slice(n_layers - 1)] = True
    live_col |= np.any(weff[sl].reshape(rows, cols) != 0.0, axis=0)
    for layer in range(n_layers - 2, -1, -1):
        sl, (rows, cols) = lay.weight_matrix_slice(layer)
        W = weff[sl].reshape(rows, cols)
        for u in range(lay.layer_ufirst[layer], lay.layer_ufirst[layer] + lay.layer_ucount[layer]):
            if not live_col[lay.unit_col[u]]:
                continue
            b0 = int(lay.layer_boff[layer])
            for p in (lay.unit_a0[u], lay.unit_a1[u]):
                if p >= 0:
                    live_pre[p] = True
                    live_col[:cols] |= W[p - b0] != 0.0
    return dep_col, dep_pre, live_col, live_pre


def _constant_columns(net: Network, weff: np.ndarray) -> np.ndarray:
    """Training-time (relaxed) value of every column, evaluated at the origin.

    Only the entries of input-independent columns are meaningful.
    """
    x = np.zeros((1, net.spec.input_dim))
    _, _, YT, _ = kernels.forward_batch(x, weff, net.biases, net.alpha, *net.layout.kernel_args())
    return YT[0]


def extract_expression(net: Network, simplify: bool = True) -> Extraction:
    """Closed-form expression per output, plus the active-parameter bookkeeping.

    A weight is active when its gate is open, its consumer is live and its
    producer depends on the input.  A bias is active when it belongs to an
    output or to a pre-activation of a live, input-dependent unit.
    """
    lay = net.layout
    weff = net.weights * net.deterministic_gates()
    alpha = net.alpha
    bias = net.biases
    D = net.spec.input_dim
    dep_col, dep_pre, live_col, live_pre = _analyse(net, weff)
    const_val = _constant_columns(net, weff)
    col_expr: dict[int, ex.Expression] = {j: ex.var(j) for j in range(D)}

    def pre_expr(layer: int, p: int, extra: float = 0.0) -> ex.Expression:
        sl, (rows, cols) = lay.weight_matrix_slice(layer)
        row = weff[sl].reshape(rows, cols)[p - int(lay.layer_boff[layer])]
        offset = bias[p]
        terms = []
        for j in np.flatnonzero(row):
            if dep_col[j]:
                terms.append(ex.mul(ex.const(row[j]), col_expr[j]))
            else:
                offset += row[j] * const_val[j]
        offset += extra
        if offset != 0.0 or not terms:
            terms.append(ex.const(offset))
        return ex.sum_of(terms)

    active_weights = 0
    active_biases = 0
    weighted_counts: dict[str, int] = {}
    unit_counts: dict[str, int] = {}

    def count_weights(layer: int, p: int, kind: str):
        nonlocal active_weights
        sl, (rows, cols) = lay.weight_matrix_slice(layer)
        row = weff[sl].reshape(rows, cols)[p - int(lay.layer_boff[layer])]
        n = int(np.count_nonzero((row != 0.0) & dep_col[:cols]))
        active_weights += n
        if n:
            weighted_counts[kind] = weighted_counts.get(kind, 0) + n

    for layer in range(lay.n_layers - 1):
        for u in range(lay.layer_ufirst[layer], lay.layer_ufirst[layer] + lay.layer_ucount[layer]):
            col = lay.unit_col[u]
            if not (dep_col[col] and live_col[col]):
                continue
            kind = KIND_NAMES[lay.unit_kind[u]]
            unit_counts[kind] = unit_counts.get(kind, 0) + 1
            a0, a1 = lay.unit_a0[u], lay.unit_a1[u]
            for p in (a0, a1):
                if p >= 0:
                    count_weights(layer, p, kind)
                    active_biases += 1
            a = alpha[lay.unit_alpha[u]] if kind in SINGULAR_UNITS else 0.0
            if kind == "mul":
                col_expr[col] = ex.mul(pre_expr(layer, a0), pre_expr(layer, a1))
            elif kind == "div":
                if dep_pre[a1]:
                    col_expr[col] = ex.div(pre_expr(layer, a0), pre_expr(layer, a1, a))
                else:
                    z1 = const_val_pre(net, weff, const_val, layer, a1)
                    recip = 1.0 / (z1 + a) if z1 > 0.0 else 0.0
                    col_expr[col] = ex.mul(pre_expr(layer, a0), ex.const(recip))
            else:
                col_expr[col] = ex.unary(kind, pre_expr(layer, a0, a))

    out_layer = lay.n_layers - 1
    raw = []
    for k in range(net.spec.output_dim):
        p = int(lay.layer_boff[out_layer]) + k
        count_weights(out_layer, p, "add")
        active_biases += 1
        raw.append(pre_expr(out_layer, p))
    exprs = [simplify_expr(e) for e in raw] if simplify else list(raw)
    return Extraction(exprs, raw, active_weights, active_biases, weighted_counts, unit_counts)


def const_val_pre(net: Network, weff: np.ndarray, const_val: np.ndarray, layer: int, p: int) -> float:
    """Value of an input-independent pre-activation."""
    lay = net.layout
    sl, (rows, cols) = lay.weight_matrix_slice(layer)
    row = weff[sl].reshape(rows, cols)[p - int(lay.layer_boff[layer])]
    return float(net.biases[p] + row @ const_val[:cols])


def singular_margins(net: Network, X) -> dict[int, float]:
    """Smallest relaxed input of each live, input-dependent singular unit over ``X``."""
    weff = net.weights * net.deterministic_gates()
    dep_col, _, live_col, _ = _analyse(net, weff)
    _, cache = forward(net, X, check_finite=False)
    out = {}
    for u, z in singular_inputs(net, cache).items():
        col = net.layout.unit_col[u]
        if dep_col[col] and live_col[col]:
            out[u] = float(np.min(z))
    return out


def fidelity_gap(net: Network, extraction: Extraction, X) -> float:
    """Largest ``|forward - expression| / (1 + |forward|)`` over the rows of ``X``."""
    Y = predict(net, X)
    worst = 0.0
    for k, e in enumerate(extraction.expressions):
        v = ex.evaluate(e, X)
        worst = max(worst, float(np.max(np.abs(Y[:, k] - v) / (1.0 + np.abs(Y[:, k])))))
    return worst
