"""Compiled forward/backward passes over a flattened network layout.

The kernels take the layout index arrays from :class:`ieql.architecture.Layout`
(``li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol``) and walk the network
one datum at a time, so memory stays flat and a whole training epoch runs
inside a single compiled call.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .architecture import COS, DIV, EXP, LOG, MUL, SQRT, SQUARE

# fastmath is deliberately off: results must be bit-reproducible and the
# singular-unit branches rely on IEEE comparisons.
_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(**_JIT)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(**_JIT)
def forward_rows(X, rows, weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                 YT, Z, OUT, V):
    """Forward pass for the rows ``X[rows]``.

    Row ``r`` of ``YT`` (inputs and unit outputs), ``Z`` (hidden
    pre-activations) and ``OUT`` receives the results for datum ``rows[r]``;
    ``V[r]`` gets its summed domain-penalty hinge.  The data loop lives inside
    the kernel so that array arguments are passed once per batch.
    """
    n_layers = li.shape[0]
    d = X.shape[1]
    for r in range(rows.shape[0]):
        i = rows[r]
        for j in range(d):
            YT[r, j] = X[i, j]
        viol = 0.0
        for l in range(n_layers - 1):
            nin = li[l]
            off = lwo[l]
            b0 = lbo[l]
            for p in range(lnp[l]):
                acc = bias[b0 + p]
                row = off + p * nin
                for j in range(nin):
                    acc += weff[row + j] * YT[r, j]
                Z[r, b0 + p] = acc
            for u in range(luf[l], luf[l] + luc[l]):
                k = uk[u]
                za = Z[r, ua0[u]]
                if k == COS:
                    v = math.cos(za)
                elif k == EXP:
                    v = math.exp(za)
                elif k == LOG:
                    if za > 0.0:
                        v = math.log(za + alpha[ual[u]])
                    else:
                        v = 0.0
                        viol -= za
                elif k == SQRT:
                    if za > 0.0:
                        v = math.sqrt(za + alpha[ual[u]])
                    else:
                        v = 0.0
                        viol -= za
                elif k == SQUARE:
                    v = za * za
                elif k == MUL:
                    v = za * Z[r, ua1[u]]
                else:
                    zb = Z[r, ua1[u]]
                    if zb > 0.0:
                        v = za / (zb + alpha[ual[u]])
                    else:
                        v = 0.0
                        viol -= zb
                YT[r, ucol[u]] = v
        l = n_layers - 1
        nin = li[l]
        off = lwo[l]
        b0 = lbo[l]
        for k in range(lnp[l]):
            acc = bias[b0 + k]
            row = off + k * nin
            for j in range(nin):
                acc += weff[row + j] * YT[r, j]
            OUT[r, k] = acc
        V[r] = viol


@njit(**_JIT)
def backward_rows(YT, Z, DOUT, nrows, weff, alpha, pen, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                  gw, gb, ga, dyt, dz):
    """Accumulate gradients over the first ``nrows`` rows of a forward pass.

    ``DOUT`` holds dL/d(output); ``pen`` is the weight of the domain hinge,
    which contributes -pen to dL/dz for every singular input at or below zero.
    ``ga`` receives gradients with respect to the relaxation offsets alpha.
    """
    n_layers = li.shape[0]
    width = li[n_layers - 1]
    for r in range(nrows):
        for j in range(width):
            dyt[j] = 0.0
        l = n_layers - 1
        nin = li[l]
        off = lwo[l]
        b0 = lbo[l]
        for k in range(lnp[l]):
            g = DOUT[r, k]
            gb[b0 + k] += g
            if g != 0.0:
                row = off + k * nin
                for j in range(nin):
                    gw[row + j] += g * YT[r, j]
                    dyt[j] += weff[row + j] * g
        for l in range(n_layers - 2, -1, -1):
            b0 = lbo[l]
            for p in range(lnp[l]):
                dz[b0 + p] = 0.0
            for u in range(luf[l], luf[l] + luc[l]):
                k = uk[u]
                g = dyt[ucol[u]]
                a0 = ua0[u]
                za = Z[r, a0]
                if k == COS:
                    dz[a0] -= math.sin(za) * g
                elif k == EXP:
                    dz[a0] += YT[r, ucol[u]] * g
                elif k == LOG:
                    if za > 0.0:
                        d = g / (za + alpha[ual[u]])
                        dz[a0] += d
                        ga[ual[u]] += d
                    else:
                        dz[a0] -= pen
                elif k == SQRT:
                    if za > 0.0:
                        d = 0.5 * g / YT[r, ucol[u]]
                        dz[a0] += d
                        ga[ual[u]] += d
                    else:
                        dz[a0] -= pen
                elif k == SQUARE:
                    dz[a0] += 2.0 * za * g
                elif k == MUL:
                    a1 = ua1[u]
                    dz[a0] += Z[r, a1] * g
                    dz[a1] += za * g
                else:
                    a1 = ua1[u]
                    zb = Z[r, a1]
                    if zb > 0.0:
                        q = 1.0 / (zb + alpha[ual[u]])
                        dz[a0] += q * g
                        d = -za * q * q * g
                        dz[a1] += d
                        ga[ual[u]] += d
                    else:
                        dz[a1] -= pen
            nin = li[l]
            off = lwo[l]
            for p in range(lnp[l]):
                g = dz[b0 + p]
                gb[b0 + p] += g
                if g != 0.0:
                    row = off + p * nin
                    for j in range(nin):
                        gw[row + j] += g * YT[r, j]
                        dyt[j] += weff[row + j] * g


@njit(**_JIT)
def forward_batch(X, weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol):
    n = X.shape[0]
    n_layers = li.shape[0]
    Y = np.empty((n, lnp[n_layers - 1]))
    Z = np.empty((n, lbo[n_layers - 1]))
    YT = np.empty((n, li[n_layers - 1]))
    V = np.empty(n)
    forward_rows(X, np.arange(n), weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                 YT, Z, Y, V)
    return Y, Z, YT, V


@njit(**_JIT)
def predict_batch(X, weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol):
    """Network outputs only, computed in chunks so memory stays bounded."""
    n = X.shape[0]
    n_layers = li.shape[0]
    chunk = 1024
    Y = np.empty((n, lnp[n_layers - 1]))
    Z = np.empty((chunk, lbo[n_layers - 1]))
    YT = np.empty((chunk, li[n_layers - 1]))
    V = np.empty(chunk)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        forward_rows(X, np.arange(start, stop), weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1,
                     ual, ucol, YT, Z, Y[start:stop], V)
    return Y


@njit(**_JIT)
def backward_batch(YT, Z, dY, weff, alpha, pen, n_bias, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol):
    gw = np.zeros(weff.shape[0])
    gb = np.zeros(n_bias)
    ga = np.zeros(alpha.shape[0])
    dyt = np.empty(YT.shape[1])
    dz = np.empty(Z.shape[1])
    backward_rows(YT, Z, dY, YT.shape[0], weff, alpha, pen, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                  gw, gb, ga, dyt, dz)
    return gw, gb, ga


@njit(**_JIT)
def adam_update(theta, g, m, v, t, lr, b1, b2, eps):
    """In-place bias-corrected Adam step number ``t`` (1-based)."""
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(theta.shape[0]):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        theta[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


@njit(**_JIT)
def _sample_gates(la, mask, w, noise_row, zeta, gamma, beta, gate, dgate, weff):
    span = zeta - gamma
    for j in range(la.shape[0]):
        if mask[j] == 0.0:
            gate[j] = 0.0
            dgate[j] = 0.0
            weff[j] = 0.0
            continue
        u = noise_row[j]
        s = _sigmoid((math.log(u) - math.log1p(-u) + la[j]) / beta)
        sb = s * span + gamma
        if sb <= 0.0:
            gate[j] = 0.0
            dgate[j] = 0.0
        elif sb >= 1.0:
            gate[j] = 1.0
            dgate[j] = 0.0
        else:
            gate[j] = sb
            dgate[j] = span * s * (1.0 - s) / beta
        weff[j] = w[j] * gate[j]


@njit(**_JIT)
def _assemble_grad(theta, gw, gb, ga, gate, dgate, mask, costs_w, lam, l0_shift, n_w, n_b, grad):
    """Map (effective-weight, bias, alpha) gradients onto the flat parameter vector.

    Returns False when any entry is non-finite.
    """
    la0 = n_w + n_b
    ah0 = 2 * n_w + n_b
    ok = True
    for j in range(n_w):
        if mask[j] == 0.0:
            grad[j] = 0.0
            grad[la0 + j] = 0.0
            continue
        grad[j] = gw[j] * gate[j]
        gl = gw[j] * theta[j] * dgate[j]
        if lam != 0.0:
            p = _sigmoid(theta[la0 + j] - l0_shift)
            gl += lam * costs_w[j] * p * (1.0 - p)
        grad[la0 + j] = gl
        if not (math.isfinite(grad[j]) and math.isfinite(gl)):
            ok = False
    for i in range(n_b):
        grad[n_w + i] = gb[i]
        if not math.isfinite(gb[i]):
            ok = False
    for a in range(ga.shape[0]):
        grad[ah0 + a] = ga[a] * _sigmoid(theta[ah0 + a])
        if not math.isfinite(grad[ah0 + a]):
            ok = False
    return ok


@njit(**_JIT)
def train_epoch(theta, m, v, step, X, Y, order, batch, noise, Xpen, lam, delta, bound,
                costs_w, mask, n_w, n_b, zeta, gamma, beta, lr, b1, b2, eps, la_limit,
                li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol):
    """One data epoch of minibatch Adam followed by one penalty step.

    ``noise`` has one row of gate noise per minibatch plus a final row for the
    penalty step.  Returns ``(mean L_D, mean L_su, L_bound, skipped, step)``.
    """
    n_layers = li.shape[0]
    n_out = lnp[n_layers - 1]
    n_a = theta.shape[0] - 2 * n_w - n_b
    w = theta[:n_w]
    bias = theta[n_w:n_w + n_b]
    la = theta[n_w + n_b:2 * n_w + n_b]
    ah = theta[2 * n_w + n_b:]
    l0_shift = beta * math.log(-gamma / zeta)

    gate = np.empty(n_w)
    dgate = np.empty(n_w)
    weff = np.empty(n_w)
    alpha = np.empty(n_a)
    gw = np.empty(n_w)
    gb = np.empty(n_b)
    ga = np.empty(n_a)
    grad = np.empty(theta.shape[0])
    cap = max(batch, Xpen.shape[0])
    YT = np.empty((cap, li[n_layers - 1]))
    Z = np.empty((cap, lbo[n_layers - 1]))
    OUT = np.empty((cap, n_out))
    DOUT = np.empty((cap, n_out))
    V = np.empty(cap)
    dyt = np.empty(li[n_layers - 1])
    dz = np.empty(lbo[n_layers - 1])
    pen_rows = np.arange(Xpen.shape[0])

    n = order.shape[0]
    n_batches = (n + batch - 1) // batch
    sum_ld = 0.0
    sum_lsu = 0.0
    counted = 0
    skipped = 0
    lb = 0.0
    for s in range(n_batches + 1):
        penalty = s == n_batches
        _sample_gates(la, mask, w, noise[s], zeta, gamma, beta, gate, dgate, weff)
        for a in range(n_a):
            alpha[a] = _softplus(ah[a])
        gw[:] = 0.0
        gb[:] = 0.0
        ga[:] = 0.0
        ld = 0.0
        lsu = 0.0
        if penalty:
            nb = Xpen.shape[0]
            forward_rows(Xpen, pen_rows, weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                         YT, Z, OUT, V)
            lb = 0.0
            for r in range(nb):
                lsu += V[r]
                for k in range(n_out):
                    excess = abs(OUT[r, k]) - bound
                    if excess > 0.0:
                        lb += excess
                        DOUT[r, k] = delta / nb if OUT[r, k] > 0 else -delta / nb
                    else:
                        DOUT[r, k] = 0.0
            lsu /= nb
            lb /= nb
            lam_step = 0.0
        else:
            start = s * batch
            stop = min(n, start + batch)
            nb = stop - start
            rows = order[start:stop]
            forward_rows(X, rows, weff, bias, alpha, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual, ucol,
                         YT, Z, OUT, V)
            for r in range(nb):
                lsu += V[r]
                i = rows[r]
                for k in range(n_out):
                    e = OUT[r, k] - Y[i, k]
                    ld += e * e
                    DOUT[r, k] = 2.0 * e / nb
            ld /= nb
            lsu /= nb
            lam_step = lam
        backward_rows(YT, Z, DOUT, nb, weff, alpha, delta / nb, li, lnp, lwo, lbo, luf, luc, uk, ua0, ua1, ual,
                      ucol, gw, gb, ga, dyt, dz)
        ok = math.isfinite(ld) and math.isfinite(lsu) and math.isfinite(lb)
        if ok:
            ok = _assemble_grad(theta, gw, gb, ga, gate, dgate, mask, costs_w, lam_step, l0_shift,
                                n_w, n_b, grad)
        if not ok:
            skipped += 1
            continue
        step += 1
        adam_update(theta, grad, m, v, step, lr, b1, b2, eps)
        for j in range(n_w):
            if la[j] > la_limit:
                la[j] = la_limit
            elif la[j] < -la_limit:
                la[j] = -la_limit
        if not penalty:
            sum_ld += ld
            sum_lsu += lsu
            counted += 1
    mean_ld = sum_ld / counted if counted > 0 else math.nan
    mean_lsu = sum_lsu / counted if counted > 0 else math.nan
    return mean_ld, mean_lsu, lb, skipped, step
