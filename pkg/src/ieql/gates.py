"""Hard-concrete gates for differentiable L0 sparsity.

Every gated weight carries a location parameter ``log_alpha``.  During
training a gate value is drawn by pushing uniform noise through a stretched,
clamped binary-concrete transform; at evaluation time the deterministic
estimate :func:`deterministic_gate` is used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_ALPHA_LIMIT = 30.0


@dataclass(frozen=True)
class GateHyper:
    zeta: float = 1.1
    gamma: float = -0.1
    beta: float = 2.0 / 3.0

    def __post_init__(self):
        if not (self.gamma < 0.0 < 1.0 < self.zeta):
            raise ValueError("gate stretch must satisfy gamma < 0 < 1 < zeta")
        if not self.beta > 0.0:
            raise ValueError("gate temperature beta must be positive")

    @property
    def l0_shift(self) -> float:
        """``beta * log(-gamma / zeta)``, the offset inside the expected-L0 sigmoid."""
        return self.beta * math.log(-self.gamma / self.zeta)


DEFAULT_HYPER = GateHyper()


def sigmoid(x):
    """Overflow-free logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sample_gate(log_alpha, u, h: GateHyper = DEFAULT_HYPER):
    """Draw gate values for uniform noise ``u`` in (0, 1).

    Returns ``(z, dz_dlog_alpha)``.  The derivative is the pathwise one and is
    zero wherever the stretched sample is clamped to 0 or 1.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("gate noise u must lie strictly inside (0, 1)")
    log_alpha = np.asarray(log_alpha, dtype=float)
    s = sigmoid((np.log(u) - np.log1p(-u) + log_alpha) / h.beta)
    s_bar = s * (h.zeta - h.gamma) + h.gamma
    z = np.clip(s_bar, 0.0, 1.0)
    inside = (s_bar > 0.0) & (s_bar < 1.0)
    dz = np.where(inside, (h.zeta - h.gamma) * s * (1.0 - s) / h.beta, 0.0)
    return z, dz


def expected_l0(log_alpha, h: GateHyper = DEFAULT_HYPER):
    """Probability that a gate is non-zero, ``1 - Q(s_bar <= 0)``."""
    return sigmoid(np.asarray(log_alpha, dtype=float) - h.l0_shift)


def expected_l0_grad(log_alpha, h: GateHyper = DEFAULT_HYPER):
    p = expected_l0(log_alpha, h)
    return p * (1.0 - p)


def deterministic_gate(log_alpha, h: GateHyper = DEFAULT_HYPER):
    """Test-time gate estimate; a value of exactly 0 marks the weight as pruned."""
    s = sigmoid(log_alpha)
    return np.clip(s * (h.zeta - h.gamma) + h.gamma, 0.0, 1.0)


def init_log_alpha(initial_dropout: float, size=None, noise_std: float = 0.01,
                   rng: np.random.Generator | None = None):
    """Location parameter matching a dropout rate, ``log((1 - d) / d)``.

    Gaussian noise with ``noise_std`` is added only when an ``rng`` is given
    (it breaks the symmetry between otherwise identical gates).
    """
    if not 0.0 < initial_dropout < 1.0:
        raise ValueError("initial dropout must lie strictly inside (0, 1)")
    center = math.log((1.0 - initial_dropout) / initial_dropout)
    if size is None and rng is None:
        return center
    out = np.full(size if size is not None else (), center, dtype=float)
    if rng is not None and noise_std > 0:
        out = out + rng.normal(0.0, noise_std, size=out.shape)
    return out


def clamp_log_alpha(log_alpha):
    return np.clip(log_alpha, -LOG_ALPHA_LIMIT, LOG_ALPHA_LIMIT)
