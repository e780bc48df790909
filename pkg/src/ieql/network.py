"""The equation-learner network: parameters, forward/backward passes, serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gates, kernels
from .architecture import (KIND_NAMES, SINGULAR_UNITS, ArchitectureSpec, Layout,
                           build_layout)
from .complexity import ComplexityFactors

FORMAT_NAME = "ieql-network"
FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A forward pass produced inf/NaN; the message names the first offending unit."""


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0))))


_SINGULAR_F = {
    "log": (np.log, lambda t: 1.0 / t),
    "sqrt": (np.sqrt, lambda t: 0.5 / np.sqrt(t)),
    "reciprocal": (lambda t: 1.0 / t, lambda t: -1.0 / (t * t)),
}
_PLAIN_F = {"cos": np.cos, "exp": np.exp, "square": np.square}


def relaxed_unary(kind: str, z, alpha: float = math.log(2.0)):
    """Unit function with the learnable input shift used during training.

    Singular kinds (``log``, ``sqrt`` and ``reciprocal``, the denominator of a
    division unit) return ``f(z + alpha)`` for ``z > 0`` and ``0`` otherwise.
    ``cos``, ``exp`` and ``square`` ignore ``alpha``.
    """
    z = np.asarray(z, dtype=float)
    if kind in _PLAIN_F:
        return _PLAIN_F[kind](z)
    if kind not in _SINGULAR_F:
        raise ValueError(f"unknown unit kind {kind!r}")
    if not alpha > 0:
        raise ValueError("relaxation offset must be positive")
    f = _SINGULAR_F[kind][0]
    inside = z > 0
    with np.errstate(all="ignore"):
        out = np.where(inside, f(np.where(inside, z, 1.0) + alpha), 0.0)
    return out if out.ndim else float(out)


class Network:
    """Parameters of an equation-learner network plus its fixed layout.

    All learnable values live in one flat vector ``theta`` laid out as
    ``[weights | biases | log_alpha | alpha_hat]``; the named properties are views.
    """

    def __init__(self, spec: ArchitectureSpec, theta=None, hyper: gates.GateHyper = gates.DEFAULT_HYPER,
                 seed: int | None = None):
        self.spec = spec
        self.layout: Layout = build_layout(spec)
        self.hyper = hyper
        self.seed = seed
        size = 2 * self.n_weights + self.n_biases + self.n_alpha
        if theta is None:
            theta = np.zeros(size)
        theta = np.array(theta, dtype=float)
        if theta.shape != (size,):
            raise ValueError(f"parameter vector has {theta.shape} entries, layout needs {size}")
        self.theta = theta

    # -- sizes and views --------------------------------------------------------
    @property
    def n_weights(self) -> int:
        return self.layout.n_weights

    @property
    def n_biases(self) -> int:
        return self.layout.n_biases

    @property
    def n_alpha(self) -> int:
        return self.layout.n_alpha

    @property
    def weights(self) -> np.ndarray:
        return self.theta[:self.n_weights]

    @property
    def biases(self) -> np.ndarray:
        return self.theta[self.n_weights:self.n_weights + self.n_biases]

    @property
    def log_alpha(self) -> np.ndarray:
        return self.theta[self.n_weights + self.n_biases:2 * self.n_weights + self.n_biases]

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.theta[2 * self.n_weights + self.n_biases:]

    @property
    def alpha(self) -> np.ndarray:
        return softplus(self.alpha_hat)

    @property
    def mask(self) -> np.ndarray:
        return self.layout.mask

    def layer_weights(self, layer: int) -> np.ndarray:
        sl, shape = self.layout.weight_matrix_slice(layer)
        return self.weights[sl].reshape(shape)

    def layer_biases(self, layer: int) -> np.ndarray:
        return self.biases[self.layout.bias_slice(layer)]

    def parameter_count(self) -> int:
        """Unmasked weights plus biases (gate and relaxation parameters excluded)."""
        return int(self.mask.sum()) + self.n_biases

    def learnable_count(self) -> int:
        """Every trainable scalar: weights, biases, one gate per weight, relaxation offsets."""
        return 2 * int(self.mask.sum()) + self.n_biases + self.n_alpha

    def copy(self) -> Network:
        return Network(self.spec, self.theta.copy(), self.hyper, self.seed)

    # -- gates --------------------------------------------------------------------
    def deterministic_gates(self) -> np.ndarray:
        return gates.deterministic_gate(self.log_alpha, self.hyper) * self.mask

    def sample_gates(self, u) -> tuple[np.ndarray, np.ndarray]:
        z, dz = gates.sample_gate(self.log_alpha, u, self.hyper)
        return z * self.mask, dz * self.mask

    def weight_costs(self, factors: ComplexityFactors) -> np.ndarray:
        kinds = [KIND_NAMES[k] for k in np.unique(self.layout.weight_kind[self.mask > 0])]
        factors.check_covers(kinds)
        table = np.array([factors.get(name, 1.0) for name in KIND_NAMES])
        return table[self.layout.weight_kind]

    # -- serialization --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "hyper": {"zeta": self.hyper.zeta, "gamma": self.hyper.gamma, "beta": self.hyper.beta},
            "seed": self.seed,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "log_alpha": self.log_alpha.tolist(),
            "alpha_hat": self.alpha_hat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Network:
        if d.get("format") != FORMAT_NAME:
            raise ValueError("not a serialized ieql network")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {d.get('version')}")
        theta = np.concatenate([np.asarray(d[k], dtype=float)
                                for k in ("weights", "biases", "log_alpha", "alpha_hat")])
        return cls(ArchitectureSpec.from_dict(d["spec"]), theta, gates.GateHyper(**d["hyper"]), d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> Network:
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_network(spec: ArchitectureSpec, seed: int, initial_dropout: float = 0.5,
                  gate_noise_std: float = 0.01, hyper: gates.GateHyper = gates.DEFAULT_HYPER) -> Network:
    """Freshly initialised network.

    Weights are drawn uniformly from +-sqrt(6 / (fan_in + fan_out)) per layer,
    biases start at zero, gates start at the given dropout rate and every
    relaxation offset starts at softplus(0) = ln 2.  Prohibited connections are
    zero and stay zero.
    """
    net = Network(spec, hyper=hyper, seed=seed)
    rng = np.random.default_rng(seed)
    lay = net.layout
    for layer in range(lay.n_layers):
        sl, (rows, cols) = lay.weight_matrix_slice(layer)
        limit = math.sqrt(6.0 / (rows + cols))
        net.weights[sl] = rng.uniform(-limit, limit, size=rows * cols)
    net.weights[:] *= lay.mask
    net.log_alpha[:] = gates.init_log_alpha(initial_dropout, size=net.n_weights,
                                            noise_std=gate_noise_std, rng=rng)
    return net


@dataclass
class ForwardCache:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray            # hidden pre-activations, one column per bias
    YT: np.ndarray           # concatenated inputs and unit outputs
    violations: np.ndarray   # per-datum summed domain hinge
    gate: np.ndarray
    dgate: np.ndarray
    alpha: np.ndarray
    mode: str


def _gate_noise(rng: np.random.Generator, shape) -> np.ndarray:
    return np.clip(rng.random(shape), 1e-16, 1.0 - 1e-16)


def forward(net: Network, X, mode: str = "deterministic", rng: np.random.Generator | None = None,
            u=None, check_finite: bool = True) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on the rows of ``X``.

    ``mode="stochastic"`` samples one gate value per weight from noise ``u``
    (or from ``rng``); ``mode="deterministic"`` uses the test-time gate estimate.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    if X.shape[1] != net.spec.input_dim:
        raise ValueError(f"expected {net.spec.input_dim} input columns, got {X.shape[1]}")
    if mode == "deterministic":
        gate = net.deterministic_gates()
        dgate = np.zeros_like(gate)
    elif mode == "stochastic":
        if u is None:
            if rng is None:
                raise ValueError("stochastic mode needs gate noise u or an rng")
            u = _gate_noise(rng, net.n_weights)
        gate, dgate = net.sample_gates(u)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    weff = net.weights * gate
    alpha = net.alpha
    Y, Z, YT, V = kernels.forward_batch(X, weff, net.biases, alpha, *net.layout.kernel_args())
    cache = ForwardCache(X, Y, Z, YT, V, gate, dgate, alpha, mode)
    if check_finite and not np.all(np.isfinite(Y)):
        raise NonFiniteError(_locate_non_finite(net, cache))
    return Y, cache


def _locate_non_finite(net: Network, cache: ForwardCache) -> str:
    lay = net.layout
    bad_cols = ~np.all(np.isfinite(cache.YT), axis=0)
    for col in np.flatnonzero(bad_cols):
        u = lay.col_unit[col]
        if u >= 0:
            row = int(np.flatnonzero(~np.isfinite(cache.YT[:, col]))[0])
            return (f"non-finite output of unit {u} ({KIND_NAMES[lay.unit_kind[u]]}) in hidden layer "
                    f"{lay.unit_layer[u] + 1} at datum {row}")
    row = int(np.flatnonzero(~np.all(np.isfinite(cache.Y), axis=1))[0])
    return f"non-finite network output at datum {row}"


def domain_penalty(cache: ForwardCache) -> float:
    """Mean over data of the summed hinge ``max(0, -z)`` of all singular-unit inputs."""
    if len(cache.violations) == 0:
        return 0.0
    return float(np.mean(cache.violations))


def singular_inputs(net: Network, cache: ForwardCache) -> dict[int, np.ndarray]:
    """Per singular unit, the pre-activation that is relaxed (the denominator for division)."""
    lay = net.layout
    out = {}
    for u in range(lay.n_units):
        kind = KIND_NAMES[lay.unit_kind[u]]
        if kind in SINGULAR_UNITS:
            idx = lay.unit_a1[u] if kind == "div" else lay.unit_a0[u]
            out[u] = cache.Z[:, idx]
    return out


@dataclass
class Gradients:
    weights: np.ndarray
    biases: np.ndarray
    log_alpha: np.ndarray
    alpha_hat: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights, self.biases, self.log_alpha, self.alpha_hat])


def backward(net: Network, cache: ForwardCache, dY, delta: float = 0.0, lam: float = 0.0,
             factors: ComplexityFactors | None = None) -> Gradients:
    """Gradients of ``L(Y) + delta * L_su + lam * L_C`` given ``dY = dL/dY``.

    ``L_su`` is the mean domain hinge of the cached pass and ``L_C`` the
    cost-weighted expected number of open gates.
    """
    dY = np.ascontiguousarray(dY, dtype=float)
    if dY.shape != cache.Y.shape:
        raise ValueError(f"dY has shape {dY.shape}, expected {cache.Y.shape}")
    n = max(cache.X.shape[0], 1)
    weff = net.weights * cache.gate
    gw, gb, ga = kernels.backward_batch(cache.YT, cache.Z, dY, weff, cache.alpha, delta / n, net.n_biases,
                                        *net.layout.kernel_args())
    mask = net.mask
    g_weights = gw * cache.gate * mask
    g_log_alpha = gw * net.weights * cache.dgate * mask
    if lam != 0.0:
        costs = net.weight_costs(factors or ComplexityFactors.profile("plain"))
        g_log_alpha = g_log_alpha + lam * costs * gates.expected_l0_grad(net.log_alpha, net.hyper) * mask
    g_alpha_hat = ga * gates.sigmoid(net.alpha_hat) if net.n_alpha else ga
    return Gradients(g_weights, gb, g_log_alpha, np.asarray(g_alpha_hat, dtype=float))


def predict(net: Network, X) -> np.ndarray:
    """Deterministic forward pass without building a cache."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    weff = net.weights * net.deterministic_gates()
    return kernels.predict_batch(X, weff, net.biases, net.alpha, *net.layout.kernel_args())


def weighted_gate_counts(net: Network, mode: str = "expected") -> dict[str, float]:
    """Per consumer unit kind, the expected number of open gates (``mode="expected"``)
    or the number of gates whose deterministic estimate is non-zero (``mode="deterministic"``).

    Output-layer connections count towards ``"add"``.
    """
    mask = net.mask > 0
    if mode == "expected":
        values = gates.expected_l0(net.log_alpha, net.hyper)
    elif mode == "deterministic":
        values = (net.deterministic_gates() > 0).astype(float)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out: dict[str, float] = {}
    for code in np.unique(net.layout.weight_kind[mask]):
        sel = mask & (net.layout.weight_kind == code)
        out[KIND_NAMES[code]] = float(values[sel].sum())
    return out
