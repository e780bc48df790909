"""Finite-difference verification of the analytic network gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gates
from .architecture import ArchitectureSpec
from .complexity import ComplexityFactors
from .network import Network, backward, build_network, domain_penalty, forward, singular_inputs

# keep every kink (singular boundary, gate clamp) this far from the evaluation point
_KINK_MARGIN = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    n_params: int
    n_violations: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def all_kinds_spec(input_dim: int = 2, hidden_layers: int = 2) -> ArchitectureSpec:
    """Every unit kind once per layer and no prohibitions, so every path is exercised."""
    return ArchitectureSpec(input_dim, 1, hidden_layers,
                            unary=[(k, 1) for k in ("cos", "exp", "log", "sqrt", "square")],
                            binary=[("mul", 1), ("div", 1)], prohibited=[])


def _stretched(net: Network, u):
    h = net.hyper
    s = gates.sigmoid((np.log(u) - np.log1p(-u) + net.log_alpha) / h.beta)
    return s * (h.zeta - h.gamma) + h.gamma


def _scenario(net: Network, rng: np.random.Generator, n_points: int, tries: int = 200):
    """Random parameters, inputs and gate noise away from every kink, with
    singular units seeing both in-domain and out-of-domain inputs."""
    for _ in range(tries):
        net.biases[:] = rng.normal(0.0, 0.5, net.n_biases)
        net.log_alpha[:] = rng.normal(0.0, 1.0, net.n_weights)
        net.alpha_hat[:] = rng.normal(0.0, 0.5, net.n_alpha)
        X = rng.uniform(-1.0, 1.0, (n_points, net.spec.input_dim))
        u = rng.uniform(0.05, 0.95, net.n_weights)
        for _ in range(50):
            s = _stretched(net, u)
            near = (np.abs(s) < _KINK_MARGIN) | (np.abs(s - 1.0) < _KINK_MARGIN)
            if not near.any():
                break
            u[near] = rng.uniform(0.05, 0.95, int(near.sum()))
        _, cache = forward(net, X, "stochastic", u=u, check_finite=False)
        z = [v for v in singular_inputs(net, cache).values()]
        if z:
            z = np.concatenate([v.ravel() for v in z])
            if np.min(np.abs(z)) < _KINK_MARGIN or not (np.any(z < 0) and np.any(z > 0)):
                continue
        if not np.all(np.isfinite(cache.Y)):
            continue
        return X, u
    raise RuntimeError("could not find a kink-free configuration; try another seed")


def check_gradients(spec: ArchitectureSpec | None = None, seed: int = 0, n_points: int = 7,
                    step: float = 1e-5, delta: float = 0.7, lam: float = 0.3,
                    factors: ComplexityFactors | None = None, tolerance: float = 1e-4,
                    fault: Callable[[np.ndarray], np.ndarray] | None = None) -> GradCheckReport:
    """Compare backward() with central differences of
    ``sum(Y * R) + delta * L_su + lam * L_C`` under fixed gate noise.

    ``fault`` may alter the analytic gradient before comparison; it exists so
    tests can confirm that a wrong gradient is caught.
    """
    spec = spec or all_kinds_spec()
    factors = factors or ComplexityFactors.profile("motor")
    rng = np.random.default_rng(seed)
    net = build_network(spec, seed)
    X, u = _scenario(net, rng, n_points)
    R = rng.normal(size=(n_points, spec.output_dim))
    costs = net.weight_costs(factors) * net.mask

    def smooth_part(theta):
        trial = net.copy()
        trial.theta[:] = theta
        Y, cache = forward(trial, X, "stochastic", u=u, check_finite=False)
        return float(np.sum(Y * R) + delta * domain_penalty(cache))

    _, cache = forward(net, X, "stochastic", u=u, check_finite=False)
    analytic = backward(net, cache, R, delta, lam, factors).flat
    if fault is not None:
        analytic = fault(analytic.copy())
    numeric = np.zeros_like(analytic)
    free = np.ones(analytic.size, dtype=bool)
    free[:net.n_weights] = net.mask > 0
    la0 = net.n_weights + net.n_biases
    free[la0:la0 + net.n_weights] = net.mask > 0
    theta = net.theta.copy()
    for i in np.flatnonzero(free):
        e = np.zeros_like(theta)
        e[i] = step
        numeric[i] = (smooth_part(theta + e) - smooth_part(theta - e)) / (2.0 * step)
    # the complexity term is a sum over gates, so it is differenced per entry;
    # summing it over thousands of gates first would swamp the difference in round-off
    la = net.log_alpha
    numeric[la0:la0 + net.n_weights] += lam * costs * (
        gates.expected_l0(la + step, net.hyper) - gates.expected_l0(la - step, net.hyper)) / (2.0 * step)
    rel = relative_error(analytic, numeric)
    worst = int(np.argmax(rel))
    return GradCheckReport(float(rel[worst]), worst, int(free.sum()), int(cache.violations.sum()), tolerance)
