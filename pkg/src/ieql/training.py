"""Loss assembly, Adam, penalty epochs, the two-phase schedule and the lambda sweep."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gates, kernels
from .architecture import ArchitectureSpec
from .complexity import ComplexityFactors, complexity_score
from .data import Dataset, rmse, sample_penalty_inputs
from .extract import extract_expression
from .mlp import MLPConfig, train_mlp_baseline  # noqa: F401
from .network import Network, backward, build_network, domain_penalty, forward, predict
from .selection import Candidate

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

NOISE_CLIP = 1e-16


class NumericalFailure(RuntimeError):
    """Training produced too many non-finite minibatch updates."""


@dataclass(frozen=True)
class TrainConfig:
    t1: int = 2000
    t2: int = 10000
    lr: float = 1e-3
    adam_beta1: float = 0.4
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0
    delta: float = 1.0
    bound: float = 10.0
    penalty_points: int = 100
    batch_size: int = 128
    seed: int = 0
    initial_dropout: float = 0.5
    gate_noise_std: float = 0.01
    max_skip_fraction: float = 0.01
    output_bias_init: str = "mean"      # "mean" of the training targets or "zero"

    def __post_init__(self):
        if self.t1 < 0 or self.t2 < 0:
            raise ValueError("epoch counts must be non-negative")
        for name in ("lr", "adam_eps", "bound", "penalty_points", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0 or self.delta < 0:
            raise ValueError("lam and delta must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam moment rates must lie in [0, 1)")
        if self.output_bias_init not in ("mean", "zero"):
            raise ValueError("output_bias_init must be 'mean' or 'zero'")

    @classmethod
    def profile(cls, name: str, **overrides) -> TrainConfig:
        """``paper`` keeps the full schedule, ``desk`` shortens it to 500 + 2000 epochs."""
        if name == "paper":
            return cls(**overrides)
        if name == "desk":
            return cls(**{"t1": 500, "t2": 2000, **overrides})
        raise ValueError(f"unknown profile {name!r}; choose 'desk' or 'paper'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training option(s) {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        path = Path(path)
        text = path.read_text()
        d = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        profile = d.pop("profile", None)
        return cls.profile(profile, **d) if profile else cls.from_dict(d)


def lambda_grid(steps: int = 78, low: float = -5.0, high: float = 0.0) -> np.ndarray:
    """``10**k`` for ``steps`` equally spaced exponents ``k`` in ``[low, high]``."""
    if steps < 1:
        raise ValueError("the grid needs at least one value")
    return 10.0 ** np.linspace(low, high, steps)


DESK_GRID_STEPS = 12


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, config: TrainConfig = TrainConfig()
              ) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; returns new parameters and a new state."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and state shapes must match")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return params - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps), AdamState(m, v, t)


# -- losses -----------------------------------------------------------------------

def complexity_loss(net: Network, factors: ComplexityFactors) -> float:
    """Cost-weighted expected number of open gates."""
    p = gates.expected_l0(net.log_alpha, net.hyper)
    return float(np.sum(net.weight_costs(factors) * p * net.mask))


def total_loss(net: Network, X, Y, lam: float, delta: float, factors: ComplexityFactors | None = None,
               mode: str = "deterministic", u=None, rng=None, with_grad: bool = False):
    """``L_D + delta * L_su + lam * L_C`` on one batch.

    Returns ``(total, components)``, plus the flat gradient when ``with_grad``.
    """
    factors = factors or ComplexityFactors.profile("plain")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty batch")
    pred, cache = forward(net, X, mode, rng=rng, u=u)
    resid = pred - Y
    parts = {"L_D": float(np.mean(np.sum(resid ** 2, axis=1))),
             "L_su": domain_penalty(cache),
             "L_C": complexity_loss(net, factors)}
    total = parts["L_D"] + delta * parts["L_su"] + lam * parts["L_C"]
    if not with_grad:
        return total, parts
    grads = backward(net, cache, 2.0 * resid / len(X), delta, lam, factors)
    return total, parts, grads.flat


def penalty_loss(net: Network, X_penalty, delta: float, bound: float, mode: str = "stochastic", u=None, rng=None):
    """``delta * (L_su + L_bound)`` on unlabelled points, with its gradient."""
    X_penalty = np.atleast_2d(np.asarray(X_penalty, dtype=float))
    if X_penalty.size == 0:
        raise ValueError("penalty epoch needs at least one point")
    n = len(X_penalty)
    pred, cache = forward(net, X_penalty, mode, rng=rng, u=u)
    excess = np.abs(pred) - bound
    l_bound = float(np.sum(np.maximum(excess, 0.0)) / n)
    l_su = domain_penalty(cache)
    dY = np.where(excess > 0, np.sign(pred), 0.0) * delta / n
    grads = backward(net, cache, dY, delta, 0.0)
    return delta * (l_su + l_bound), {"L_su": l_su, "L_bound": l_bound}, grads.flat


def penalty_epoch(net: Network, X_penalty, delta: float, bound: float, state: AdamState,
                  config: TrainConfig = TrainConfig(), u=None, rng=None) -> tuple[float, dict]:
    """One Adam step on the domain and bound penalties of unlabelled points (in place)."""
    loss, parts, g = penalty_loss(net, X_penalty, delta, bound, "stochastic", u=u, rng=rng)
    new, new_state = adam_step(net.theta, g, state, config)
    net.theta[:] = new
    net.log_alpha[:] = gates.clamp_log_alpha(net.log_alpha)
    state.m, state.v, state.step = new_state.m, new_state.v, new_state.step
    return loss, parts


# -- training loop ------------------------------------------------------------------

TRACE_COLUMNS = ("epoch", "L_D", "L_C", "L_su", "L_bound", "val_RMSE")


@dataclass
class TrainTrace:
    epoch: list = field(default_factory=list)
    L_D: list = field(default_factory=list)
    L_C: list = field(default_factory=list)
    L_su: list = field(default_factory=list)
    L_bound: list = field(default_factory=list)
    val_RMSE: list = field(default_factory=list)
    skipped: int = 0
    steps: int = 0
    wall_clock: float = 0.0

    def __len__(self) -> int:
        return len(self.epoch)

    def append(self, **row) -> None:
        for key in TRACE_COLUMNS:
            getattr(self, key).append(row[key])

    def rows(self):
        return zip(*(getattr(self, k) for k in TRACE_COLUMNS))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def train(net: Network, dataset: Dataset, config: TrainConfig, factors: ComplexityFactors | None = None,
          trace_every: int = 1, on_epoch=None) -> tuple[Network, TrainTrace]:
    """Two-phase training of ``net`` in place.

    Phase one runs ``t1`` epochs without the complexity term, phase two ``t2``
    epochs with ``config.lam``.  Every epoch is followed by one penalty step on
    ``penalty_points`` fresh samples from the test box.  All randomness comes
    from ``config.seed``.
    """
    factors = factors or ComplexityFactors.profile("plain")
    X, Y = dataset.part("train")
    Xv, Yv = dataset.part("validation")
    if len(X) == 0:
        raise ValueError("dataset has no training rows")
    if X.shape[1] != net.spec.input_dim or Y.shape[1] != net.spec.output_dim:
        raise ValueError("dataset shape does not match the network")
    X = np.ascontiguousarray(X)
    Y = np.ascontiguousarray(Y)
    costs_w = np.ascontiguousarray(net.weight_costs(factors))
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(net.theta.size)
    trace = TrainTrace()
    lay_args = net.layout.kernel_args()
    h = net.hyper
    n = len(X)
    n_batches = -(-n // config.batch_size)
    epochs = config.t1 + config.t2
    skip_budget = config.max_skip_fraction * epochs * (n_batches + 1)
    start = time.perf_counter()
    for epoch in range(epochs):
        lam = 0.0 if epoch < config.t1 else config.lam
        order = rng.permutation(n)
        noise = np.clip(rng.random((n_batches + 1, net.n_weights)), NOISE_CLIP, 1.0 - NOISE_CLIP)
        Xpen = sample_penalty_inputs(dataset.box, config.penalty_points, rng=rng)
        ld, lsu, lb, skipped, state.step = kernels.train_epoch(
            net.theta, state.m, state.v, state.step, X, Y, order, config.batch_size, noise, Xpen,
            lam, config.delta, config.bound, costs_w, net.mask, net.n_weights, net.n_biases,
            h.zeta, h.gamma, h.beta, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps,
            gates.LOG_ALPHA_LIMIT, *lay_args)
        trace.skipped += skipped
        if trace.skipped > skip_budget:
            raise NumericalFailure(
                f"{trace.skipped} of at most {int(epochs * (n_batches + 1))} updates were non-finite "
                f"(epoch {epoch + 1}, lambda={config.lam:g}); last finite data loss {ld!r}")
        last = epoch == epochs - 1
        if trace_every and (epoch % trace_every == 0 or last):
            val = rmse(predict(net, Xv), Yv) if len(Xv) else math.nan
            trace.append(epoch=epoch + 1, L_D=ld, L_C=complexity_loss(net, factors), L_su=lsu,
                         L_bound=lb, val_RMSE=val)
        if on_epoch is not None:
            on_epoch(epoch, net)
    trace.steps = state.step
    trace.wall_clock = time.perf_counter() - start
    return net, trace


# -- candidates and sweeps --------------------------------------------------------------

def _rmse_or_none(net: Network, X, Y):
    if len(X) == 0:
        return None
    value = rmse(predict(net, X), Y)
    return value if math.isfinite(value) else math.inf


def make_candidate(net: Network, dataset: Dataset, factors: ComplexityFactors, lam: float = 0.0,
                   seed: int | None = None, index: int = 0) -> Candidate:
    """Extract the equation of a trained network and score it.

    Errors are measured with the deterministic network, which equals the
    extracted expression wherever the expression is defined.
    """
    extraction = extract_expression(net)
    val = _rmse_or_none(net, *dataset.part("validation"))
    if val is None:
        val = _rmse_or_none(net, *dataset.part("train"))
    return Candidate(
        expression=extraction.expressions[0],
        complexity=complexity_score(extraction.weighted_counts, factors),
        active_parameters=extraction.active_parameters,
        val_rmse=val,
        ext_rmse=_rmse_or_none(net, *dataset.part("extrapolation")),
        test_rmse=_rmse_or_none(net, *dataset.part("test")),
        lam=float(lam), seed=seed, index=index,
        raw_expression=extraction.raw[0],
        weighted_counts=dict(extraction.weighted_counts),
        unit_counts=dict(extraction.unit_counts),
        input_names=tuple(dataset.input_names),
    )


def init_output_bias(net: Network, dataset: Dataset) -> Network:
    """Start the output biases at the training-target mean.

    With a zero start the first updates push every even unit towards the
    target offset, which biases which unit ends up carrying the curvature.
    """
    _, Y = dataset.part("train")
    net.layer_biases(net.layout.n_layers - 1)[:] = Y.mean(axis=0)
    return net


def run_seeds(master_seed: int, n: int) -> list[tuple[int, int]]:
    """Independent (network init, training) seed pairs derived from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [tuple(int(v) for v in c.generate_state(2, dtype=np.uint32)) for c in children]


@dataclass
class RunResult:
    index: int
    lam: float
    candidate: Candidate | None
    trace: TrainTrace | None
    network: dict | None
    error: str | None = None


def _single_run(args) -> RunResult:
    index, lam, spec, dataset, config, factors, seeds = args
    init_seed, train_seed = seeds
    try:
        net = build_network(spec, init_seed, config.initial_dropout, config.gate_noise_std)
        if config.output_bias_init == "mean":
            init_output_bias(net, dataset)
        net, trace = train(net, dataset, replace(config, lam=float(lam), seed=train_seed), factors)
        cand = make_candidate(net, dataset, factors, lam, init_seed, index)
        return RunResult(index, float(lam), cand, trace, net.to_dict())
    except (NumericalFailure, FloatingPointError, ValueError, ArithmeticError) as err:
        return RunResult(index, float(lam), None, None, None, f"{type(err).__name__}: {err}")


@dataclass
class SweepResult:
    runs: list

    @property
    def candidates(self) -> list[Candidate]:
        return [r.candidate for r in self.runs if r.candidate is not None]

    @property
    def failures(self) -> list[dict]:
        return [{"index": r.index, "lambda": r.lam, "error": r.error} for r in self.runs if r.error]


def lambda_sweep(spec: ArchitectureSpec, dataset: Dataset, grid: Sequence[float], config: TrainConfig,
                 factors: ComplexityFactors | None = None, parallelism: int = 1,
                 master_seed: int | None = None) -> SweepResult:
    """Train one fresh network per lambda value and turn each into a candidate.

    Seeds derive from ``master_seed`` (default ``config.seed``) and the grid
    position only, so results do not depend on ``parallelism``.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("the lambda grid is empty")
    factors = factors or ComplexityFactors.profile("plain")
    seeds = run_seeds(config.seed if master_seed is None else master_seed, len(grid))
    jobs = [(i, lam, spec, dataset, config, factors, seeds[i]) for i, lam in enumerate(grid)]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
            runs = list(pool.map(_single_run, jobs))
    else:
        runs = [_single_run(job) for job in jobs]
    result = SweepResult(sorted(runs, key=lambda r: r.index))
    if not result.candidates:
        raise NumericalFailure("every run of the sweep failed: " + "; ".join(r.error for r in result.runs))
    return result
