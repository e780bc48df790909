"""Network builders shared by several test modules."""

import numpy as np

from ieql.architecture import KIND_CODES, ArchitectureSpec
from ieql.extract import singular_margins
from ieql.network import Network, build_network, forward, singular_inputs

OPEN, SHUT = 30.0, -30.0


def weight_index(net: Network, layer: int, row: int, col: int) -> int:
    sl, (_, cols) = net.layout.weight_matrix_slice(layer)
    return sl.start + row * cols + col


def singular_argument_rows(net: Network) -> np.ndarray:
    """Pre-activation indices feeding a log or sqrt argument or a division denominator."""
    lay = net.layout
    rows = []
    for u in range(lay.n_units):
        kind = lay.unit_kind[u]
        if kind in (KIND_CODES["log"], KIND_CODES["sqrt"]):
            rows.append(lay.unit_a0[u])
        elif kind == KIND_CODES["div"]:
            rows.append(lay.unit_a1[u])
    return np.array(rows, dtype=int)


def random_pruned_network(spec: ArchitectureSpec, seed: int, keep: float = 0.08) -> Network:
    """Default initialisation with a random subset of gates fully open and the rest shut.

    Singular arguments get positive biases so that most inputs are in-domain.
    """
    rng = np.random.default_rng(seed)
    net = build_network(spec, seed)
    net.log_alpha[:] = np.where(rng.random(net.n_weights) < keep, OPEN, SHUT)
    net.biases[:] = rng.normal(0.0, 0.5, net.n_biases)
    rows = singular_argument_rows(net)
    net.biases[rows] = rng.uniform(-0.5, 4.0, len(rows))
    return net


def in_domain_rows(net: Network, X: np.ndarray) -> np.ndarray:
    """Rows at which every live, input-dependent singular unit sees a positive input."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return np.zeros(0, dtype=bool)
    live = singular_margins(net, X[:1]).keys()   # which units are live does not depend on X
    _, cache = forward(net, X, check_finite=False)
    z = singular_inputs(net, cache)
    ok = np.ones(len(X), dtype=bool)
    for u in live:
        ok &= z[u].reshape(len(X), -1).min(axis=1) > 0
    return ok
