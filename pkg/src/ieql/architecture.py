"""Network layout: which units exist, where their inputs and outputs live.

Hidden layer ``l`` reads the concatenation of the raw inputs and the outputs
of every earlier hidden layer (the "copy" connections); the output layer is
an affine map over the concatenation of everything.  The layout flattens all
of this into integer index arrays so the numerical kernels can walk the
network without Python objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# unit kind codes shared with the kernels
COS, EXP, LOG, SQRT, SQUARE, MUL, DIV, ADD = range(8)
KIND_NAMES = ("cos", "exp", "log", "sqrt", "square", "mul", "div", "add")
KIND_CODES = {name: code for code, name in enumerate(KIND_NAMES)}
UNARY_UNITS = ("cos", "exp", "log", "sqrt", "square")
BINARY_UNITS = ("mul", "div")
SINGULAR_UNITS = ("log", "sqrt", "div")

DEFAULT_UNARY = (("cos", 4), ("exp", 4), ("log", 4), ("sqrt", 4), ("square", 4))
DEFAULT_BINARY = (("mul", 4), ("div", 4))
DEFAULT_PROHIBITED = (("cos", "cos"), ("cos", "exp"), ("exp", "exp"), ("log", "log"))


def _pairs(items) -> tuple:
    if isinstance(items, dict):
        items = items.items()
    return tuple((str(k), int(n)) for k, n in items)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer layout of an equation-learner network.

    ``unary`` and ``binary`` list ``(kind, multiplicity)`` pairs used in every
    hidden layer; ``prohibited`` holds ``(consumer, producer)`` pairs such as
    ``("cos", "exp")`` for cos(exp(.)).
    """

    input_dim: int
    output_dim: int = 1
    hidden_layers: int = 4
    unary: tuple = DEFAULT_UNARY
    binary: tuple = DEFAULT_BINARY
    prohibited: tuple = DEFAULT_PROHIBITED

    def __post_init__(self):
        object.__setattr__(self, "unary", _pairs(self.unary))
        object.__setattr__(self, "binary", _pairs(self.binary))
        object.__setattr__(self, "prohibited", tuple((str(a), str(b)) for a, b in self.prohibited))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be at least 1")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be non-negative")
        for kind, n in self.unary:
            if kind not in UNARY_UNITS:
                raise ValueError(f"unknown unary unit {kind!r}")
            if n < 0:
                raise ValueError("multiplicities must be non-negative")
        for kind, n in self.binary:
            if kind not in BINARY_UNITS:
                raise ValueError(f"unknown binary unit {kind!r}")
            if n < 0:
                raise ValueError("multiplicities must be non-negative")
        for consumer, producer in self.prohibited:
            for kind in (consumer, producer):
                if kind not in UNARY_UNITS + BINARY_UNITS:
                    raise ValueError(f"prohibition references unknown unit {kind!r}")

    @property
    def unit_kinds(self) -> list[str]:
        kinds = [k for k, n in self.unary if n > 0] + [k for k, n in self.binary if n > 0]
        return (kinds if self.hidden_layers > 0 else []) + ["add"]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_layers": self.hidden_layers,
            "unary": [list(p) for p in self.unary],
            "binary": [list(p) for p in self.binary],
            "prohibited": [list(p) for p in self.prohibited],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ArchitectureSpec:
        kwargs = dict(d)
        for key in ("unary", "binary", "prohibited"):
            if key in kwargs:
                kwargs[key] = tuple(tuple(p) for p in (kwargs[key].items() if isinstance(kwargs[key], dict)
                                                      else kwargs[key]))
        return cls(**kwargs)


@dataclass
class Layout:
    """Flat index arrays describing a network built from an :class:`ArchitectureSpec`."""

    spec: ArchitectureSpec
    # per layer (hidden layers first, output layer last)
    layer_in: np.ndarray = field(repr=False)
    layer_npre: np.ndarray = field(repr=False)
    layer_woff: np.ndarray = field(repr=False)
    layer_boff: np.ndarray = field(repr=False)
    layer_ufirst: np.ndarray = field(repr=False)
    layer_ucount: np.ndarray = field(repr=False)
    # per unit
    unit_kind: np.ndarray = field(repr=False)
    unit_a0: np.ndarray = field(repr=False)
    unit_a1: np.ndarray = field(repr=False)
    unit_alpha: np.ndarray = field(repr=False)
    unit_col: np.ndarray = field(repr=False)
    unit_layer: np.ndarray = field(repr=False)
    # per weight
    mask: np.ndarray = field(repr=False)
    weight_kind: np.ndarray = field(repr=False)
    # per pre-activation (bias index == pre-activation index)
    pre_unit: np.ndarray = field(repr=False)
    # per ytilde column: producing unit (-1 for raw inputs)
    col_unit: np.ndarray = field(repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.layer_in)

    @property
    def n_weights(self) -> int:
        return int(self.layer_woff[-1] + self.layer_in[-1] * self.layer_npre[-1])

    @property
    def n_biases(self) -> int:
        return int(self.layer_boff[-1] + self.layer_npre[-1])

    @property
    def n_hidden_pre(self) -> int:
        return int(self.layer_boff[-1])

    @property
    def n_alpha(self) -> int:
        return int((self.unit_alpha >= 0).sum())

    @property
    def width(self) -> int:
        """Width of the full concatenation read by the output layer."""
        return int(self.layer_in[-1])

    @property
    def n_units(self) -> int:
        return len(self.unit_kind)

    def weight_matrix_slice(self, layer: int) -> tuple[slice, tuple[int, int]]:
        start = int(self.layer_woff[layer])
        rows, cols = int(self.layer_npre[layer]), int(self.layer_in[layer])
        return slice(start, start + rows * cols), (rows, cols)

    def bias_slice(self, layer: int) -> slice:
        start = int(self.layer_boff[layer])
        return slice(start, start + int(self.layer_npre[layer]))

    def kernel_args(self) -> tuple:
        """The layout arrays in the order expected by the kernels."""
        return (self.layer_in, self.layer_npre, self.layer_woff, self.layer_boff,
                self.layer_ufirst, self.layer_ucount, self.unit_kind, self.unit_a0,
                self.unit_a1, self.unit_alpha, self.unit_col)


def build_layout(spec: ArchitectureSpec) -> Layout:
    D, H = spec.input_dim, spec.hidden_layers
    unit_kinds_per_layer = []
    for kind, n in spec.unary:
        unit_kinds_per_layer += [kind] * n
    for kind, n in spec.binary:
        unit_kinds_per_layer += [kind] * n

    layer_in, layer_npre, layer_woff, layer_boff = [], [], [], []
    layer_ufirst, layer_ucount = [], []
    unit_kind, unit_a0, unit_a1, unit_alpha, unit_col, unit_layer = [], [], [], [], [], []
    col_unit = [-1] * D
    pre_unit = []
    consumer_of_pre = []  # kind name of the unit fed by each pre-activation
    width = D
    woff = boff = 0
    n_alpha = 0
    for layer in range(H):
        layer_in.append(width)
        layer_woff.append(woff)
        layer_boff.append(boff)
        layer_ufirst.append(len(unit_kind))
        pre = boff
        new_cols = 0
        for kind in unit_kinds_per_layer:
            u = len(unit_kind)
            unit_kind.append(KIND_CODES[kind])
            unit_layer.append(layer)
            unit_a0.append(pre)
            pre_unit.append(u)
            consumer_of_pre.append(kind)
            pre += 1
            if kind in BINARY_UNITS:
                unit_a1.append(pre)
                pre_unit.append(u)
                consumer_of_pre.append(kind)
                pre += 1
            else:
                unit_a1.append(-1)
            if kind in SINGULAR_UNITS:
                unit_alpha.append(n_alpha)
                n_alpha += 1
            else:
                unit_alpha.append(-1)
            unit_col.append(width + new_cols)
            col_unit.append(u)
            new_cols += 1
        npre = pre - boff
        layer_npre.append(npre)
        layer_ucount.append(len(unit_kinds_per_layer))
        woff += npre * width
        boff += npre
        width += new_cols
    # output layer
    layer_in.append(width)
    layer_npre.append(spec.output_dim)
    layer_woff.append(woff)
    layer_boff.append(boff)
    layer_ufirst.append(len(unit_kind))
    layer_ucount.append(0)
    pre_unit += [-1] * spec.output_dim
    consumer_of_pre += ["add"] * spec.output_dim
    n_weights = woff + width * spec.output_dim

    # masks: a (consumer, producer) rule removes every connection from a
    # producer-kind output column into a consumer-kind pre-activation
    prohibited = set(spec.prohibited)
    mask = np.ones(n_weights)
    weight_kind = np.empty(n_weights, dtype=np.int64)
    for layer in range(H + 1):
        rows, cols, off, b0 = layer_npre[layer], layer_in[layer], layer_woff[layer], layer_boff[layer]
        for r in range(rows):
            consumer = consumer_of_pre[b0 + r]
            weight_kind[off + r * cols: off + (r + 1) * cols] = KIND_CODES[consumer]
            for c in range(cols):
                producer_unit = col_unit[c]
                if producer_unit < 0:
                    continue
                producer = KIND_NAMES[unit_kind[producer_unit]]
                if (consumer, producer) in prohibited:
                    mask[off + r * cols + c] = 0.0

    as_int = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return Layout(
        spec=spec,
        layer_in=as_int(layer_in), layer_npre=as_int(layer_npre),
        layer_woff=as_int(layer_woff), layer_boff=as_int(layer_boff),
        layer_ufirst=as_int(layer_ufirst), layer_ucount=as_int(layer_ucount),
        unit_kind=as_int(unit_kind), unit_a0=as_int(unit_a0), unit_a1=as_int(unit_a1),
        unit_alpha=as_int(unit_alpha), unit_col=as_int(unit_col), unit_layer=as_int(unit_layer),
        mask=mask, weight_kind=weight_kind, pre_unit=as_int(pre_unit), col_unit=as_int(col_unit),
    )
