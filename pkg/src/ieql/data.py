"""Datasets: synthetic generation from formulas, domain restriction, CSV I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import expression as ex

SPLITS = ("train", "validation", "test", "extrapolation")


class DataError(ValueError):
    """Malformed or inconsistent data."""


def shrink_domain(interval: Sequence[float], fraction: float, mode: str = "midpoint") -> tuple[float, float]:
    """Training interval covering ``fraction`` of a test interval.

    ``midpoint`` keeps the centre and scales the half-width; ``paper_scale``
    multiplies both ends by ``fraction``.
    """
    a, b = float(interval[0]), float(interval[1])
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if mode == "midpoint":
        c, h = 0.5 * (a + b), 0.5 * (b - a)
        return (c - fraction * h, c + fraction * h)
    if mode == "paper_scale":
        return (fraction * a, fraction * b)
    raise ValueError(f"unknown shrink mode {mode!r}")


@dataclass(frozen=True)
class DomainBox:
    """Train and test intervals per input dimension."""

    train_low: tuple
    train_high: tuple
    test_low: tuple
    test_high: tuple
    exempt: tuple = ()

    def __post_init__(self):
        for name in ("train_low", "train_high", "test_low", "test_high"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "exempt", tuple(bool(v) for v in self.exempt) or (False,) * len(self.train_low))
        n = len(self.train_low)
        if not all(len(getattr(self, k)) == n for k in ("train_high", "test_low", "test_high", "exempt")):
            raise ValueError("all box bounds need one entry per input dimension")
        for tl, th, sl, sh in zip(self.train_low, self.train_high, self.test_low, self.test_high):
            if not (tl < th and sl < sh):
                raise ValueError("each interval needs low < high")
            if tl < sl or th > sh:
                raise ValueError("train interval must lie inside the test interval")

    @property
    def dim(self) -> int:
        return len(self.train_low)

    @classmethod
    def same(cls, low, high) -> DomainBox:
        """Train and test domains coincide."""
        return cls(low, high, low, high)

    @classmethod
    def from_test(cls, test_low, test_high, fraction: float = 0.8, mode: str = "midpoint",
                  exempt: Sequence[bool] = ()) -> DomainBox:
        exempt = tuple(exempt) or (False,) * len(test_low)
        train = [(lo, hi) if ex_ else shrink_domain((lo, hi), fraction, mode)
                 for lo, hi, ex_ in zip(test_low, test_high, exempt)]
        return cls([t[0] for t in train], [t[1] for t in train], test_low, test_high, exempt)

    def contains(self, X, which: str = "train") -> np.ndarray:
        lo, hi = self.bounds(which)
        X = np.atleast_2d(X)
        return np.all((X >= lo) & (X <= hi), axis=1)

    def bounds(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return np.array(self.train_low), np.array(self.train_high)
        if which == "test":
            return np.array(self.test_low), np.array(self.test_high)
        raise ValueError(f"unknown domain {which!r}")

    def to_dict(self) -> dict:
        return {"train_low": list(self.train_low), "train_high": list(self.train_high),
                "test_low": list(self.test_low), "test_high": list(self.test_high),
                "exempt": list(self.exempt)}

    @classmethod
    def from_dict(cls, d: dict) -> DomainBox:
        return cls(d["train_low"], d["train_high"], d["test_low"], d["test_high"], d.get("exempt", ()))


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    split: np.ndarray                       # one label from SPLITS per row
    box: DomainBox
    noise_std: float = 0.0
    formula: str | None = None
    seed: int | None = None
    input_names: list = field(default_factory=list)
    output_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.X), -1)
        self.Y = np.asarray(self.Y, dtype=float).reshape(len(self.Y), -1)
        self.split = np.asarray(self.split, dtype="<U13")
        if not (len(self.X) == len(self.Y) == len(self.split)):
            raise DataError("X, Y and split labels must have the same number of rows")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split label(s) {sorted(bad)}")
        if self.X.shape[1] != self.box.dim:
            raise DataError("domain box dimension does not match the inputs")
        if not self.input_names:
            self.input_names = ex.default_names(self.X.shape[1])
        if not self.output_names:
            self.output_names = ["y"] if self.Y.shape[1] == 1 else [f"y{k + 1}" for k in range(self.Y.shape[1])]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        rows = self.split == name
        return self.X[rows], self.Y[rows]

    def count(self, name: str) -> int:
        return int(np.sum(self.split == name))

    def metadata(self) -> dict:
        return {"box": self.box.to_dict(), "noise_std": self.noise_std, "formula": self.formula,
                "seed": self.seed, "input_names": list(self.input_names),
                "output_names": list(self.output_names),
                "counts": {s: self.count(s) for s in SPLITS}}


def _uniform(rng: np.random.Generator, lo, hi, n: int) -> np.ndarray:
    return lo + (hi - lo) * rng.random((n, len(lo)))


def _outside_train(rng: np.random.Generator, box: DomainBox, n: int) -> np.ndarray:
    """Uniform samples from the test box that fall outside the train box."""
    lo, hi = box.bounds("test")
    if np.allclose(box.bounds("train")[0], lo) and np.allclose(box.bounds("train")[1], hi):
        raise DataError("extrapolation points need a test box larger than the train box")
    out = np.empty((0, box.dim))
    while len(out) < n:
        cand = _uniform(rng, lo, hi, max(4 * n, 64))
        out = np.vstack([out, cand[~box.contains(cand, "train")]])
    return out[:n]


def validation_labels(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Label the last ``fraction`` of a seeded shuffle of ``n`` rows as validation."""
    labels = np.full(n, "train", dtype="<U13")
    n_val = int(round(fraction * n))
    if n_val:
        labels[rng.permutation(n)[n - n_val:]] = "validation"
    return labels


def generate_synthetic(formula: ex.Expression | str, box: DomainBox, n_train: int, n_test: int,
                       noise_std: float = 0.01, seed: int = 0, n_extrapolation: int = 0,
                       validation_fraction: float = 0.1, noisy_test: bool = False,
                       input_names: Sequence[str] | None = None) -> Dataset:
    """Sample a regression dataset from a ground-truth formula.

    Training rows are uniform over the train box and carry Gaussian noise;
    a ``validation_fraction`` of them is held out.  Test rows are uniform over
    the test box, extrapolation rows over the test box minus the train box;
    both are noiseless unless ``noisy_test``.
    """
    names = list(input_names) if input_names else ex.default_names(box.dim)
    text = formula if isinstance(formula, str) else None
    if isinstance(formula, str):
        from .parser import parse_formula
        formula = parse_formula(formula, names)
    if n_train < 1:
        raise DataError("n_train must be at least 1")
    if n_test < 0 or n_extrapolation < 0:
        raise DataError("sample counts must be non-negative")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    if max(ex.variables(formula), default=-1) >= box.dim:
        raise DataError("formula uses more inputs than the domain box declares")
    rng = np.random.default_rng(seed)
    X_train = _uniform(rng, *box.bounds("train"), n_train)
    X_test = _uniform(rng, *box.bounds("test"), n_test)
    X_ext = _outside_train(rng, box, n_extrapolation) if n_extrapolation else np.empty((0, box.dim))
    X = np.vstack([X_train, X_test, X_ext])
    try:
        clean = ex.evaluate(formula, X)
    except ex.DomainError as err:
        raise DataError(f"formula leaves its domain inside the box: {err}") from None
    noise = rng.normal(0.0, 1.0, len(X)) * noise_std
    if not noisy_test:
        noise[n_train:] = 0.0
    Y = (clean + noise)[:, None]
    split = np.concatenate([validation_labels(n_train, validation_fraction, rng),
                            np.full(n_test, "test"), np.full(n_extrapolation, "extrapolation")])
    return Dataset(X, Y, split, box, noise_std,
                   text if text is not None else ex.format_expr(formula, 17, names), seed, names)


def sample_penalty_inputs(box: DomainBox, n: int, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Unlabelled points drawn uniformly from the test box."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return _uniform(rng, *box.bounds("test"), n)


# -- CSV ----------------------------------------------------------------------

def write_csv(dataset: Dataset, path) -> None:
    """Write inputs, outputs and split labels; values use ``repr`` so reading back is exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dataset.input_names) + list(dataset.output_names) + ["split"])
        for x, y, s in zip(dataset.X, dataset.Y, dataset.split):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y] + [s])


def write_metadata(dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset.metadata(), indent=2, sort_keys=True) + "\n")


def load_csv(path, inputs: Sequence[str], outputs: Sequence[str], split_column: str | None = None,
             box: DomainBox | None = None, test_fraction: float = 0.2, validation_fraction: float = 0.1,
             seed: int = 0, noise_std: float = 0.0) -> Dataset:
    """Read a dataset from a CSV file with a header row.

    With ``split_column`` the labels are taken from the file.  Otherwise rows
    are shuffled with ``seed``: the last ``test_fraction`` becomes test data and
    ``validation_fraction`` of the remainder validation data.  Without an explicit
    ``box`` the observed ranges of the training rows and of all rows define the
    train and test boxes.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    wanted = list(inputs) + list(outputs) + ([split_column] if split_column else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in wanted}
    numeric = list(inputs) + list(outputs)
    values = np.empty((len(rows), len(numeric)))
    for i, r in enumerate(rows):
        for j, c in enumerate(numeric):
            cell = r[idx[c]] if idx[c] < len(r) else ""
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} in row {i + 2}, column {c!r}") from None
    X, Y = values[:, :len(inputs)], values[:, len(inputs):]
    if split_column:
        split = np.array([r[idx[split_column]].strip() for r in rows])
    else:
        if not 0.0 <= test_fraction < 1.0:
            raise DataError("test_fraction must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        n = len(rows)
        order = rng.permutation(n)
        n_test = int(round(test_fraction * n))
        split = np.full(n, "train", dtype="<U13")
        split[order[n - n_test:]] = "test"
        fit_rows = order[:n - n_test]
        n_val = int(round(validation_fraction * len(fit_rows)))
        if n_val:
            split[fit_rows[len(fit_rows) - n_val:]] = "validation"
    if box is None:
        fit = np.isin(split, ("train", "validation"))
        if not fit.any():
            raise DataError(f"{path}: no training rows")
        lo, hi = X[fit].min(axis=0), X[fit].max(axis=0)
        tlo, thi = np.minimum(X.min(axis=0), lo), np.maximum(X.max(axis=0), hi)
        flat = hi <= lo
        lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
        tlo, thi = np.minimum(tlo, lo), np.maximum(thi, hi)
        box = DomainBox(lo, hi, tlo, thi)
    return Dataset(X, Y, split, box, noise_std, None, seed, list(inputs), list(outputs))


def read_dataset(csv_path, meta_path=None) -> Dataset:
    """Read a dataset written by :func:`write_csv` (and optionally :func:`write_metadata`)."""
    csv_path = Path(csv_path)
    meta = json.loads(Path(meta_path).read_text()) if meta_path else None
    with csv_path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[-1] != "split":
        raise DataError(f"{csv_path}: expected a trailing 'split' column")
    if meta:
        inputs, outputs = meta["input_names"], meta["output_names"]
    else:
        raise DataError("reading a generated dataset needs its metadata file")
    box = DomainBox.from_dict(meta["box"])
    ds = load_csv(csv_path, inputs, outputs, split_column="split", box=box, noise_std=meta.get("noise_std", 0.0))
    ds.formula = meta.get("formula")
    ds.seed = meta.get("seed")
    return ds


def rmse(pred, target) -> float:
    if len(pred) == 0:
        return math.nan
    pred = np.asarray(pred, dtype=float).reshape(len(pred), -1)
    target = np.asarray(target, dtype=float).reshape(len(target), -1)
    return float(np.sqrt(np.mean(np.sum((pred - target) ** 2, axis=1))))
