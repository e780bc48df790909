"""Model selection across a set of trained equations."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import expression as ex
from .complexity import complexity_score, relative_frequencies

CRITERIA = ("Vint", "VintS", "VintEx")
_ALIASES = {"vint": "Vint", "vint-s": "VintS", "vints": "VintS", "vint-ex": "VintEx", "vintex": "VintEx"}


@dataclass(frozen=True)
class Candidate:
    """One trained equation and the metrics used to choose between equations."""

    expression: ex.Expression
    complexity: float
    active_parameters: int
    val_rmse: float
    ext_rmse: float | None = None
    test_rmse: float | None = None
    lam: float = 0.0
    seed: int | None = None
    index: int = 0
    raw_expression: ex.Expression | None = None
    weighted_counts: dict = field(default_factory=dict)
    unit_counts: dict = field(default_factory=dict)
    input_names: tuple = ()

    def __post_init__(self):
        if self.val_rmse < 0 or (self.ext_rmse is not None and self.ext_rmse < 0):
            raise ValueError("RMSE values must be non-negative")
        if self.complexity < 0:
            raise ValueError("complexity must be non-negative")

    def text(self, precision: int = 3) -> str:
        names = list(self.input_names) or None
        return ex.format_expr(self.expression, precision, names)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "lambda": self.lam,
            "seed": self.seed,
            "expression": ex.to_json(self.expression),
            "raw_expression": ex.to_json(self.raw_expression) if self.raw_expression is not None else None,
            "equation": self.text(),
            "complexity": self.complexity,
            "active_parameters": self.active_parameters,
            "val_rmse": self.val_rmse,
            "ext_rmse": self.ext_rmse,
            "test_rmse": self.test_rmse,
            "weighted_counts": dict(sorted(self.weighted_counts.items())),
            "unit_counts": dict(sorted(self.unit_counts.items())),
            "input_names": list(self.input_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Candidate:
        raw = d.get("raw_expression")
        return cls(
            expression=ex.from_json(d["expression"]),
            complexity=float(d["complexity"]),
            active_parameters=int(d["active_parameters"]),
            val_rmse=float(d["val_rmse"]),
            ext_rmse=None if d.get("ext_rmse") is None else float(d["ext_rmse"]),
            test_rmse=None if d.get("test_rmse") is None else float(d["test_rmse"]),
            lam=float(d.get("lambda", 0.0)),
            seed=d.get("seed"),
            index=int(d.get("index", 0)),
            raw_expression=ex.from_json(raw) if raw is not None else None,
            weighted_counts=dict(d.get("weighted_counts", {})),
            unit_counts=dict(d.get("unit_counts", {})),
            input_names=tuple(d.get("input_names", ())),
        )


@dataclass(frozen=True)
class Normalized:
    """Normalised metrics of one candidate, each in [0, 1]."""

    candidate: Candidate
    val: float
    complexity: float
    ext: float | None


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _zscore(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def normalize_metrics(candidates: Sequence[Candidate], method: str = "minmax") -> list[Normalized]:
    """Rescale validation error, complexity and extrapolation error over the set.

    ``minmax`` maps each metric to [0, 1] (all zeros when the metric is
    constant); ``zscore`` is available as a secondary variant.
    """
    if not candidates:
        raise ValueError("no candidates to normalise")
    scale = {"minmax": _minmax, "zscore": _zscore}.get(method)
    if scale is None:
        raise ValueError(f"unknown normalisation {method!r}")
    val = scale(np.array([c.val_rmse for c in candidates], dtype=float))
    cx = scale(np.array([c.complexity for c in candidates], dtype=float))
    if all(c.ext_rmse is not None for c in candidates):
        ext = scale(np.array([c.ext_rmse for c in candidates], dtype=float))
    else:
        ext = [None] * len(candidates)
    return [Normalized(c, float(v), float(s), None if e is None else float(e))
            for c, v, s, e in zip(candidates, val, cx, ext)]


def criterion_name(name: str) -> str:
    if name in CRITERIA:
        return name
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown selection criterion {name!r}; choose from {CRITERIA}") from None


def scores(candidates: Sequence[Candidate], criterion: str, method: str = "minmax") -> np.ndarray:
    criterion = criterion_name(criterion)
    norm = normalize_metrics(candidates, method)
    if criterion == "Vint":
        return np.array([n.val ** 2 for n in norm])
    if criterion == "VintS":
        return np.array([n.val ** 2 + n.complexity ** 2 for n in norm])
    if any(n.ext is None for n in norm):
        raise ValueError("VintEx needs an extrapolation error on every candidate")
    return np.array([n.val ** 2 + n.ext ** 2 for n in norm])


def select(candidates: Sequence[Candidate], criterion: str, method: str = "minmax") -> Candidate:
    """Candidate minimising the criterion.

    Ties go to fewer active parameters, then smaller lambda, then earlier position.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    s = scores(candidates, criterion, method)
    best = min(range(len(candidates)),
               key=lambda i: (s[i], candidates[i].active_parameters, candidates[i].lam, i))
    return candidates[best]


def pareto_front(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Candidates not dominated in (complexity, validation error), sorted by complexity.

    Of several identical points only the first one is kept.
    """
    order = sorted(range(len(candidates)),
                   key=lambda i: (candidates[i].complexity, candidates[i].val_rmse, i))
    front = []
    best_err = math.inf
    for i in order:
        c = candidates[i]
        if c.val_rmse < best_err:
            front.append(c)
            best_err = c.val_rmse
    return front


def save_candidates(candidates: Sequence[Candidate], path, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["candidates"] = [c.to_dict() for c in candidates]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_candidates(path) -> list[Candidate]:
    doc = json.loads(Path(path).read_text())
    items = doc["candidates"] if isinstance(doc, dict) else doc
    return [Candidate.from_dict(d) for d in items]


def write_pareto_csv(candidates: Sequence[Candidate], path, precision: int = 3) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["complexity", "val_RMSE", "active_parameters", "lambda", "expression"])
        for c in pareto_front(candidates):
            w.writerow([repr(c.complexity), repr(c.val_rmse), c.active_parameters, repr(c.lam), c.text(precision)])


def rescored(candidates: Sequence[Candidate], factors) -> list[Candidate]:
    """Recompute complexities from the stored per-kind weight counts under new factors."""
    return [replace(c, complexity=complexity_score(c.weighted_counts, factors)) for c in candidates]


def mean_unit_frequencies(candidates: Sequence[Candidate], kinds: Sequence[str] | None = None) -> dict[str, float]:
    """Per unit kind, the relative frequency within each equation averaged over all equations.

    Equations without any unit contribute zero to every kind.
    """
    if not candidates:
        return {}
    if kinds is None:
        kinds = sorted({k for c in candidates for k in c.unit_counts})
    totals = {k: 0.0 for k in kinds}
    for c in candidates:
        freq = relative_frequencies(c.unit_counts)
        for k in kinds:
            totals[k] += freq.get(k, 0.0)
    return {k: v / len(candidates) for k, v in totals.items()}
