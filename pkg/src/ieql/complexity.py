"""Per-unit complexity factors and the weighted complexity score."""

from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path

# "add" stands for the affine +/- connections (the output layer and linear terms).
UNIT_KINDS = ("add", "mul", "div", "square", "log", "sqrt", "exp", "cos")

PROFILES = {
    "plain": {kind: 1.0 for kind in UNIT_KINDS},
    "motor": {"add": 1.0, "mul": 2.0, "div": 5.0, "square": 2.0,
              "log": 5.0, "sqrt": 3.0, "exp": 5.0, "cos": 10.0},
}


class ComplexityFactors(Mapping):
    """Immutable map from unit kind to a positive cost."""

    def __init__(self, costs: Mapping[str, float]):
        costs = {str(k): float(v) for k, v in costs.items()}
        bad = {k: v for k, v in costs.items() if not v > 0}
        if bad:
            raise ValueError(f"complexity factors must be positive: {bad}")
        self._costs = dict(sorted(costs.items()))

    @classmethod
    def profile(cls, name: str) -> ComplexityFactors:
        try:
            return cls(PROFILES[name])
        except KeyError:
            raise ValueError(f"unknown complexity profile {name!r}; choose from {sorted(PROFILES)}") from None

    @classmethod
    def load(cls, spec: str | Mapping) -> ComplexityFactors:
        """Accept a profile name, a JSON file path or an inline mapping.

        Files and mappings may carry ``{"base": "plain", "overrides": {...}}``.
        """
        if isinstance(spec, Mapping):
            data = dict(spec)
        elif spec in PROFILES:
            return cls.profile(spec)
        else:
            data = json.loads(Path(spec).read_text())
        if "base" in data or "overrides" in data:
            return cls.profile(data.get("base", "plain")).with_overrides(data.get("overrides", {}))
        return cls(data)

    def with_overrides(self, overrides: Mapping[str, float]) -> ComplexityFactors:
        merged = dict(self._costs)
        merged.update(overrides)
        return ComplexityFactors(merged)

    def __getitem__(self, kind: str) -> float:
        return self._costs[kind]

    def __iter__(self):
        return iter(self._costs)

    def __len__(self) -> int:
        return len(self._costs)

    def __repr__(self) -> str:
        return f"ComplexityFactors({self._costs})"

    def to_dict(self) -> dict[str, float]:
        return dict(self._costs)

    def check_covers(self, kinds) -> None:
        missing = sorted(set(kinds) - set(self._costs))
        if missing:
            raise KeyError(f"no complexity factor for unit kind(s) {missing}")


def complexity_score(weighted_counts: Mapping[str, float], factors: Mapping[str, float]) -> float:
    """Weighted sum ``sum_u c_u * count_u`` over the unit kinds present in ``weighted_counts``."""
    total = 0.0
    for kind, count in sorted(weighted_counts.items()):
        if count < 0:
            raise ValueError(f"negative count for {kind!r}")
        if kind not in factors:
            raise KeyError(f"no complexity factor for unit kind {kind!r}")
        total += factors[kind] * count
    return total


def relative_frequencies(counts: Mapping[str, float]) -> dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {k: 0.0 for k in counts}
    return {k: v / total for k, v in counts.items()}
