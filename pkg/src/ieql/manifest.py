"""Experiment manifests: one JSON or TOML file describing a full pipeline run.

A manifest names the data source (a formula with domain box and sample sizes,
or a CSV file with a column schema), the network layout, complexity factors,
training options, the lambda grid, the selection criterion, the output
directory and a master seed.  Its SHA-256 over a canonical JSON rendering is
stamped into every output file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .architecture import ArchitectureSpec
from .complexity import ComplexityFactors
from .data import Dataset, DataError, DomainBox, generate_synthetic, load_csv
from .selection import criterion_name
from .training import DESK_GRID_STEPS, TrainConfig, lambda_grid

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ManifestError(ValueError):
    """The manifest is malformed or references something that does not exist."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def manifest_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def _box(d: dict, dim: int) -> DomainBox:
    """Domain box from ``test_box`` plus either ``train_box`` or a ``shrink`` rule."""
    try:
        test = np.asarray(d["test_box"], dtype=float).reshape(-1, 2)
    except KeyError:
        raise ManifestError("dataset needs a 'test_box' ([[low, high], ...] per input)") from None
    if len(test) != dim:
        raise ManifestError(f"test_box has {len(test)} intervals for {dim} inputs")
    exempt = tuple(d.get("exempt", ())) or (False,) * dim
    if "train_box" in d:
        train = np.asarray(d["train_box"], dtype=float).reshape(-1, 2)
        if len(train) != dim:
            raise ManifestError(f"train_box has {len(train)} intervals for {dim} inputs")
        return DomainBox(train[:, 0], train[:, 1], test[:, 0], test[:, 1], exempt)
    shrink = d.get("shrink", {"fraction": 1.0})
    return DomainBox.from_test(test[:, 0], test[:, 1], float(shrink.get("fraction", 0.8)),
                               shrink.get("mode", "midpoint"), exempt)


@dataclass
class Manifest:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path) -> Manifest:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ManifestError(f"cannot read manifest: {err}") from None
        try:
            raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as err:
            raise ManifestError(f"{path}: {err}") from None
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> Manifest:
        if not isinstance(raw, dict) or "dataset" not in raw:
            raise ManifestError("a manifest needs a 'dataset' section")
        m = cls(copy.deepcopy(raw), Path(base_dir))
        m.validate()
        return m

    def with_overrides(self, **values) -> Manifest:
        """Copy with top-level keys replaced (``None`` values are ignored)."""
        raw = copy.deepcopy(self.raw)
        raw.update({k: v for k, v in values.items() if v is not None})
        return Manifest.from_dict(raw, self.base_dir)

    def validate(self) -> None:
        """Resolve every section once so that errors surface before any work is done."""
        try:
            self.train_config()
            self.grid()
            self.factors()
            self.criterion()
            if "formula" in self.data_section:
                self.domain_box()
        except (ValueError, TypeError, KeyError) as err:
            if isinstance(err, ManifestError):
                raise
            raise ManifestError(str(err)) from None

    @property
    def hash(self) -> str:
        return manifest_hash(self.raw)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def name(self) -> str:
        return str(self.raw.get("name", "experiment"))

    @property
    def out_dir(self) -> Path:
        return Path(self.raw.get("out", f"runs/{self.name}"))

    @property
    def data_section(self) -> dict:
        return self.raw["dataset"]

    @property
    def has_formula(self) -> bool:
        return "formula" in self.data_section

    def input_names(self) -> list[str]:
        d = self.data_section
        if "inputs" in d:
            return list(d["inputs"])
        if "test_box" in d:
            return [f"x{i + 1}" for i in range(len(d["test_box"]))]
        raise ManifestError("dataset needs 'inputs' or a 'test_box'")

    def domain_box(self) -> DomainBox:
        return _box(self.data_section, len(self.input_names()))

    def build_dataset(self) -> Dataset:
        d = self.data_section
        names = self.input_names()
        if "formula" in d:
            return generate_synthetic(
                d["formula"], self.domain_box(),
                n_train=int(d.get("n_train", 1000)), n_test=int(d.get("n_test", 1000)),
                noise_std=float(d.get("noise_std", 0.01)), seed=int(d.get("seed", self.seed)),
                n_extrapolation=int(d.get("n_extrapolation", 40)),
                validation_fraction=float(d.get("validation_fraction", 0.1)),
                noisy_test=bool(d.get("noisy_test", False)), input_names=names)
        if "csv" in d:
            path = self.base_dir / d["csv"]
            box = self.domain_box() if "test_box" in d else None
            return load_csv(path, names, d.get("outputs", ["y"]), split_column=d.get("split_column"),
                            box=box, test_fraction=float(d.get("test_fraction", 0.2)),
                            validation_fraction=float(d.get("validation_fraction", 0.1)),
                            seed=int(d.get("seed", self.seed)), noise_std=float(d.get("noise_std", 0.0)))
        raise DataError("dataset section needs either 'formula' or 'csv'")

    def architecture(self, dataset: Dataset) -> ArchitectureSpec:
        d = dict(self.raw.get("architecture", {}))
        d.setdefault("input_dim", dataset.input_dim)
        d.setdefault("output_dim", dataset.output_dim)
        if (d["input_dim"], d["output_dim"]) != (dataset.input_dim, dataset.output_dim):
            raise ManifestError("architecture dimensions do not match the dataset")
        return ArchitectureSpec.from_dict(d)

    def factors(self) -> ComplexityFactors:
        spec = self.raw.get("factors", "plain")
        if isinstance(spec, str) and not spec.endswith(".json") and "/" not in spec:
            return ComplexityFactors.load(spec)
        if isinstance(spec, str):
            return ComplexityFactors.load(str(self.base_dir / spec))
        return ComplexityFactors.load(spec)

    def train_config(self) -> TrainConfig:
        d = dict(self.raw.get("train", {}))
        profile = d.pop("profile", self.raw.get("profile", "desk"))
        d.setdefault("seed", self.seed)
        return TrainConfig.profile(profile, **d)

    def grid(self) -> np.ndarray:
        g = self.raw.get("grid")
        if g is None:
            profile = self.raw.get("train", {}).get("profile", self.raw.get("profile", "desk"))
            return lambda_grid(DESK_GRID_STEPS if profile == "desk" else 78)
        if isinstance(g, dict):
            return lambda_grid(int(g.get("steps", 78)), float(g.get("low", -5.0)), float(g.get("high", 0.0)))
        values = np.asarray(g, dtype=float).ravel()
        if values.size == 0:
            raise ManifestError("the lambda grid is empty")
        if np.any(values < 0):
            raise ManifestError("lambda values must be non-negative")
        return values

    def criterion(self) -> str:
        return criterion_name(self.raw.get("criterion", "VintS"))
