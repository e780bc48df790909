"""Command-line interface: ``ieql {gen-data,train,sweep,select,check-grad}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .architecture import ArchitectureSpec
from .complexity import ComplexityFactors
from .data import DataError, write_csv
from .expression import DomainError, format_expr
from .gradcheck import all_kinds_spec, check_gradients
from .manifest import Manifest, ManifestError
from .network import NonFiniteError
from .selection import (load_candidates, mean_unit_frequencies, rescored, save_candidates, select,
                        write_pareto_csv)
from .training import NumericalFailure, RunResult, _single_run, lambda_sweep, run_seeds

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _log(out: Path, message: str) -> None:
    """Append a timestamped line to the sidecar log; other outputs stay timestamp-free."""
    out.mkdir(parents=True, exist_ok=True)
    with (out / "run.log").open("a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


# -- option resolution -------------------------------------------------------------------

def _seed(args, manifest: Manifest | None) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("IEQL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"IEQL_SEED must be an integer, got {env!r}") from None
    return None if manifest is None else manifest.seed


def _out(args, manifest: Manifest | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if os.environ.get("IEQL_OUT"):
        return Path(os.environ["IEQL_OUT"])
    return manifest.out_dir if manifest is not None else Path(".")


def _manifest(args) -> Manifest:
    if not args.manifest:
        raise UsageError("--manifest is required for this command")
    m = Manifest.load(args.manifest)
    overrides = {}
    seed = _seed(args, m)
    if seed != m.seed:
        overrides["seed"] = seed
    if getattr(args, "factors", None):
        overrides["factors"] = args.factors
    if getattr(args, "profile", None):
        train = dict(m.raw.get("train", {}))
        train["profile"] = args.profile
        overrides["train"] = train
    return m.with_overrides(**overrides) if overrides else m


def _factors(spec: str | None, manifest: Manifest | None) -> ComplexityFactors:
    if spec:
        return ComplexityFactors.load(spec)
    return manifest.factors() if manifest is not None else ComplexityFactors.profile("plain")


# -- commands ------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    m = _manifest(args)
    if not m.has_formula:
        raise UsageError("gen-data needs a manifest whose dataset has a 'formula'")
    out = _out(args, m)
    ds = m.build_dataset()
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "dataset.csv")
    _write_json(out / "dataset.json", {**ds.metadata(), "manifest_sha256": m.hash})
    _log(out, f"gen-data manifest={m.hash} rows={len(ds.X)}")
    print(f"wrote {out / 'dataset.csv'} ({', '.join(f'{k}={v}' for k, v in ds.metadata()['counts'].items())})")
    return EXIT_OK


def cmd_train(args) -> int:
    m = _manifest(args)
    out = _out(args, m)
    ds = m.build_dataset()
    spec = m.architecture(ds)
    config = m.train_config()
    lam = config.lam if args.lam is None else args.lam
    seeds = run_seeds(config.seed, 1)[0]
    result: RunResult = _single_run((0, lam, spec, ds, config, m.factors(), seeds))
    if result.error:
        raise NumericalFailure(result.error)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "network.json", result.network)
    result.trace.to_csv(out / "trace.csv")
    _write_json(out / "candidate.json", {"manifest_sha256": m.hash, **result.candidate.to_dict()})
    _log(out, f"train manifest={m.hash} lambda={lam!r} wall_clock={result.trace.wall_clock:.3f}s")
    c = result.candidate
    print(f"lambda={lam:g} val_RMSE={c.val_rmse:.4g} active_parameters={c.active_parameters}")
    print(f"equation: {c.text()}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    m = _manifest(args)
    out = _out(args, m)
    ds = m.build_dataset()
    spec = m.architecture(ds)
    config = m.train_config()
    grid = m.grid()
    result = lambda_sweep(spec, ds, grid, config, m.factors(), parallelism=max(1, args.parallel))
    out.mkdir(parents=True, exist_ok=True)
    extra = {"manifest_sha256": m.hash, "failures": result.failures,
             "lambda_grid": [float(v) for v in grid]}
    save_candidates(result.candidates, out / "candidates.json", extra)
    write_pareto_csv(result.candidates, out / "pareto.csv")
    for run in result.runs:
        if run.trace is not None:
            (out / "traces").mkdir(exist_ok=True)
            run.trace.to_csv(out / "traces" / f"run_{run.index:03d}.csv")
            _write_json(out / "networks" / f"run_{run.index:03d}.json", run.network)
    wall = sum(r.trace.wall_clock for r in result.runs if r.trace is not None)
    _log(out, f"sweep manifest={m.hash} runs={len(result.runs)} failures={len(result.failures)} "
              f"train_seconds={wall:.1f}")
    print(f"{len(result.candidates)} candidates, {len(result.failures)} failed runs -> {out / 'candidates.json'}")
    return EXIT_OK


def selection_report(candidates, criterion: str, factors: ComplexityFactors) -> dict:
    candidates = rescored(candidates, factors)
    best = select(candidates, criterion)
    names = list(best.input_names) or None
    return {
        "criterion": criterion,
        "factors": factors.to_dict(),
        "index": best.index,
        "lambda": best.lam,
        "equation": best.text(3),
        "raw_equation": format_expr(best.raw_expression, 17, names) if best.raw_expression is not None else None,
        "val_rmse": best.val_rmse,
        "ext_rmse": best.ext_rmse,
        "test_rmse": best.test_rmse,
        "complexity": best.complexity,
        "active_parameters": best.active_parameters,
        "unit_counts": dict(sorted(best.unit_counts.items())),
        "unit_frequencies": mean_unit_frequencies(candidates),
    }


def _print_report(r: dict) -> None:
    print(f"criterion: {r['criterion']}  (candidate {r['index']}, lambda={r['lambda']:g})")
    print(f"equation (3 s.f.): {r['equation']}")
    if r["raw_equation"] is not None:
        print(f"raw extraction:    {r['raw_equation']}")
    for key in ("val_rmse", "ext_rmse", "test_rmse"):
        if r[key] is not None:
            print(f"{key}: {r[key]:.6g}")
    print(f"complexity: {r['complexity']:.6g}  active parameters: {r['active_parameters']}")
    print("units in selected equation: " + (", ".join(f"{k}={v}" for k, v in r["unit_counts"].items()) or "none"))
    if r["unit_frequencies"]:
        print("mean relative unit frequency over all candidates:")
        for kind, value in sorted(r["unit_frequencies"].items()):
            print(f"  {kind:<7}{value:6.3f}")


def cmd_select(args) -> int:
    m = _manifest(args) if args.manifest else None
    if args.candidates:
        path = Path(args.candidates)
    elif m is not None:
        path = _out(args, m) / "candidates.json"
    else:
        raise UsageError("select needs --candidates PATH or --manifest")
    try:
        candidates = load_candidates(path)
    except (OSError, KeyError, ValueError) as err:
        raise DataError(f"cannot read candidates from {path}: {err}") from None
    if not candidates:
        raise DataError(f"{path} holds no candidates")
    criterion = args.criterion or (m.criterion() if m is not None else "VintS")
    factors = _factors(args.factors, m)
    report = selection_report(candidates, criterion, factors)
    _print_report(report)
    out = Path(args.out) if args.out else path.parent
    _write_json(out / "selection.json", report)
    return EXIT_OK


def cmd_check_grad(args, fault=None) -> int:
    """Finite-difference check of backward(); ``fault`` lets tests corrupt the gradient."""
    seed = _seed(args, None) or 0
    if args.manifest:
        m = _manifest(args)
        d = dict(m.raw.get("architecture", {}))
        d.setdefault("input_dim", len(m.input_names()))
        spec = ArchitectureSpec.from_dict(d)
    elif args.spec == "default":
        spec = ArchitectureSpec(input_dim=2)
    elif args.spec == "affine":
        spec = ArchitectureSpec(input_dim=2, hidden_layers=0)
    else:
        spec = all_kinds_spec()
    report = check_gradients(spec, seed=seed, fault=fault)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} max relative error {report.max_rel_error:.3e} over {report.n_params} parameters "
          f"(tolerance {report.tolerance:g}, {report.n_violations} out-of-domain singular inputs)")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="experiment manifest (JSON or TOML)")
    common.add_argument("--out", help="output directory (env IEQL_OUT)")
    common.add_argument("--seed", type=int, help="master seed (env IEQL_SEED)")
    common.add_argument("--factors", help="complexity factors: plain, motor or a JSON file")
    common.add_argument("--profile", choices=("desk", "paper"), help="training schedule profile")

    parser = _Parser(prog="ieql", description="Informed equation learner")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="sample the manifest's synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train a single network")
    p.add_argument("--lam", type=float, help="regularization strength (default from the manifest)")
    p = sub.add_parser("sweep", parents=[common], help="train one network per lambda and collect candidates")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p = sub.add_parser("select", parents=[common], help="pick an equation from a candidate file")
    p.add_argument("--candidates", help="candidates.json (default: <out>/candidates.json)")
    p.add_argument("--criterion", type=str.lower, choices=("vint", "vint-s", "vint-ex"))
    p = sub.add_parser("check-grad", parents=[common], help="finite-difference gradient check")
    p.add_argument("--spec", choices=("all-kinds", "default", "affine"), default="all-kinds",
                   help="network to check when no manifest is given")
    return parser


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sweep": cmd_sweep,
            "select": cmd_select, "check-grad": cmd_check_grad}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ManifestError) as err:
        print(f"ieql: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, FileNotFoundError) as err:
        print(f"ieql: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, NonFiniteError, FloatingPointError) as err:
        print(f"ieql: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"ieql: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
