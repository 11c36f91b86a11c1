"""Command-line front end: ``run`` an experiment from a YAML config, or
``classify`` the points of a CSV dataset.

Exit codes: 0 success, 2 invalid input, 3 numerical failure during a run
(partial outputs are kept and the MANIFEST says so).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from robust_bo import __version__
from robust_bo.bench import NO_OUTLIERS, ExperimentConfig, ExperimentResult, ObjectiveSpec, run_experiment
from robust_bo.diagnostics import FilterConfig, classify_outliers
from robust_bo.engine import FitSettings, Mode
from robust_bo.errors import ContractViolation, NumericalFailure
from robust_bo.gp import Dataset
from robust_bo.kernels import KernelFamily, KernelParams
from robust_bo.laplace import StudentTLikParams, laplace_fit
from robust_bo.rng import ALGORITHM, keyed_rng

log = logging.getLogger("robust_bo")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    """Invalid configuration; ``where`` is a ``file:line:col`` style anchor."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# config schema

def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _pos_int(v):
    v = _int(v)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {v}")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _optional(parse):
    def inner(v):
        return None if v is None else parse(v)
    return inner


def _float_list(v):
    if not isinstance(v, list) or not v:
        raise ValueError(f"expected a non-empty list of numbers, got {v!r}")
    return tuple(_float(x) for x in v)


def _bounds(v):
    if not isinstance(v, list) or not v:
        raise ValueError("expected a list of [low, high] pairs")
    out = []
    for pair in v:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValueError(f"expected a [low, high] pair, got {pair!r}")
        lo, hi = _float(pair[0]), _float(pair[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"need finite low < high, got {pair!r}")
        out.append((lo, hi))
    return tuple(out)


def _kernel(v):
    try:
        return KernelFamily(v).value
    except ValueError:
        names = ", ".join(k.value for k in KernelFamily)
        raise ValueError(f"unknown kernel {v!r}; choose from {names}") from None


def _modes(v):
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of modes")
    allowed = [m.value for m in Mode] + [NO_OUTLIERS]
    for m in v:
        if m not in allowed:
            raise ValueError(f"unknown mode {m!r}; choose from {', '.join(allowed)}")
    if len(set(v)) != len(v):
        raise ValueError("modes must be distinct")
    return tuple(v)


def _rates(v):
    rates = _float_list(v)
    if any(not 0 <= r <= 1 for r in rates):
        raise ValueError("outlier rates must lie in [0, 1]")
    if len(set(rates)) != len(rates):
        raise ValueError("outlier rates must be distinct")
    return rates


def _str(v):
    if not isinstance(v, str) or not v:
        raise ValueError(f"expected a non-empty string, got {v!r}")
    return v


def _seed(v):
    v = _int(v)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


SCHEMA = {
    "objective": {
        "kernel": _kernel,
        "d": _pos_int,
        "bounds": _optional(_bounds),
        "lengthscale_fraction": _float,
        "lengthscales": _optional(_float_list),
        "signal_variance": _float,
        "rq_alpha": _float,
        "n_anchors": _int,
        "min_search_points": _pos_int,
    },
    "modes": _modes,
    "outlier_rates": _rates,
    "trials": _pos_int,
    "budget": _pos_int,
    "init_count": _pos_int,
    "filter": {"alpha": _float, "n_init": _pos_int, "n_s": _pos_int},
    "persist_mask": _bool,
    "dof": _float,
    "fit": {
        "first_restarts": _int,
        "restarts": _int,
        "refresh_every": _int,
        "maxfev": _pos_int,
        "warm_maxfev": _pos_int,
    },
    "n_candidates": _pos_int,
    "seed": _seed,
    "out": _str,
}


def default_config() -> dict:
    """Every key of the schema with its default value, as plain data."""
    cfg = ExperimentConfig()
    data = {
        "objective": _plain(dataclasses.asdict(cfg.objective)),
        "modes": list(cfg.modes),
        "outlier_rates": list(cfg.outlier_rates),
        "trials": cfg.trials,
        "budget": cfg.budget,
        "init_count": cfg.init_count,
        "filter": dataclasses.asdict(cfg.filter),
        "persist_mask": cfg.persist_mask,
        "dof": cfg.dof,
        "fit": dataclasses.asdict(cfg.fit),
        "n_candidates": cfg.n_candidates,
        "seed": cfg.seed,
        "out": "runs",
    }
    return data


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, KernelFamily):
        return obj.value
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _mark(node, source: str) -> str:
    m = node.start_mark
    return f"{source}:{m.line + 1}:{m.column + 1}"


def _walk(node, schema, loader, source, path):
    """Validate a mapping node against ``schema``; returns parsed plain values."""
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(_mark(node, source), f"{'.'.join(path) or 'document'} must be a mapping")
    out = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        where = _mark(key_node, source)
        if key not in schema:
            dotted = ".".join([*path, str(key)])
            raise ConfigError(where, f"unknown key {dotted!r}")
        if key in out:
            raise ConfigError(where, f"duplicate key {'.'.join([*path, key])!r}")
        rule = schema[key]
        if isinstance(rule, dict):
            out[key] = _walk(value_node, rule, loader, source, [*path, key])
        else:
            value = loader.construct_object(value_node, deep=True)
            try:
                out[key] = _plain(rule(value))
            except ValueError as exc:
                raise ConfigError(_mark(value_node, source), f"{'.'.join([*path, key])}: {exc}") from None
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and validate YAML text; errors carry ``source:line:col``."""
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(where, f"YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    finally:
        loader.dispose()
    if node is None:
        return {}
    return _walk(node, SCHEMA, loader, source, [])


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def apply_override(data: dict, item: str) -> dict:
    """Apply one ``dotted.key=value`` override (value parsed as YAML)."""
    where = f"override {item!r}"
    if "=" not in item:
        raise ConfigError(where, "expected key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    rule = SCHEMA
    for p in parts:
        if not isinstance(rule, dict) or p not in rule:
            raise ConfigError(where, f"unknown key {key.strip()!r}")
        rule = rule[p]
    if isinstance(rule, dict):
        raise ConfigError(where, f"{key.strip()!r} is a section, set its keys individually")
    try:
        value = rule(yaml.safe_load(raw))
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(where, str(exc)) from None
    patch: dict = {parts[-1]: _plain(value)}
    for p in reversed(parts[:-1]):
        patch = {p: patch}
    return _merge(data, patch)


def resolve_config(text: str | None, source: str, overrides=(), seed=None, out=None) -> dict:
    data = default_config()
    if text is not None:
        data = _merge(data, parse_config_text(text, source))
    for item in overrides:
        data = apply_override(data, item)
    if seed is not None:
        data["seed"] = _seed(seed)
    if out is not None:
        data["out"] = out
    return data


def build_experiment(data: dict) -> ExperimentConfig:
    obj = dict(data["objective"])
    if obj["bounds"] is not None:
        obj["bounds"] = tuple(tuple(b) for b in obj["bounds"])
    if obj["lengthscales"] is not None:
        obj["lengthscales"] = tuple(obj["lengthscales"])
    try:
        spec = ObjectiveSpec(**obj)
        if spec.bounds is not None and len(spec.bounds) != spec.d:
            raise ContractViolation(f"bounds has {len(spec.bounds)} rows but d = {spec.d}")
        if spec.lengthscales is not None and len(spec.lengthscales) != spec.d:
            raise ContractViolation(f"lengthscales has {len(spec.lengthscales)} entries but d = {spec.d}")
        spec.generator_kernel()
        cfg = ExperimentConfig(
            objective=spec,
            modes=tuple(data["modes"]),
            outlier_rates=tuple(data["outlier_rates"]),
            trials=data["trials"],
            budget=data["budget"],
            init_count=data["init_count"],
            filter=FilterConfig(**data["filter"]),
            persist_mask=data["persist_mask"],
            dof=data["dof"],
            fit=FitSettings(**data["fit"]),
            n_candidates=data["n_candidates"],
            seed=data["seed"],
        )
        StudentTLikParams(cfg.dof)
        if cfg.init_count < 2 or cfg.budget < cfg.init_count:
            raise ContractViolation("need init_count >= 2 and budget >= init_count")
    except (ContractViolation, ValueError, TypeError) as exc:
        raise ConfigError("config", str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# outputs

def _f(x) -> str:
    return repr(float(x))


def _rate_tag(rate: float) -> str:
    return f"rho{float(rate)!r}"


def run_filename(mode: str, rate: float, trial: int) -> str:
    return f"{mode}_{_rate_tag(rate)}_trial{trial:03d}.csv"


def summary_filename(mode: str, rate: float) -> str:
    return f"summary_{mode}_{_rate_tag(rate)}.csv"


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_outputs(result: ExperimentResult, data: dict, out: Path) -> list[str]:
    """Write the snapshot, run CSVs, summaries and minima; returns file names."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    snapshot = {"version": __version__, "rng": ALGORITHM, "config": data}
    (out / "config.yaml").write_text(yaml.safe_dump(snapshot, sort_keys=False))
    written.append("config.yaml")

    d = result.config.objective.d
    header = ["iteration", *[f"x_{j}" for j in range(d)], "y_observed", "was_outlier",
              "is_masked", "y_star_true"]
    minima = {}
    for run in sorted(result.runs, key=lambda r: (r.mode, r.rate, r.trial)):
        masked = ~run.log.last_mask if run.log.last_mask is not None else np.zeros(len(run.log), bool)
        rows = [
            [rec.iteration, *[_f(v) for v in rec.x], _f(rec.y_observed),
             int(bool(rec.was_outlier)), int(masked[i]), _f(rec.y_star_true)]
            for i, rec in enumerate(run.log.records)
        ]
        name = run_filename(run.mode, run.rate, run.trial)
        _write_csv(out / name, header, rows)
        written.append(name)
        minima[run.trial] = run.f_min

    _write_csv(out / "minima.csv", ["trial", "f_min"], [[t, _f(v)] for t, v in sorted(minima.items())])
    written.append("minima.csv")

    for s in result.summaries:
        rows = [[k + 1, _f(m), _f(h)] for k, (m, h) in enumerate(zip(s.mean_regret, s.ci_halfwidth))]
        name = summary_filename(s.mode, s.rate)
        _write_csv(out / name, ["iteration", "mean_regret", "ci_halfwidth"], rows)
        written.append(name)
    return written


def write_manifest(out: Path, files, errors) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"status: {'incomplete' if errors else 'complete'}"]
    lines += [f"error: {e}" for e in errors]
    lines += [f"file: {f}" for f in files]
    (out / "MANIFEST").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text() if args.config else None
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        data = resolve_config(text, args.config or "<defaults>", args.overrides, args.seed, args.out)
        cfg = build_experiment(data)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(data["out"])
    try:
        result = run_experiment(cfg, jobs=args.jobs)
    except (NumericalFailure, ArithmeticError) as exc:
        write_manifest(out, [], [f"numerical failure: {exc}"])
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    files = write_outputs(result, data, out)
    write_manifest(out, files, result.errors)
    if result.errors:
        for e in result.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    for s in result.summaries:
        print(f"{s.mode:>14s} rho={s.rate:<4} final mean regret {s.final:.4g} "
              f"(+/- {s.ci_halfwidth[-1]:.2g})")
    return EXIT_OK


def read_dataset_csv(path: str) -> Dataset:
    """Read ``x_0..x_{d-1},y`` columns; raises ValueError on any malformation."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from None
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError("empty file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"x_{j}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise ValueError(f"header must be {','.join(expected) if d >= 1 else 'x_0,...,y'}, got {','.join(header)}")
    body = rows[1:]
    if len(body) < 2:
        raise ValueError(f"need at least 2 data rows, got {len(body)}")
    values = np.empty((len(body), d + 1))
    for i, r in enumerate(body):
        if len(r) != d + 1:
            raise ValueError(f"row {i + 2}: expected {d + 1} fields, got {len(r)}")
        try:
            values[i] = [float(v) for v in r]
        except ValueError:
            raise ValueError(f"row {i + 2}: non-numeric field") from None
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite value in data")
    return Dataset(values[:, :d], values[:, d])


def cmd_classify(args) -> int:
    try:
        data = read_dataset_csv(args.dataset)
        filt = FilterConfig(alpha=args.alpha)
        lik = StudentTLikParams(args.dof, args.noise_scale or 0.1 * max(float(np.std(data.y)), 1e-3))
    except (ValueError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    width = np.ptp(data.X, axis=0)
    width = np.where(width > 0, width, 1.0)
    try:
        ls = np.asarray(args.lengthscale, dtype=float) if args.lengthscale else 0.25 * width
        if ls.size == 1:
            ls = np.full(data.dim, float(ls.reshape(-1)[0]))
        kernel = KernelParams(ls, args.signal_variance or max(float(np.var(data.y)), 1e-4))
    except (ValueError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        model = laplace_fit(data, kernel, lik, not args.no_optimize, input_range=width,
                            rng=keyed_rng(args.seed, "classify"))
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = classify_outliers(data, model, filt)
    if report.reverted:
        print("note: classification reverted to all inliers", file=sys.stderr)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["index", "label", "score"])
    for i, (inl, score) in enumerate(zip(report.inlier_mask, report.scores)):
        w.writerow([i, "inlier" if inl else "outlier", _f(score)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-bo", description="Outlier-robust Bayesian optimization benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark experiment")
    run.add_argument("--config", help="YAML experiment config (defaults used if omitted)")
    run.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    run.add_argument("--seed", type=int, help="override the experiment seed")
    run.add_argument("--out", help="output directory (overrides config 'out')")
    run.add_argument("overrides", nargs="*", metavar="key=value",
                     help="dotted config overrides, e.g. objective.d=3")
    run.set_defaults(func=cmd_run)

    cls = sub.add_parser("classify", help="label points of a CSV dataset as inliers or outliers")
    cls.add_argument("dataset", help="CSV with header x_0,...,x_{d-1},y")
    cls.add_argument("--alpha", type=float, default=0.05, help="tail mass per side")
    cls.add_argument("--dof", type=float, default=4.0, help="Student-t degrees of freedom")
    cls.add_argument("--noise-scale", type=float, help="initial Student-t scale")
    cls.add_argument("--lengthscale", type=float, nargs="+", help="initial lengthscale(s)")
    cls.add_argument("--signal-variance", type=float, help="initial signal variance")
    cls.add_argument("--no-optimize", action="store_true", help="keep the given hyperparameters")
    cls.add_argument("--seed", type=int, default=0, help="seed for optimizer restarts")
    cls.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
