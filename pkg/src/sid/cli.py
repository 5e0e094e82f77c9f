"""Command-line front end.

    sid list-systems
    sid discover --config run.yaml [--out DIR] [--seed N] [--allow-large]
    sid validate --config run.yaml [--report DIR/report.json] [--out DIR] [--seed N]
    sid sweep    --config run.yaml [--degrees 1 2 3] [--out DIR] [--seed N] [--allow-large]

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 a validation threshold was not met.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import detector, report, simulate
from .detector import DiscoverOptions, SparsifyOptions
from .polybasis import BasisSizeError, basis_size, enumerate_monomials
from .systems import SamplerError, get_system, system_names

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4

LARGE_K = 5000  # bases bigger than this need --allow-large

log = logging.getLogger("sid")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SparsifyConfig:
    max_sweeps: int = 100
    restarts: int = 4
    tol: float = 1e-8
    grid: int = 512


@dataclass
class SnapConfig:
    max_den: int = 12
    entry_tol: float = 0.02
    conservation_tol: float = 10.0
    check_points: int = 200  # held-out states for the conservation check


@dataclass
class ValidationConfig:
    n_cases: int = 100
    horizon: Optional[float] = None  # system default when unset
    cv_threshold: float = 1e-6
    min_pass_fraction: float = 1.0
    method: str = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-12
    dt: float = 1e-3
    n_out: int = 201


@dataclass
class RunConfig:
    """One run, read from a YAML mapping.  ``system`` and ``degree`` are required.

    ``rate_constants`` (10 values, 1/min and 1/(ppm min)) and
    ``initial_ranges`` (``species: [lo, hi]`` in ppm) apply to the chemistry
    systems only.
    """

    system: str
    degree: int
    P: Optional[int] = None
    seed: int = 0
    eps: float = 1e-8
    threshold_mode: str = "absolute"
    rank_eps: float = 1e-8
    rank_points: int = 128
    out: str = "sid-out"
    degrees: Optional[list] = None
    rate_constants: Optional[list] = None
    initial_ranges: Optional[dict] = None
    sparsify: SparsifyConfig = field(default_factory=SparsifyConfig)
    snap: SnapConfig = field(default_factory=SnapConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def discover_options(self) -> DiscoverOptions:
        sp = SparsifyOptions(seed=self.seed, **asdict(self.sparsify))
        return DiscoverOptions(
            P=self.P, seed=self.seed, eps=self.eps, threshold_mode=self.threshold_mode,
            rank_eps=self.rank_eps, rank_points=self.rank_points, sparsify=sp,
        )

    def build_system(self, name: Optional[str] = None):
        try:
            return get_system(name or self.system, self.rate_constants, self.initial_ranges)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


_NESTED = {"sparsify": SparsifyConfig, "snap": SnapConfig, "validation": ValidationConfig}
_NONNEG = {"seed"}


def _check_value(where: str, name: str, value, default):
    """Type and sign check against the field default's type."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}{name}: expected true/false")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}{name}: expected a string")
        return value
    if isinstance(default, int) or name in ("degree", "P", "n_cases"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}{name}: expected an integer")
    elif isinstance(default, float) or name in ("horizon",):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}{name}: expected a number")
        value = float(value)
    else:
        return value
    if value < 0 or (value == 0 and name not in _NONNEG):
        raise ConfigError(f"{where}{name}: must be positive, got {value}")
    return value


def _strict(cls, data, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config: '}unknown key(s) {', '.join(map(repr, unknown))}")
    kwargs = {}
    for name, value in data.items():
        if name in _NESTED:
            kwargs[name] = _strict(_NESTED[name], value or {}, f"{name}.")
            continue
        f = known[name]
        if value is None:
            if "Optional" not in str(f.type):
                raise ConfigError(f"{where}{name}: may not be null")
            kwargs[name] = None
            continue
        default = None if f.default is MISSING else f.default
        kwargs[name] = _check_value(where, name, value, default)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config: '}{exc}") from exc


def _post_checks(cfg: RunConfig) -> RunConfig:
    if cfg.system not in system_names():
        raise ConfigError(f"system: unknown {cfg.system!r}; known: {', '.join(system_names())}")
    if cfg.threshold_mode not in detector.THRESHOLD_MODES:
        raise ConfigError(f"threshold_mode: one of {', '.join(detector.THRESHOLD_MODES)}")
    if cfg.validation.method not in ("rk45", "rk4"):
        raise ConfigError("validation.method: one of rk45, rk4")
    if cfg.validation.min_pass_fraction > 1:
        raise ConfigError("validation.min_pass_fraction: must be at most 1")
    if cfg.validation.n_out < 2:
        raise ConfigError("validation.n_out: need at least 2 samples")
    if cfg.degrees is not None:
        if not isinstance(cfg.degrees, list) or not all(isinstance(n, int) and n > 0 for n in cfg.degrees):
            raise ConfigError("degrees: expected a list of positive integers")
    if cfg.rate_constants is not None:
        if not isinstance(cfg.rate_constants, list) or not all(
            isinstance(k, (int, float)) and k > 0 for k in cfg.rate_constants
        ):
            raise ConfigError("rate_constants: expected a list of positive numbers")
    if cfg.initial_ranges is not None and not isinstance(cfg.initial_ranges, dict):
        raise ConfigError("initial_ranges: expected a mapping species -> [lo, hi]")
    cfg.build_system()  # surfaces bad chemistry overrides now
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration, rejecting unknown keys."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return _post_checks(_strict(RunConfig, data))


# ---------------------------------------------------------------------------
# commands


def _gate(system, degree: int, allow_large: bool) -> int:
    K = basis_size(system.dim, degree)
    if K > LARGE_K and not allow_large:
        raise ConfigError(f"{system.name} degree {degree} has K={K} basis functions; pass --allow-large to run it")
    return K


def _snap_matrix(cfg: RunConfig, system, basis) -> np.ndarray:
    pts = detector.sample_states(system, cfg.snap.check_points, cfg.seed + 1)
    return detector.build_g_matrix(system, basis, pts)


def _formulas(cfg: RunConfig, rep, system) -> list[str]:
    G = _snap_matrix(cfg, system, rep.basis)
    return report.invariant_formulas(
        rep, snap=True, G=G, max_den=cfg.snap.max_den,
        entry_tol=cfg.snap.entry_tol, conservation_tol=cfg.snap.conservation_tol,
    )


def cmd_list_systems(args) -> int:
    for name in system_names():
        s = get_system(name)
        print(f"{name}, d={s.dim}, known CQs: {len(s.catalog)}")
    return EXIT_OK


def _run_discover(cfg: RunConfig, degree: int, out: Path, allow_large: bool):
    system = cfg.build_system()
    _gate(system, degree, allow_large)
    basis = enumerate_monomials(system.dim, degree)
    rep = detector.discover(system, basis, cfg.discover_options())
    report.export(rep, out / "report.json", "json")
    report.export(rep, out, "csv")
    return system, rep


def cmd_discover(args) -> int:
    cfg = args.cfg
    out = Path(cfg.out)
    system, rep = _run_discover(cfg, cfg.degree, out, args.allow_large)
    formulas = _formulas(cfg, rep, system)
    lines = [f"H{i + 1} = {f}" for i, f in enumerate(formulas)]
    report._write(out / "formulas.txt", "".join(s + "\n" for s in lines))
    print(f"{rep.system} degree {cfg.degree}: K={rep.basis.size}, P={rep.P}")
    print(f"M={rep.M}, c={rep.c}")
    for s in lines:
        print(s)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = args.cfg
    out = Path(cfg.out)
    path = Path(args.report) if args.report else out / "report.json"
    try:
        rep = report.load_report(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc
    if rep.system != cfg.system:
        raise ConfigError(f"report is for {rep.system!r} but the config names {cfg.system!r}")
    system = cfg.build_system(rep.system)
    v = cfg.validation
    control = simulate.IntegrationControl(v.method, v.rtol, v.atol, v.dt, v.n_out)
    labels = [f"H{i + 1}" for i in range(rep.c)]
    stats = simulate.monte_carlo_validate(
        system, rep.stage3.theta, rep.basis, n_cases=v.n_cases, seed=cfg.seed,
        cv_threshold=v.cv_threshold, t_end=v.horizon, control=control, labels=labels,
    )
    report._write_csv(
        out / "validation_cases.csv",
        ["case", "invariant", "mean", "std", "cv", "absolute", "passed"],
        simulate.per_case_rows(stats),
    )
    # integration failures count against the pass fraction
    frac = stats.passed.sum(axis=0) / v.n_cases if stats.n_cases else np.zeros(rep.c)
    ok = frac >= v.min_pass_fraction
    summary = stats.to_dict()
    summary.update({
        "system": rep.system,
        "n_requested": v.n_cases,
        "min_pass_fraction": v.min_pass_fraction,
        "pass_fraction": frac.tolist(),
        "passed": ok.tolist(),
    })
    report._write(out / "validation.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    for lab, f, cv, good in zip(labels, frac, stats.max_cv, ok):
        print(f"{lab}: pass {f:.3f} (need {v.min_pass_fraction:g}), max CV {cv:.3g}, {'ok' if good else 'FAIL'}")
    if stats.failures:
        print(f"{len(stats.failures)} of {v.n_cases} cases failed to integrate", file=sys.stderr)
    if stats.n_cases == 0:
        print("no case could be integrated", file=sys.stderr)
        return EXIT_NUMERICAL
    if not ok.all():
        for lab, f in zip(labels, frac):
            if f < v.min_pass_fraction:
                print(f"threshold failed: {lab} pass fraction {f:.3f} < {v.min_pass_fraction:g} "
                      f"at CV < {v.cv_threshold:g}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = args.cfg
    degrees = args.degrees or cfg.degrees or [cfg.degree]
    if any(b <= a for a, b in zip(degrees, degrees[1:])):
        raise ConfigError("degrees must be strictly ascending")
    system = cfg.build_system()
    for n in degrees:
        _gate(system, n, args.allow_large)
    out = Path(cfg.out)
    rows, failed = [], 0
    print(f"{'degree':>6} {'K':>6} {'M':>5} {'c':>4} {'seconds':>8}")
    for n in degrees:
        K = basis_size(system.dim, n)
        t0 = time.perf_counter()
        try:
            _, rep = _run_discover(cfg, n, out / f"degree_{n}", args.allow_large)
        except (detector.FieldEvaluationError, detector.SelectionError, SamplerError,
                np.linalg.LinAlgError, BasisSizeError, FloatingPointError, MemoryError) as exc:
            failed += 1
            dt = time.perf_counter() - t0
            rows.append([n, K, "", "", f"{dt:.2f}", repr(exc)])
            print(f"{n:>6} {K:>6} {'-':>5} {'-':>4} {dt:>8.2f}  failed: {exc}", file=sys.stderr)
            continue
        dt = time.perf_counter() - t0
        rows.append([n, K, rep.M, rep.c, f"{dt:.2f}", ""])
        print(f"{n:>6} {K:>6} {rep.M:>5} {rep.c:>4} {dt:>8.2f}")
    report._write_csv(out / "sweep.csv", ["degree", "K", "M", "c", "seconds", "error"], rows)
    return EXIT_NUMERICAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sid", description="Discover conserved quantities of polynomial vector fields.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list-systems", help="list built-in systems").set_defaults(func=cmd_list_systems)

    def common(sp, large=True):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        if large:
            sp.add_argument("--allow-large", action="store_true", help=f"permit bases with more than {LARGE_K} terms")

    d = sub.add_parser("discover", help="run discovery for one basis degree")
    common(d)
    d.set_defaults(func=cmd_discover)

    v = sub.add_parser("validate", help="Monte Carlo conservation check of a report")
    common(v, large=False)
    v.add_argument("--report", help="report JSON (default: <out>/report.json)")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="discovery over several basis degrees")
    common(s)
    s.add_argument("--degrees", type=int, nargs="+", help="ascending degree list (overrides config)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if hasattr(args, "config"):
            cfg = load_config(args.config)
            if args.out is not None:
                cfg.out = args.out
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError("--seed must be non-negative")
                cfg.seed = args.seed
            args.cfg = cfg
        return args.func(args)
    except ConfigError as exc:
        print(f"sid: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except report.ReportIOError as exc:
        print(f"sid: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (detector.FieldEvaluationError, detector.SelectionError, SamplerError,
            np.linalg.LinAlgError, FloatingPointError, MemoryError) as exc:
        print(f"sid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BasisSizeError as exc:
        print(f"sid: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
