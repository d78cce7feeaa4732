"""``hsphere`` command-line interface.

Subcommands: ``mean``, ``test-one``, ``test-two`` and ``simulate``. Every run
writes a ``manifest.json`` next to its outputs. Exit codes: 0 success,
2 invalid input, 3 numerical failure (convergence or conditioning), 4 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConditioningError, ConvergenceError, DimensionError, DomainError, HilbertSphereError, ValidationError
from .estimation import check_support, frechet_mean
from .geometry import SpherePoint
from .inference import KINDS, flat_density_two_sample, one_sample_suite, parse_method, two_sample_suite
from .io import FORMATS, RunManifest, ingest_densities, write_function_csv, write_json
from .simulation import SimConfig, run_power_study

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4

METHOD_ALIASES = {"extrinsic": "extrinsic_bootstrap", "flat": "flat_density_bootstrap"}
DEFAULT_FVE = 0.95

# simulate config keys; the axes accept comma-separated lists
_AXES = {"delta": float, "n_g": int, "K_mu": int, "score_dist": str}
_SCALARS = {"K_X": int, "grid_size": int, "runs": int, "B": int, "n_draws": int, "seed": int, "alpha": float, "workers": int}
DEFAULT_SIM_METHODS = ("norm_asymptotic", "proj_asymptotic:0.95")


def _method(name: str, fve: float | None):
    kind = METHOD_ALIASES.get(name, name.replace("-", "_"))
    if kind.startswith("proj") and fve is None:
        fve = DEFAULT_FVE
    return parse_method((kind, fve if kind.startswith("proj") else None))


def _load(path, args):
    sample, table = ingest_densities(path, args.format, args.strict_positive)
    return sample, table


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, command: str, inputs, seed):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "command")}
    m = RunManifest(command=command, config=config, seed=seed)
    for p in inputs:
        m.add_input(p)
    return m


def cmd_mean(args) -> int:
    if len(args.inputs) not in (1, 2):
        raise ValidationError("mean takes one or two input files")
    out = _out_dir(args.out)
    manifest = _manifest(args, "mean", args.inputs, None)
    t0 = time.perf_counter()
    means, diags = [], []
    for path in args.inputs:
        sample, _ = _load(path, args)
        res = frechet_mean(sample)
        sup = check_support(sample)
        means.append(res.mean)
        diags.append({
            "input": str(path),
            "n": len(sample),
            "iterations": res.iterations,
            "final_gradient_norm": res.final_gradient_norm,
            "functional_value": res.functional_value,
            "support_diameter": sup.diameter,
            "support_ok": sup.satisfied,
        })
    if len(means) == 1:
        write_function_csv(out / "mean.csv", means[0].grid, means[0].coef)
    else:
        a, b = means
        if not a.grid.same_as(b.grid):
            raise ValidationError("the two inputs use different zones or weights")
        write_function_csv(out / "mean_1.csv", a.grid, a.coef)
        write_function_csv(out / "mean_2.csv", b.grid, b.coef)
        write_function_csv(out / "difference.csv", a.grid, a.coef**2 - b.coef**2)
    write_json(out / "diagnostics.json", diags)
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    manifest.write(out)
    return EXIT_OK


def _uniform_point(grid) -> SpherePoint:
    return SpherePoint(grid, np.full(grid.size, grid.constant()))


def cmd_test(args) -> int:
    two = args.command == "test-two"
    method = _method(args.method, args.fve)
    out = _out_dir(args.out)
    inputs = list(args.inputs) + ([args.mu0] if not two and args.mu0 else [])
    manifest = _manifest(args, args.command, inputs, args.seed)
    t0 = time.perf_counter()
    if two:
        (s1, t1), (s2, t2) = _load(args.inputs[0], args), _load(args.inputs[1], args)
        if not s1.grid.same_as(s2.grid):
            raise ValidationError("the two inputs use different zones or weights")
        if method.kind == "flat_density_bootstrap":
            report = flat_density_two_sample(t1.densities, t2.densities, s1.grid, B=args.boot, seed=args.seed)
        else:
            report = two_sample_suite(s1, s2, [method], B=args.boot, n_draws=args.draws, seed=args.seed)[method.label]
    else:
        sample, _ = _load(args.inputs[0], args)
        if args.mu0:
            ref, _ = _load(args.mu0, args)
            if len(ref) != 1 or not ref.grid.same_as(sample.grid):
                raise ValidationError("--mu0 must hold exactly one density on the same zones")
            mu0 = ref[0]
        else:
            mu0 = _uniform_point(sample.grid)
        report = one_sample_suite(sample, mu0, [method], B=args.boot, n_draws=args.draws, seed=args.seed)[method.label]
    write_json(out / "report.json", report.to_dict())
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    manifest.write(out)
    return EXIT_OK


def parse_sim_config(text: str) -> dict:
    """Parse ``key = value`` lines; list-valued keys take comma-separated values."""
    known = set(_AXES) | set(_SCALARS) | {"methods"}
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ValidationError(f"line {lineno}: expected key = value")
        if key not in known:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        if key in cfg:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        items = [v.strip() for v in value.split(",") if v.strip()]
        if not items:
            raise ValidationError(f"line {lineno}: empty value for {key!r}")
        try:
            if key == "methods":
                cfg[key] = [parse_method(m.replace("-", "_")).label for m in items]
            elif key in _AXES:
                cfg[key] = [_AXES[key](v) for v in items]
            else:
                if len(items) != 1:
                    raise ValidationError(f"line {lineno}: {key!r} takes a single value")
                cfg[key] = _SCALARS[key](items[0])
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return cfg


def cmd_simulate(args) -> int:
    cfg = parse_sim_config(Path(args.config).read_text(encoding="utf-8"))
    for flag, key in (("seed", "seed"), ("boot", "B"), ("draws", "n_draws"), ("grid", "grid_size"), ("workers", "workers")):
        if getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    methods = cfg.pop("methods", list(DEFAULT_SIM_METHODS))
    workers = cfg.pop("workers", 1)
    axes = {k: cfg.pop(k) for k in list(_AXES) if k in cfg}
    base = SimConfig(**cfg, **{k: v[0] for k, v in axes.items()})
    for k, values in axes.items():
        for v in values:
            dataclasses.replace(base, **{k: v})  # validates every axis value before any work starts
    out = _out_dir(args.out)
    # workers is excluded from the manifest config: results do not depend on it
    manifest = RunManifest(
        command="simulate",
        config={"sim": dataclasses.asdict(base), "axes": axes, "methods": methods},
        seed=base.seed,
    )
    manifest.add_input(args.config)
    t0 = time.perf_counter()
    table = run_power_study(
        base, methods,
        deltas=axes.get("delta"), n_gs=axes.get("n_g"), K_mus=axes.get("K_mu"), score_dists=axes.get("score_dist"),
        workers=workers,
    )
    (out / "power.csv").write_text(table.to_csv(), encoding="utf-8", newline="\n")
    (out / "power.json").write_text(table.to_json(), encoding="utf-8", newline="\n")
    manifest.timings["total_seconds"] = time.perf_counter() - t0
    manifest.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsphere", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp):
        sp.add_argument("--format", choices=FORMATS, default="csv_wide")
        sp.add_argument("--strict-positive", action="store_true", help="reject zero entries")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("mean", help="Frechet mean of one or two density files")
    sp.add_argument("inputs", nargs="+")
    data_flags(sp)
    sp.set_defaults(func=cmd_mean)

    method_names = sorted(set(KINDS) | set(METHOD_ALIASES) | {k.replace("_", "-") for k in KINDS})
    for name, n_in in (("test-one", 1), ("test-two", 2)):
        sp = sub.add_parser(name, help=f"{'one' if n_in == 1 else 'two'}-sample mean test")
        sp.add_argument("inputs", nargs=n_in)
        sp.add_argument("--method", required=True, choices=method_names, metavar="METHOD",
                        help="norm_asymptotic, proj_asymptotic, norm_bootstrap, proj_bootstrap, extrinsic or flat")
        sp.add_argument("--fve", type=float, default=None, help=f"FVE threshold for projection tests (default {DEFAULT_FVE})")
        sp.add_argument("--boot", type=int, default=499, help="bootstrap replicates")
        sp.add_argument("--draws", type=int, default=100_000, help="Monte Carlo draws for the weighted chi-square law")
        sp.add_argument("--seed", type=int, default=0)
        if n_in == 1:
            sp.add_argument("--mu0", help="file with the single null density (default: uniform)")
        data_flags(sp)
        sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("simulate", help="power study from a key=value config file")
    sp.add_argument("config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--boot", type=int)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--grid", type=int, help="grid size M")
    sp.add_argument("--workers", type=int, help="worker processes (results do not depend on this)")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, ConditioningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DomainError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HilbertSphereError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
