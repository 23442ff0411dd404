"""Command-line front end: ``list``, ``run`` and ``lorentz``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import lorentz
from .experiments import (
    builtin,
    builtin_names,
    parse_fraction,
    run_sweep,
    velocity_field,
    write_plot_script,
)
from .mesh import MeshError
from .operators import FaceVelocity
from .reference import ReferenceError
from .splitting import face_samples

log = logging.getLogger("splitcd")

EXIT_INFRA = 1
EXIT_USAGE = 2

RUN_KEYS = ("tau", "K", "K_policy", "n", "rtol", "atol", "out", "plot", "cache_dir", "jobs")


class UsageError(Exception):
    pass


# config handling ----------------------------------------------------------------


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in RUN_KEYS:
            raise UsageError(f"{path}:{lineno}: bad config line {raw!r}")
        out[key] = value.strip()
    return out


def parse_taus(text: str) -> tuple:
    try:
        taus = tuple(parse_fraction(t) for t in str(text).split(",") if t.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad tau list {text!r}: {exc}") from None
    if not taus or any(t <= 0 for t in taus):
        raise UsageError(f"bad tau list {text!r}")
    return taus


def _typed(key, value):
    if value is None:
        return None
    try:
        if key in ("n", "jobs"):
            return int(value)
        if key in ("K", "rtol", "atol"):
            return float(value)
        if key == "plot":
            if isinstance(value, bool):
                return value
            return str(value).lower() in ("1", "true", "yes", "on")
    except ValueError:
        raise UsageError(f"invalid value for {key}: {value!r}") from None
    return value


def merged_options(args) -> dict:
    opts = read_config(args.config) if args.config else {}
    for key in RUN_KEYS:
        flag = getattr(args, key)
        if flag is not None and flag is not False:
            opts[key] = flag
    return {k: _typed(k, v) for k, v in opts.items()}


def apply_overrides(spec, opts: dict):
    changes = {}
    if opts.get("tau") is not None:
        changes["taus"] = parse_taus(opts["tau"])
    if opts.get("n") is not None:
        changes["n"] = opts["n"]
    for key in ("rtol", "atol"):
        if opts.get(key) is not None:
            changes[key] = opts[key]
    if opts.get("K") is not None:
        changes["K"] = opts["K"]
        changes["K_policy"] = opts.get("K_policy") or "fixed"
    elif opts.get("K_policy") is not None:
        changes["K_policy"] = opts["K_policy"]
    try:
        return replace(spec, **changes)
    except (ValueError, MeshError) as exc:
        raise UsageError(f"invalid override: {exc}") from None


# commands -----------------------------------------------------------------------


def cmd_list(args) -> int:
    for name in builtin_names():
        spec = builtin(name)
        print(f"{name:<6} {spec.dim}D  {spec.description}")
        if args.verbose:
            taus = ",".join(str(t) for t in spec.taus)
            print(f"       n={spec.n} nu={spec.nu:g} T={spec.T} taus={taus} K-policy={spec.K_policy}")
    return 0


def cmd_run(args) -> int:
    try:
        spec = builtin(args.experiment)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    opts = merged_options(args)
    spec = apply_overrides(spec, opts)
    jobs = opts.get("jobs") or 1
    if jobs < 1:
        raise UsageError("jobs must be >= 1")
    out = Path(opts.get("out") or f"{spec.name}.csv")
    try:
        report = run_sweep(spec, cache_dir=opts.get("cache_dir"), jobs=jobs)
    except (ReferenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    print(report.table())
    print(f"wrote {out}")
    if opts.get("plot"):
        from .plotting import render_report

        script = out.with_suffix(".gp")
        write_plot_script(report, out, script)
        image = render_report(report, out.with_suffix(".png"))
        print(f"wrote {script}")
        print(f"wrote {image}")
    return 0


# lorentz toolkit ----------------------------------------------------------------

MESHES = ("unit-disk-grid", "unit-disk-uniform", "unit-square", "ex1")


def _parse_kv(items) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected key=value, got {item!r}")
        out[key] = value
    return out


def _float(params, key, default=None):
    if key not in params:
        if default is None:
            raise UsageError(f"missing parameter {key}")
        return default
    raw = params.pop(key)
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"parameter {key} is not a number: {raw!r}") from None


def build_field(name: str, params: dict) -> tuple:
    """Return ``(SampledFunction, N)`` for a named field on a named sampling mesh."""
    mesh = params.pop("mesh", "unit-disk-grid")
    if mesh not in MESHES:
        raise UsageError(f"unknown mesh {mesh!r}; choose from {', '.join(MESHES)}")
    N = int(_float(params, "N", 2.0))
    if N < 2:
        raise UsageError("N must be >= 2")
    if name == "ex1":
        spec = builtin("ex1")
        fv = FaceVelocity.from_function(spec.mesh(), velocity_field(spec.velocity, {}))
        return face_samples(fv), 2
    if name == "inv_r":
        M = _float(params, "M", 1.0)
        fn = lambda x: M / np.linalg.norm(x, axis=1)
        profile = lambda r: M / r
    elif name == "const":
        c = _float(params, "c")
        fn = lambda x: np.full(len(x), c)
        profile = lambda r: np.full(len(r), c)
    else:
        raise UsageError(f"unknown field {name!r}; choose from inv_r, const, ex1")
    if mesh == "ex1":
        raise UsageError("mesh=ex1 only applies to the ex1 field")
    if mesh == "unit-disk-grid":
        if N == 2:
            return lorentz.polar_samples(fn), N
        return lorentz.radial_samples(profile, N), N
    if N != 2:
        raise UsageError(f"mesh {mesh} is two-dimensional")
    if mesh == "unit-disk-uniform":
        return lorentz.disk_grid_samples(fn), N
    return lorentz.grid_samples(fn, (0.0, 0.0), (1.0, 1.0), 400), N


def cmd_lorentz(args) -> int:
    params = _parse_kv(args.params)
    g, N = build_field(args.field, params)
    if args.quantity == "weaknorm":
        p = _float(params, "p", float(N))
        if p < 1:
            raise UsageError("p must be >= 1")
        _reject_extra(params)
        print(f"weaknorm {lorentz.weak_norm(g, p):.10g}")
    elif args.quantity == "dist":
        K_max = _float(params, "K_max", 1e3)
        _reject_extra(params)
        est = lorentz.distance_to_bounded(g, N, lorentz.default_K_grid(1e-2, K_max, 20))
        print(f"dist {est.value:.10g}")
    else:
        if "delta" in params:
            delta = _float(params, "delta")
        elif "eta" in params:
            try:
                delta = lorentz.delta_threshold(_float(params, "eta"), N)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        else:
            raise UsageError("selectK needs delta=... or eta=...")
        _reject_extra(params)
        level = lorentz.select_truncation_level(g, N, delta)
        flag = "certified" if level.certified else "uncertified"
        print(f"K {level.K:.10g} remainder {level.delta:.10g} {flag}")
    return 0


def _reject_extra(params):
    if params:
        raise UsageError(f"unused parameters: {', '.join(sorted(params))}")


# entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitcd",
        description="Classical and adapted Lie splitting for convection-diffusion with singular drift.",
    )
    parser.add_argument("-v", "--verbose-log", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list", help="list builtin experiments")
    p.add_argument("--verbose", action="store_true", help="also show mesh, tau ladder and K policy")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("run", help="run a tau sweep and write a CSV report")
    p.add_argument("experiment", help="builtin experiment name (see `list`)")
    p.add_argument("--tau", help="comma-separated step sizes, fractions allowed (1/160)")
    p.add_argument("--K", type=float, help="truncation level (implies --K-policy fixed)")
    p.add_argument("--K-policy", dest="K_policy", choices=("fixed", "certified", "median10"))
    p.add_argument("--n", type=int, help="interior nodes per axis")
    p.add_argument("--rtol", type=float, help="reference relative tolerance")
    p.add_argument("--atol", type=float, help="reference absolute tolerance")
    p.add_argument("--out", help="CSV path (default <experiment>.csv)")
    p.add_argument("--plot", action="store_true", help="also write a gnuplot script and a PNG figure")
    p.add_argument("--cache-dir", dest="cache_dir", help="reference cache directory")
    p.add_argument("--jobs", type=int, help="parallel sweep jobs")
    p.add_argument("--config", help="key = value file with the same options; flags win")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("lorentz", help="Lorentz-space numerics on analytic fields")
    p.add_argument("quantity", choices=("weaknorm", "dist", "selectK"))
    p.add_argument("field", help="inv_r, const or ex1")
    p.add_argument(
        "params", nargs="*",
        help="key=value: M, c, N, p, K_max, delta, eta, mesh={%s}" % ",".join(MESHES),
    )
    p.set_defaults(func=cmd_lorentz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose_log else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
