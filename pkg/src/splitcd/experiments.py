"""Canned experiments, tau sweeps, and convergence reports."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .flows import FlowError
from .mesh import BoundaryData, GridField, Mesh, SpaceTimeFunction, build_mesh, discrete_l2, read_field, sample, write_field
from .operators import FaceVelocity
from .reference import ReferenceError, reference_solve
from .splitting import ADAPTED, CLASSICAL, build_scheme, certified_K, integrate, median_K, unsplit_system

log = logging.getLogger(__name__)

DEFAULT_LADDER = tuple(Fraction(1, d) for d in (10, 20, 40, 80, 160))


# problem data ----------------------------------------------------------------


def _inv_abs(x):
    return np.sum(1.0 / np.abs(x), axis=1)


def velocity_field(name: str, params: dict):
    """Return ``c(x)`` mapping points ``(m, dim)`` to vectors ``(m, dim)``."""
    if name == "inv_abs_isotropic":
        # scalar c = sum 1/|x_i| applied along every axis
        M = params.get("M", 1.0)
        return lambda x: M * np.repeat(_inv_abs(x)[:, None], x.shape[1], axis=1)
    if name == "inv_abs_axis":
        M = params.get("M", 1.0)
        return lambda x: M / np.abs(x)
    if name == "smoothed_inv_abs":
        eps = params.get("eps", 0.1)
        return lambda x: np.repeat(np.sum(1.0 / np.sqrt(x**2 + eps**2), axis=1)[:, None], x.shape[1], axis=1)
    if name == "ex3d":
        N, gamma = params.get("N", 3), params.get("gamma", 2.0)

        def c(x):
            r = np.linalg.norm(x, axis=1)[:, None]
            return gamma * x / r**2 + (1.0 / (2 - N + gamma)) * (1 - r ** (N - 2 - gamma)) * x

        return c
    if name == "constant":
        v = np.asarray(params.get("vector", (1.0, 0.0)), dtype=float)
        return lambda x: np.broadcast_to(v, x.shape).copy()
    if name == "zero":
        return lambda x: np.zeros_like(x)
    raise KeyError(f"unknown velocity field {name!r}")


def boundary_data(name: str, lower, upper) -> BoundaryData:
    if name == "one":
        return BoundaryData(SpaceTimeFunction.constant(1.0))
    if name == "zero":
        return BoundaryData.homogeneous()
    if name == "ex2":
        lo, hi = lower[0], upper[0]

        def b(t, x):
            on_x = np.isclose(x[:, 0], lo) | np.isclose(x[:, 0], hi)
            return np.where(on_x, 1 + np.sin(5 * t), 1 + np.sin(10 * t))

        return BoundaryData(SpaceTimeFunction(b))
    raise KeyError(f"unknown boundary data {name!r}")


def initial_data(name: str, lower):
    if name == "ex1":
        lo = lower
        k = 2 * np.pi / 3
        return lambda t, x: 1 + np.sin(k * (x[:, 0] - lo[0])) * np.sin(k * (x[:, 1] - lo[1]))
    if name == "sin_pi":
        return lambda t, x: np.prod(np.sin(np.pi * x), axis=1)
    if name == "zero":
        return lambda t, x: np.zeros(x.shape[0])
    raise KeyError(f"unknown initial data {name!r}")


def source_term(name: str, params: dict) -> Optional[SpaceTimeFunction]:
    if name == "zero":
        return None
    if name == "ex3d":
        # -div(x / |x|^k) = -(N - k) / |x|^k with k = N - gamma
        N, gamma = params.get("N", 3), params.get("gamma", 2.0)
        k = N - gamma
        return SpaceTimeFunction(lambda t, x: -(N - k) / np.linalg.norm(x, axis=1) ** k, steady=True)
    raise KeyError(f"unknown source {name!r}")


# specs -----------------------------------------------------------------------


def parse_fraction(text) -> Fraction:
    if isinstance(text, Fraction):
        return text
    if isinstance(text, float):
        return Fraction(text).limit_denominator(10**9)
    return Fraction(str(text).strip())


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    description: str
    lower: tuple
    upper: tuple
    n: int
    nu: float
    velocity: str
    boundary: str
    initial: str
    source: str
    T: Fraction
    taus: tuple
    params: tuple = ()
    K_policy: str = "median10"
    K: Optional[float] = None
    rtol: float = 1e-12
    atol: float = 1e-12
    subflow_tol: float = 1e-10

    def __post_init__(self):
        if self.K_policy not in ("median10", "fixed", "certified"):
            raise ValueError(f"unknown K policy {self.K_policy!r}")
        if self.K_policy == "fixed" and not (self.K and self.K > 0):
            raise ValueError("fixed K policy needs a positive K")
        if not self.taus:
            raise ValueError("empty tau ladder")
        for tau in self.taus:
            if tau <= 0 or (Fraction(self.T) / Fraction(tau)).denominator != 1:
                raise ValueError(f"tau={tau} does not divide T={self.T}")
        self.mesh()

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def mesh(self) -> Mesh:
        return build_mesh(self.lower, self.upper, self.n)

    def velocity_fn(self):
        return velocity_field(self.velocity, self.param_dict)

    def boundary_data(self) -> BoundaryData:
        return boundary_data(self.boundary, self.lower, self.upper)

    def initial_field(self) -> GridField:
        return sample(initial_data(self.initial, self.lower), self.mesh())

    def source_fn(self):
        return source_term(self.source, self.param_dict)

    def config(self) -> dict:
        """Canonical description of everything the reference depends on."""
        return {
            "lower": list(self.lower), "upper": list(self.upper), "n": self.n, "nu": self.nu,
            "velocity": self.velocity, "boundary": self.boundary, "initial": self.initial,
            "source": self.source, "params": [list(p) for p in self.params],
            "T": str(self.T), "rtol": self.rtol, "atol": self.atol,
        }

    def cache_key(self) -> str:
        blob = json.dumps(self.config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]


_BUILTINS = {
    "ex1": dict(
        description="constant Dirichlet data b=1 on [-0.5,1]^2, nu=0.01",
        lower=(-0.5, -0.5), upper=(1.0, 1.0), n=99, nu=0.01,
        velocity="inv_abs_isotropic", boundary="one", initial="ex1", source="zero",
    ),
    "ex2": dict(
        description="time-dependent Dirichlet data 1+sin(5t) / 1+sin(10t) on [-0.5,1]^2",
        lower=(-0.5, -0.5), upper=(1.0, 1.0), n=99, nu=0.01,
        velocity="inv_abs_isotropic", boundary="ex2", initial="ex1", source="zero",
    ),
    "ex3": dict(
        description="homogeneous Dirichlet on [-1,1]^2, nu=0.1, u0=sin(pi x)sin(pi y)",
        lower=(-1.0, -1.0), upper=(1.0, 1.0), n=100, nu=0.1,
        velocity="inv_abs_isotropic", boundary="zero", initial="sin_pi", source="zero",
    ),
    "ex3d": dict(
        description="3D singular drift on [-0.5,1]^3, N=3, gamma=2, source -2/|x|",
        lower=(-0.5,) * 3, upper=(1.0,) * 3, n=19, nu=1.0,
        velocity="ex3d", boundary="zero", initial="zero", source="ex3d",
        params=(("N", 3), ("gamma", 2.0)), K_policy="certified",
    ),
}


def builtin_names():
    return list(_BUILTINS)


def builtin(name: str) -> ExperimentSpec:
    try:
        kw = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(_BUILTINS)}") from None
    return ExperimentSpec(name=name, T=Fraction(1, 10), taus=DEFAULT_LADDER, **kw)


# reports ---------------------------------------------------------------------


def estimate_order(pairs: Sequence) -> float:
    """Least-squares slope of log(error) against log(tau) over finite entries."""
    pts = [(float(t), float(e)) for t, e in pairs if np.isfinite(e) and e > 0]
    if len(pts) < 2:
        raise ValueError("need at least two finite (tau, error) pairs")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def _geomean(values):
    vals = [v for v in values if np.isfinite(v) and v > 0]
    return float(np.exp(np.mean(np.log(vals)))) if vals else float("nan")


@dataclass
class ErrorReport:
    experiment: str
    taus: list
    err_classical: list
    err_adapted: list
    K: Optional[float] = None
    slope_classical: Optional[float] = None
    slope_adapted: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def factors(self) -> list:
        return [c / a if a > 0 else float("inf") for c, a in zip(self.err_classical, self.err_adapted)]

    @property
    def factor_geomean(self) -> float:
        return _geomean(self.factors)

    def fit_slopes(self) -> None:
        for attr, errs in (("slope_classical", self.err_classical), ("slope_adapted", self.err_adapted)):
            try:
                setattr(self, attr, estimate_order(zip(self.taus, errs)))
            except ValueError:
                setattr(self, attr, None)

    def to_csv(self, path) -> None:
        lines = ["tau,err_classical,err_adapted,factor"]
        for tau, c, a, f in zip(self.taus, self.err_classical, self.err_adapted, self.factors):
            lines.append(f"{tau!r},{c!r},{a!r},{f!r}")
        lines.append(f"# experiment={self.experiment}")
        lines.append(f"# K={self.K!r}")
        lines.append(f"# slope_classical={self.slope_classical!r}")
        lines.append(f"# slope_adapted={self.slope_adapted!r}")
        lines.append(f"# factor_geomean={self.factor_geomean!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ErrorReport":
        taus, ec, ea = [], [], []
        footer = {}
        for line in Path(path).read_text().splitlines():
            if not line or line.startswith("tau,"):
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                footer[key] = value
                continue
            t, c, a, _ = line.split(",")
            taus.append(float(t))
            ec.append(float(c))
            ea.append(float(a))
        opt = lambda s: None if s in (None, "None") else float(s)
        return cls(
            experiment=footer.get("experiment", ""), taus=taus, err_classical=ec, err_adapted=ea,
            K=opt(footer.get("K")), slope_classical=opt(footer.get("slope_classical")),
            slope_adapted=opt(footer.get("slope_adapted")),
        )

    def table(self) -> str:
        rows = [f"{'tau':>10} {'err_classical':>14} {'err_adapted':>14} {'factor':>8}"]
        for tau, c, a, f in zip(self.taus, self.err_classical, self.err_adapted, self.factors):
            rows.append(f"{tau:>10.5g} {c:>14.6e} {a:>14.6e} {f:>8.3f}")
        fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
        rows.append(
            f"slope classical {fmt(self.slope_classical)}  adapted {fmt(self.slope_adapted)}  "
            f"factor geomean {self.factor_geomean:.3f}  K {self.K if self.K is None else format(self.K, '.4g')}"
        )
        return "\n".join(rows)


def write_plot_script(report: ErrorReport, csv_path, script_path, image: Optional[str] = None) -> None:
    """gnuplot command file: log-log errors with a slope-one guide."""
    csv_path = Path(csv_path)
    image = image or csv_path.with_suffix(".png").name
    tau_max = max(report.taus)
    finite = [e for e in report.err_adapted + report.err_classical if np.isfinite(e)]
    anchor = (max(finite) if finite else 1.0) / tau_max
    text = f"""set terminal pngcairo size 800,600
set output '{image}'
set datafile separator ','
set logscale xy
set xlabel 'time step size'
set ylabel 'discrete L2 error at T'
set key top left
set title '{report.experiment}'
plot '{csv_path.name}' using 1:2 every ::1 with linespoints lc rgb 'red' title 'classical Lie', \\
     '{csv_path.name}' using 1:3 every ::1 with linespoints lc rgb 'magenta' title 'adapted Lie', \\
     {anchor!r}*x with lines dt 4 lc rgb 'black' title 'slope one'
"""
    Path(script_path).write_text(text)


# sweeps ----------------------------------------------------------------------


def default_cache_dir() -> Path:
    env = os.environ.get("SPLITCD_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "splitcd"


def resolve_K(spec: ExperimentSpec, velocity: FaceVelocity) -> float:
    if spec.K_policy == "fixed":
        return float(spec.K)
    if spec.K_policy == "certified":
        level = certified_K(velocity, spec.nu)
        if not level.certified:
            log.warning("no certified K on the grid; using K=%g", level.K)
        return level.K
    return median_K(velocity)


def reference_for(spec: ExperimentSpec, cache_dir=None, use_cache: bool = True):
    """Reference final state, loaded from or written to the on-disk cache."""
    mesh = spec.mesh()
    cache = None
    if use_cache:
        cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        cache = cache_dir / f"ref-{spec.name}-{spec.cache_key()}.txt"
        if cache.exists():
            ref, meta = read_field(cache)
            if ref.mesh == mesh:
                return ref, meta
    system = unsplit_system(mesh, spec.nu, spec.velocity_fn(), spec.boundary_data(), spec.source_fn())
    start = time.perf_counter()
    ref, stats = reference_solve(system, spec.initial_field(), float(spec.T), spec.atol, spec.rtol)
    meta = {
        "config": json.dumps(spec.config(), sort_keys=True),
        "atol": repr(spec.atol), "rtol": repr(spec.rtol),
        "accepted": stats.accepted, "rejected": stats.rejected, "evaluations": stats.evaluations,
        "seconds": f"{time.perf_counter() - start:.2f}",
    }
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache.with_suffix(".tmp")
        write_field(tmp, ref, meta)
        tmp.replace(cache)
    return ref, meta


def run_sweep(
    spec: ExperimentSpec,
    cache_dir=None,
    use_cache: bool = True,
    jobs: int = 1,
    reference: Optional[GridField] = None,
) -> ErrorReport:
    """Errors of both schemes against the reference for every tau of the ladder."""
    mesh = spec.mesh()
    velocity = FaceVelocity.from_function(mesh, spec.velocity_fn())
    b = spec.boundary_data()
    f = spec.source_fn()
    u0 = spec.initial_field()
    meta = {}
    if reference is None:
        reference, ref_meta = reference_for(spec, cache_dir, use_cache)
        meta["reference"] = ref_meta
    K = resolve_K(spec, velocity)
    schemes = {
        CLASSICAL: build_scheme(CLASSICAL, mesh, spec.nu, velocity, b, f, tol=spec.subflow_tol),
        ADAPTED: build_scheme(ADAPTED, mesh, spec.nu, velocity, b, f, K=K, tol=spec.subflow_tol),
    }

    def job(item):
        kind, tau = item
        start = time.perf_counter()
        try:
            final = integrate(schemes[kind], u0, float(spec.T), float(tau)).final
            err = discrete_l2(final - reference)
            if not np.isfinite(err):
                err = float("inf")
        except (FlowError, FloatingPointError, OverflowError) as exc:
            log.warning("%s tau=%s diverged: %s", kind, tau, exc)
            err = float("inf")
        return item, err, time.perf_counter() - start

    items = [(kind, tau) for tau in spec.taus for kind in (CLASSICAL, ADAPTED)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(it) for it in items]
    errs = {item: err for item, err, _ in results}
    meta["seconds"] = {f"{k}@{t}": round(s, 3) for (k, t), _, s in results}
    report = ErrorReport(
        experiment=spec.name,
        taus=[float(t) for t in spec.taus],
        err_classical=[errs[(CLASSICAL, t)] for t in spec.taus],
        err_adapted=[errs[(ADAPTED, t)] for t in spec.taus],
        K=K,
        meta=meta,
    )
    report.fit_slopes()
    return report
