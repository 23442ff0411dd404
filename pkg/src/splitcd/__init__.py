"""Classical and adapted Lie splitting for convection-diffusion problems with
unbounded drift, plus the Lorentz-space numerics used to choose the
truncation level."""

from .experiments import ErrorReport, ExperimentSpec, builtin, builtin_names, run_sweep
from .flows import propagate
from .lorentz import SampledFunction, distance_to_bounded, lorentz_norm, weak_norm
from .mesh import BoundaryData, GridField, Mesh, SpaceTimeFunction, build_mesh, discrete_l2
from .splitting import ADAPTED, CLASSICAL, build_scheme, integrate

__version__ = "0.1.0"

__all__ = [
    "ADAPTED", "CLASSICAL", "BoundaryData", "ErrorReport", "ExperimentSpec", "GridField", "Mesh",
    "SampledFunction", "SpaceTimeFunction", "build_mesh", "build_scheme", "builtin", "builtin_names",
    "discrete_l2", "distance_to_bounded", "integrate", "lorentz_norm", "propagate", "run_sweep",
    "weak_norm",
]
