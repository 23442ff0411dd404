"""Tensor-product meshes with singularity-avoiding interior nodes.

Unknowns live on interior nodes only; Dirichlet nodes carry no unknowns.
Flat vectors are ordered lexicographically with axis 0 varying fastest
(Fortran order on an array of shape ``mesh.n``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Callable ``fn(t, x)`` with ``x`` of shape ``(m, dim)`` returning ``(m,)``.

    ``steady`` marks data that does not depend on ``t``; propagators use it
    to skip the time-dependent forcing path.
    """

    fn: Callable[[float, np.ndarray], np.ndarray]
    steady: bool = False

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.asarray(self.fn(t, x), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)).copy()

    @classmethod
    def constant(cls, value: float) -> "SpaceTimeFunction":
        return cls(lambda t, x: np.full(x.shape[0], float(value)), steady=True)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data ``value`` on the whole boundary and inflow data on Γ.

    The inflow data defaults to the restriction of ``value``.
    """

    value: SpaceTimeFunction
    inflow: Optional[SpaceTimeFunction] = None

    @property
    def inflow_data(self) -> SpaceTimeFunction:
        return self.inflow if self.inflow is not None else self.value

    @classmethod
    def homogeneous(cls) -> "BoundaryData":
        return cls(SpaceTimeFunction.constant(0.0))


@dataclass(frozen=True)
class Mesh:
    lower: tuple
    upper: tuple
    n: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        n = tuple(int(v) for v in self.n)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "n", n)
        if not (len(lower) == len(upper) == len(n)) or len(n) not in (2, 3):
            raise MeshError("mesh must be 2D or 3D with matching bounds and node counts")
        for axis, (lo, hi, m) in enumerate(zip(lower, upper, n)):
            if not lo < hi:
                raise MeshError(f"axis {axis}: lower bound {lo} not below upper bound {hi}")
            if m < 3:
                raise MeshError(f"axis {axis}: need at least 3 nodes, got {m}")
            h = (hi - lo) / (m + 1)
            x = self.axis_nodes(axis)
            hit = np.flatnonzero(np.abs(x) <= 1e-9 * h)
            if hit.size:
                i = int(hit[0]) + 1
                raise MeshError(
                    f"axis {axis}: node index {i} lies at the singular coordinate 0 "
                    f"(lower={lo}, h={h}); choose a different node count"
                )

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple:
        return tuple((hi - lo) / (m + 1) for lo, hi, m in zip(self.lower, self.upper, self.n))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_nodes(self, axis: int) -> np.ndarray:
        lo, hi, m = self.lower[axis], self.upper[axis], self.n[axis]
        h = (hi - lo) / (m + 1)
        return lo + h * np.arange(1, m + 1)

    def ext_coordinate(self, axis: int, index) -> np.ndarray:
        """Coordinate of extended index (0 = lower boundary, n+1 = upper)."""
        return self.lower[axis] + self.h[axis] * np.asarray(index, dtype=float)

    def points(self) -> np.ndarray:
        """Interior node coordinates, shape ``(size, dim)``, flat order."""
        grids = np.meshgrid(*[self.axis_nodes(k) for k in range(self.dim)], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def flat_index(self, multi: Sequence[np.ndarray]) -> np.ndarray:
        """Flat index of interior multi-indices given 0-based per axis."""
        return np.ravel_multi_index(tuple(multi), self.n, order="F")

    def face_grid(self, axis: int) -> tuple:
        """Shape of the grid of faces normal to ``axis`` (n_k + 1 faces per line)."""
        return tuple(m + 1 if k == axis else m for k, m in enumerate(self.n))

    def face_indices(self, axis: int) -> np.ndarray:
        """Face multi-indices, shape ``(dim, m)``.

        Along ``axis`` the entry ``j`` is the face between extended nodes
        ``j`` and ``j+1``; other entries are 0-based interior indices.
        """
        shape = self.face_grid(axis)
        idx = np.indices(shape).reshape(self.dim, -1, order="F")
        return idx

    def face_points(self, axis: int) -> np.ndarray:
        idx = self.face_indices(axis)
        cols = []
        for k in range(self.dim):
            if k == axis:
                cols.append(self.ext_coordinate(k, idx[k] + 0.5))
            else:
                cols.append(self.ext_coordinate(k, idx[k] + 1))
        return np.stack(cols, axis=1)

    def boundary_faces(self):
        """All boundary faces as ``(axis, side, transverse index)`` tuples.

        ``side`` is -1 for the lower face and +1 for the upper face; the
        transverse index is the tuple of 0-based interior indices on the
        remaining axes.
        """
        faces = []
        for axis in range(self.dim):
            others = [k for k in range(self.dim) if k != axis]
            for side in (-1, 1):
                for t in np.ndindex(*[self.n[k] for k in others]):
                    faces.append((axis, side, tuple(int(v) for v in t)))
        return faces

    def boundary_face_point(self, axis: int, side: int, transverse) -> np.ndarray:
        """Midpoint between the outermost interior node and the boundary node."""
        others = [k for k in range(self.dim) if k != axis]
        x = np.empty(self.dim)
        for k, i in zip(others, transverse):
            x[k] = self.ext_coordinate(k, i + 1)
        j = 0.5 if side < 0 else self.n[axis] + 0.5
        x[axis] = self.ext_coordinate(axis, j)
        return x

    def header(self) -> str:
        fmt = lambda seq: ",".join(repr(v) for v in seq)
        return f"# mesh dim={self.dim} lower={fmt(self.lower)} upper={fmt(self.upper)} n={fmt(self.n)}"

    @classmethod
    def from_header(cls, line: str) -> "Mesh":
        parts = dict(tok.split("=", 1) for tok in line.lstrip("#").split()[1:])
        lower = [float(v) for v in parts["lower"].split(",")]
        upper = [float(v) for v in parts["upper"].split(",")]
        n = [int(v) for v in parts["n"].split(",")]
        return cls(tuple(lower), tuple(upper), tuple(n))


def build_mesh(lower: Sequence[float], upper: Sequence[float], n) -> Mesh:
    """Equidistant mesh with ``n`` interior nodes per axis.

    ``n`` may be a single int applied to every axis.
    """
    if np.isscalar(n):
        n = (int(n),) * len(lower)
    return Mesh(tuple(lower), tuple(upper), tuple(n))


@dataclass(frozen=True)
class GridField:
    mesh: Mesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.mesh.size:
            raise ValueError(f"field has {v.size} values, mesh has {self.mesh.size} nodes")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __sub__(self, other: "GridField") -> "GridField":
        return GridField(self.mesh, self.values - np.asarray(other))

    def __add__(self, other: "GridField") -> "GridField":
        return GridField(self.mesh, self.values + np.asarray(other))

    def __rmul__(self, alpha: float) -> "GridField":
        return GridField(self.mesh, alpha * self.values)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.mesh.n, order="F")


def discrete_l2(field: GridField) -> float:
    """Cell-volume weighted Euclidean norm."""
    v = np.asarray(field)
    return float(np.sqrt(field.mesh.cell_volume * np.dot(v, v)))


def sample(f, mesh: Mesh, t: float = 0.0) -> GridField:
    """Evaluate ``f(t, x)`` at the interior nodes of ``mesh``."""
    x = mesh.points()
    values = np.asarray(f(t, x), dtype=float)
    values = np.broadcast_to(values, (x.shape[0],))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"non-finite value at node {x[bad[0]].tolist()}")
    return GridField(mesh, values)


def classify_inflow(mesh: Mesh, velocity: Callable[[np.ndarray], np.ndarray], t: float = 0.0):
    """Boundary faces where the convection subflow needs data.

    For ``w_t = div(c w)`` the characteristics move with ``-c``, so a face
    receives data when ``c . n_out > 0``. Faces with ``c . n_out == 0`` are
    outflow. ``velocity`` maps points ``(m, dim)`` to vectors ``(m, dim)``;
    ``t`` is accepted for interface symmetry (velocities are steady).
    """
    faces = mesh.boundary_faces()
    if not faces:
        return frozenset()
    pts = np.array([mesh.boundary_face_point(*f) for f in faces])
    vel = np.asarray(velocity(pts), dtype=float).reshape(len(faces), mesh.dim)
    inflow = set()
    for face, v in zip(faces, vel):
        axis, side, _ = face
        if v[axis] * side > 0:
            inflow.add(face)
    return frozenset(inflow)


def write_field(path, field: GridField, meta: Optional[dict] = None) -> None:
    """Flat text dump: mesh header, optional ``# key = value`` lines, values."""
    lines = [field.mesh.header()]
    for key, value in (meta or {}).items():
        lines.append(f"# {key} = {value}")
    lines.extend(repr(float(v)) for v in field.values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    meta = {}
    values = []
    mesh = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# mesh"):
                mesh = Mesh.from_header(line)
            elif line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            else:
                values.append(float(line))
    if mesh is None:
        raise ValueError(f"{path}: missing mesh header")
    return GridField(mesh, np.array(values)), meta
