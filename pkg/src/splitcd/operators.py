"""Semi-discrete operators: diffusion stencils, upwind convection, injections.

Every assembled system is the generator of ``u' = A u + g(t)`` where the
Dirichlet/inflow data are folded into ``g`` through a sparse injection
matrix acting on boundary-point evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryData, Mesh, SpaceTimeFunction


@dataclass(frozen=True)
class BoundaryInjection:
    """``t -> matrix @ data(t, points)``."""

    matrix: sp.csr_matrix = field(repr=False)
    points: np.ndarray = field(repr=False)
    data: SpaceTimeFunction

    def __call__(self, t: float) -> np.ndarray:
        if self.points.shape[0] == 0:
            return np.zeros(self.matrix.shape[0])
        return self.matrix @ self.data(t, self.points)

    @property
    def steady(self) -> bool:
        return self.data.steady or self.matrix.nnz == 0


@dataclass(frozen=True)
class AffineSystem:
    """Linear system ``u' = operator @ u + sum(injections)(t) + source(t)``."""

    mesh: Mesh
    operator: sp.csr_matrix = field(repr=False)
    injections: tuple = ()
    source: Optional[SpaceTimeFunction] = None
    label: str = ""

    def __post_init__(self):
        op = sp.csr_matrix(self.operator)
        op.sum_duplicates()
        if op.shape != (self.mesh.size, self.mesh.size):
            raise ValueError(f"operator shape {op.shape} does not match mesh size {self.mesh.size}")
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "injections", tuple(self.injections))

    @property
    def dim(self) -> int:
        return self.mesh.size

    @property
    def steady(self) -> bool:
        return all(inj.steady for inj in self.injections) and (
            self.source is None or self.source.steady
        )

    def boundary_injection(self, t: float) -> np.ndarray:
        out = np.zeros(self.dim)
        for inj in self.injections:
            out += inj(t)
        return out

    def source_term(self, t: float) -> np.ndarray:
        if self.source is None:
            return np.zeros(self.dim)
        return self.source(t, self.mesh.points())

    def forcing(self, t: float) -> np.ndarray:
        return self.boundary_injection(t) + self.source_term(t)

    def rhs(self, t: float, u: np.ndarray) -> np.ndarray:
        return self.operator @ u + self.forcing(t)

    def __add__(self, other: "AffineSystem") -> "AffineSystem":
        if other.mesh != self.mesh:
            raise ValueError("cannot combine systems on different meshes")
        if self.source is not None and other.source is not None:
            a, b = self.source, other.source
            source = SpaceTimeFunction(lambda t, x: a(t, x) + b(t, x), a.steady and b.steady)
        else:
            source = self.source if self.source is not None else other.source
        return AffineSystem(
            self.mesh,
            self.operator + other.operator,
            self.injections + other.injections,
            source,
            label=f"{self.label}+{other.label}",
        )


class _Stencil:
    """Accumulates stencil entries; off-domain targets become injections."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.rows, self.cols, self.vals = [], [], []
        self.brows, self.bpoints, self.bvals = [], [], []

    def add(self, rows: np.ndarray, ext: np.ndarray, vals: np.ndarray) -> None:
        """``rows``: flat row indices; ``ext``: target extended multi-index (dim, m)."""
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape)
        keep = vals != 0.0
        rows, ext, vals = rows[keep], ext[:, keep], vals[keep]
        n = np.array(self.mesh.n)[:, None]
        inside = np.all((ext >= 1) & (ext <= n), axis=0)
        if inside.any():
            self.rows.append(rows[inside])
            self.cols.append(self.mesh.flat_index(ext[:, inside] - 1))
            self.vals.append(vals[inside])
        if (~inside).any():
            out = ext[:, ~inside]
            pts = np.stack([self.mesh.ext_coordinate(k, out[k]) for k in range(self.mesh.dim)], axis=1)
            self.brows.append(rows[~inside])
            self.bpoints.append(pts)
            self.bvals.append(vals[~inside])

    def build(self, data: SpaceTimeFunction):
        size = self.mesh.size
        cat = lambda xs, **kw: np.concatenate(xs) if xs else np.zeros(0, **kw)
        op = sp.csr_matrix(
            (cat(self.vals), (cat(self.rows, dtype=int), cat(self.cols, dtype=int))),
            shape=(size, size),
        )
        brows = cat(self.brows, dtype=int)
        pts = np.concatenate(self.bpoints) if self.bpoints else np.zeros((0, self.mesh.dim))
        bmat = sp.csr_matrix(
            (cat(self.bvals), (brows, np.arange(brows.size))), shape=(size, brows.size)
        )
        return op, BoundaryInjection(bmat, pts, data)


def _node_multi(mesh: Mesh) -> np.ndarray:
    return np.indices(mesh.n).reshape(mesh.dim, -1, order="F")


def _unit(dim: int, k: int) -> np.ndarray:
    e = np.zeros((dim, 1), dtype=int)
    e[k] = 1
    return e


@dataclass(frozen=True)
class EllipticCoefficients:
    """Coefficients of ``D u = -div(a grad u) + alpha . grad u + beta u``.

    ``a`` maps points ``(m, dim)`` to ``(m, dim, dim)``; ``alpha`` to
    ``(m, dim)``; ``beta`` to ``(m,)``. The assembled generator is ``-D``.
    """

    a: Callable[[np.ndarray], np.ndarray]
    alpha: Optional[Callable[[np.ndarray], np.ndarray]] = None
    beta: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def isotropic(cls, nu: float) -> "EllipticCoefficients":
        def a(x):
            return nu * np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1]))

        return cls(a)


def _eval_a(coeffs: EllipticCoefficients, x: np.ndarray) -> np.ndarray:
    return np.asarray(coeffs.a(x), dtype=float).reshape(x.shape[0], x.shape[1], x.shape[1])


def assemble_elliptic(mesh: Mesh, coeffs: EllipticCoefficients, b: BoundaryData) -> AffineSystem:
    """Centered second-order discretization of ``div(a grad u) - alpha.grad u - beta u``.

    With ``a = nu I`` this is the standard 5-point (2D) / 7-point (3D)
    Laplacian scaled by ``nu``; Dirichlet values enter the injection.
    """
    dim = mesh.dim
    h = mesh.h
    x = mesh.points()
    a_nodes = _eval_a(coeffs, x)
    if not np.array_equal(a_nodes, np.swapaxes(a_nodes, 1, 2)):
        bad = np.flatnonzero(np.any(a_nodes != np.swapaxes(a_nodes, 1, 2), axis=(1, 2)))[0]
        raise ValueError(f"diffusion matrix not symmetric at node {x[bad].tolist()}")

    multi = _node_multi(mesh)
    ext = multi + 1
    rows = np.arange(mesh.size)
    st = _Stencil(mesh)
    for k in range(dim):
        ek = _unit(dim, k)
        shift = np.zeros(dim)
        shift[k] = 0.5 * h[k]
        a_plus = _eval_a(coeffs, x + shift)[:, k, k]
        a_minus = _eval_a(coeffs, x - shift)[:, k, k]
        st.add(rows, ext + ek, a_plus / h[k] ** 2)
        st.add(rows, ext - ek, a_minus / h[k] ** 2)
        st.add(rows, ext, -(a_plus + a_minus) / h[k] ** 2)
        for l in range(dim):
            if l == k:
                continue
            el = _unit(dim, l)
            for sk in (-1, 1):
                shift = np.zeros(dim)
                shift[k] = sk * h[k]
                a_kl = _eval_a(coeffs, x + shift)[:, k, l]
                for sl in (-1, 1):
                    st.add(rows, ext + sk * ek + sl * el, sk * sl * a_kl / (4 * h[k] * h[l]))
    if coeffs.alpha is not None:
        alpha = np.asarray(coeffs.alpha(x), dtype=float).reshape(mesh.size, dim)
        for k in range(dim):
            ek = _unit(dim, k)
            st.add(rows, ext + ek, -alpha[:, k] / (2 * h[k]))
            st.add(rows, ext - ek, alpha[:, k] / (2 * h[k]))
    if coeffs.beta is not None:
        st.add(rows, ext, -np.asarray(coeffs.beta(x), dtype=float).reshape(mesh.size))
    op, inj = st.build(b.value)
    return AffineSystem(mesh, op, (inj,), label="diffusion")


@dataclass(frozen=True)
class FaceVelocity:
    """Velocity vectors at the face midpoints, one ``(m_k, dim)`` array per axis."""

    mesh: Mesh
    vectors: tuple = field(repr=False)

    @classmethod
    def from_function(cls, mesh: Mesh, velocity: Callable[[np.ndarray], np.ndarray]) -> "FaceVelocity":
        """Midpoint evaluation; non-finite midpoints fall back to the mean of
        the two adjacent node values (a face can sit on a singular plane when
        the nodes straddle it symmetrically)."""
        vecs = []
        for k in range(mesh.dim):
            pts = mesh.face_points(k)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = np.asarray(velocity(pts), dtype=float).reshape(pts.shape[0], mesh.dim)
            bad = ~np.all(np.isfinite(v), axis=1)
            if bad.any():
                left = pts[bad].copy()
                right = pts[bad].copy()
                left[:, k] -= 0.5 * mesh.h[k]
                right[:, k] += 0.5 * mesh.h[k]
                vl = np.asarray(velocity(left), dtype=float).reshape(-1, mesh.dim)
                vr = np.asarray(velocity(right), dtype=float).reshape(-1, mesh.dim)
                v[bad] = 0.5 * (vl + vr)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"velocity not finite at faces normal to axis {k}")
            vecs.append(v)
        return cls(mesh, tuple(vecs))

    def normal(self, axis: int) -> np.ndarray:
        return self.vectors[axis][:, axis]

    def magnitudes(self) -> np.ndarray:
        return np.concatenate([np.linalg.norm(v, axis=1) for v in self.vectors])

    def max_magnitude(self) -> float:
        return float(self.magnitudes().max()) if self.mesh.size else 0.0

    def __add__(self, other: "FaceVelocity") -> "FaceVelocity":
        return FaceVelocity(self.mesh, tuple(a + b for a, b in zip(self.vectors, other.vectors)))

    def __sub__(self, other: "FaceVelocity") -> "FaceVelocity":
        return FaceVelocity(self.mesh, tuple(a - b for a, b in zip(self.vectors, other.vectors)))


def assemble_upwind_divergence(mesh: Mesh, velocity, b1: SpaceTimeFunction) -> AffineSystem:
    """First-order upwind flux form of ``div(c w)``.

    Face flux ``F = c_face * w_donor``; the donor is the right neighbour when
    ``c_face > 0`` (characteristics of ``w_t = div(c w)`` travel with ``-c``)
    and the left one otherwise. Donors on the boundary are inflow faces and
    read ``b1``; outflow faces only ever see interior donors.
    """
    if not isinstance(velocity, FaceVelocity):
        velocity = FaceVelocity.from_function(mesh, velocity)
    dim = mesh.dim
    st = _Stencil(mesh)
    for k in range(dim):
        idx = mesh.face_indices(k)
        c = velocity.normal(k)
        j = idx[k]
        donor = idx + 1
        donor[k] = j + (c > 0)
        hk = mesh.h[k]
        # node on the lower side of the face: +F/h
        left = j >= 1
        row_multi = idx[:, left].copy()
        row_multi[k] -= 1
        st.add(mesh.flat_index(row_multi), donor[:, left], c[left] / hk)
        # node on the upper side of the face: -F/h
        right = j + 1 <= mesh.n[k]
        row_multi = idx[:, right]
        st.add(mesh.flat_index(row_multi), donor[:, right], -c[right] / hk)
    op, inj = st.build(b1)
    return AffineSystem(mesh, op, (inj,), label="convection")


def ellipticity_estimate(coeffs: EllipticCoefficients, mesh: Mesh) -> float:
    """Smallest eigenvalue of ``a(x)`` over the mesh nodes."""
    a = _eval_a(coeffs, mesh.points())
    return float(np.linalg.eigvalsh(a).min())


def discrete_gradient_sq(mesh: Mesh, u: np.ndarray) -> float:
    """``||grad_h u||^2`` with forward differences and zero boundary values."""
    arr = np.pad(np.asarray(u, dtype=float).reshape(mesh.n, order="F"), 1)
    total = 0.0
    for k, hk in enumerate(mesh.h):
        d = np.diff(arr, axis=k)
        sl = [slice(1, -1)] * mesh.dim
        sl[k] = slice(None)
        total += np.sum(d[tuple(sl)] ** 2) / hk**2
    return float(mesh.cell_volume * total)


@dataclass(frozen=True)
class CoercivityReport:
    passed: bool
    shift: Optional[float]
    required_shift: float
    eta: float
    samples: int


def _gradient_form(mesh: Mesh) -> sp.csr_matrix:
    """Matrix ``G`` with ``u @ G @ u * vol = ||grad_h u||^2`` (zero boundary values)."""
    ones = EllipticCoefficients.isotropic(1.0)
    return -assemble_elliptic(mesh, ones, BoundaryData.homogeneous()).operator


def coercivity_check(
    operator,
    mesh: Mesh,
    eta: float,
    shifts: Sequence[float] = (0.0, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4),
    method: str = "eig",
    samples: int = 100,
    seed: int = 0,
) -> CoercivityReport:
    """Check ``<-A u, u> + s ||u||^2 >= (eta/2) ||grad_h u||^2``.

    ``operator`` is the generator matrix (or an AffineSystem). The required
    shift is ``lambda_max(sym(A) + (eta/2) G)``; ``method="eig"`` computes it
    from the symmetric eigenproblem, ``method="sample"`` takes the worst
    Rayleigh quotient over random vectors (a lower bound). Returns the
    smallest candidate shift at or above it, or ``passed=False``.
    """
    if isinstance(operator, AffineSystem):
        operator = operator.operator
    S = 0.5 * (operator + operator.T) + 0.5 * eta * _gradient_form(mesh)
    if method == "eig":
        if mesh.size <= 2000:
            required = float(np.linalg.eigvalsh(S.toarray())[-1])
        else:
            from scipy.sparse.linalg import eigsh

            required = float(eigsh(S.tocsc(), k=1, which="LA", return_eigenvectors=False)[0])
        samples = 0
    elif method == "sample":
        rng = np.random.default_rng(seed)
        U = rng.standard_normal((mesh.size, samples))
        required = float(np.max(np.einsum("ij,ij->j", U, S @ U) / np.einsum("ij,ij->j", U, U)))
    else:
        raise ValueError(f"unknown method {method!r}")
    for s in sorted(shifts):
        if s >= required:
            return CoercivityReport(True, float(s), required, eta, samples)
    return CoercivityReport(False, None, required, eta, samples)


def export_coo(path, operator) -> None:
    coo = sp.coo_matrix(operator)
    with open(path, "w") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
