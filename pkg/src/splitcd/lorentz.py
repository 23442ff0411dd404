"""Lorentz-space numerics on sampled functions.

A :class:`SampledFunction` is an empirical measure: values with cell
weights. Its distribution function is piecewise constant, so every norm
below is evaluated exactly segment by segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class SampledFunction:
    values: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    total_measure: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if values.shape[0] != weights.size:
            raise ValueError("values and weights differ in length")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if not np.all(np.isfinite(values)):
            raise ValueError("sampled values must be finite")
        total = float(weights.sum()) if self.total_measure is None else float(self.total_measure)
        if total <= 0 or abs(weights.sum() - total) > 1e-12 * total:
            raise ValueError(f"weights sum {weights.sum()} != total measure {total}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "total_measure", total)

    @property
    def vector(self) -> bool:
        return self.values.ndim == 2

    def magnitude(self) -> np.ndarray:
        if self.vector:
            return np.linalg.norm(self.values, axis=1)
        return np.abs(self.values)


@dataclass(frozen=True)
class LorentzParams:
    p: float
    q: float
    N: int = 2

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.q > 1:
            raise ValueError("q must exceed 1")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("N must be an integer >= 2")


@dataclass(frozen=True)
class TruncationLevel:
    K: float
    delta: float
    certified: bool = True
    target: Optional[float] = None

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    K_grid: np.ndarray = field(repr=False)
    sequence: np.ndarray = field(repr=False)


def _levels(mag: np.ndarray, weights: np.ndarray):
    """Distinct magnitudes ``a_1 < ... < a_k`` and ``Lambda_i = |{|g| >= a_i}|``."""
    order = np.argsort(mag, kind="stable")
    mag, w = mag[order], weights[order]
    levels, start = np.unique(mag, return_index=True)
    tail = np.cumsum(w[::-1])[::-1]
    return levels, tail[start]


def distribution_function(g: SampledFunction, h: float) -> float:
    """Measure of ``{|g| > h}``."""
    if h < 0:
        raise ValueError("threshold must be nonnegative")
    return float(g.weights[g.magnitude() > h].sum())


def lorentz_norm(g: SampledFunction, params: LorentzParams) -> float:
    """``(p int_0^inf lambda(h)^{q/p} h^{q-1} dh)^{1/q}`` for finite ``q``."""
    p, q = float(params.p), float(params.q)
    if math.isinf(q):
        raise ValueError("q = inf: use weak_norm")
    levels, lam = _levels(g.magnitude(), g.weights)
    keep = levels > 0
    levels, lam = levels[keep], lam[keep]
    if levels.size == 0:
        return 0.0
    lower = np.concatenate([[0.0], levels[:-1]])
    total = (p / q) * np.sum(lam ** (q / p) * (levels**q - lower**q))
    return float(total ** (1.0 / q))


def weak_norm(g: SampledFunction, p: float) -> float:
    """``sup_h (h^p lambda(h))^{1/p}``.

    The supremum is approached from below each distinct magnitude, where
    ``lambda`` still counts that level.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    levels, lam = _levels(g.magnitude(), g.weights)
    keep = levels > 0
    if not keep.any():
        return 0.0
    return float(np.max(levels[keep] * lam[keep] ** (1.0 / p)))


def truncate(s, K: float):
    """Clip to ``[-K, K]`` keeping the sign."""
    if not K > 0:
        raise ValueError("K must be positive")
    return np.clip(s, -K, K) if isinstance(s, np.ndarray) else max(-K, min(K, s))


def truncate_vectors(v: np.ndarray, K: float) -> np.ndarray:
    """Magnitude truncation ``v * min(1, K/|v|)`` row by row."""
    if not K > 0:
        raise ValueError("K must be positive")
    v = np.asarray(v, dtype=float)
    mag = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.ones_like(mag)
    big = mag > K
    scale[big] = K / mag[big]
    return v * scale


def truncate_field(v: SampledFunction, K: float) -> SampledFunction:
    values = truncate_vectors(v.values, K) if v.vector else truncate(v.values, K)
    return SampledFunction(values, v.weights, v.total_measure)


def _remainder(g: SampledFunction, K: float) -> SampledFunction:
    # |g - T_K g| = (|g| - K)_+ for scalars and for magnitude-truncated vectors
    return SampledFunction(np.maximum(g.magnitude() - K, 0.0), g.weights, g.total_measure)


def remainder_norm(g: SampledFunction, N: int, K: float) -> float:
    """``||g - T_K g||_{N, inf}``."""
    return weak_norm(_remainder(g, K), N)


def distance_to_bounded(g: SampledFunction, N: int, K_grid: Sequence[float]) -> DistanceEstimate:
    """Remainder weak norms along ``K_grid``; the value is the one at the largest K."""
    K_grid = np.asarray(K_grid, dtype=float)
    if K_grid.size == 0 or np.any(np.diff(K_grid) <= 0):
        raise ValueError("K_grid must be nonempty and ascending")
    seq = np.array([remainder_norm(g, N, K) for K in K_grid])
    return DistanceEstimate(float(seq[-1]), K_grid, seq)


def unit_ball_volume(N: int) -> float:
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def sobolev_constant(N: int, p: float) -> float:
    """``omega_N^{-1/N} p / (N - p)`` for ``1 < p < N``."""
    if not 1 < p < N:
        raise ValueError(f"Sobolev constant needs 1 < p < N, got p={p}, N={N}")
    return unit_ball_volume(N) ** (-1.0 / N) * p / (N - p)


def delta_threshold(eta: float, N: int) -> float:
    """Remainder bound ``eta / (2 S_{N,2})`` that keeps the adapted form elliptic.

    Undefined for ``N = 2``; callers must then configure K directly.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if N < 3:
        raise ValueError("delta threshold needs N >= 3 (S_{2,2} is singular); configure K explicitly")
    return eta / (2.0 * sobolev_constant(N, 2.0))


def default_K_grid(lo: float = 1e-2, hi: float = 1e6, per_decade: int = 20) -> np.ndarray:
    count = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), count)


def select_truncation_level(
    c: SampledFunction, N: int, delta: float, K_grid: Optional[Sequence[float]] = None
) -> TruncationLevel:
    """Smallest K on the grid with ``||c - T_K c||_{N,inf} <= delta``.

    If no grid point qualifies, the largest K is returned with
    ``certified=False``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    K_grid = default_K_grid() if K_grid is None else np.asarray(K_grid, dtype=float)
    if K_grid.size == 0:
        raise ValueError("K_grid must be nonempty")
    for K in K_grid:
        r = remainder_norm(c, N, K)
        if r <= delta:
            return TruncationLevel(float(K), r, True, delta)
    K = float(K_grid[-1])
    return TruncationLevel(K, remainder_norm(c, N, K), False, delta)


# sampling helpers -----------------------------------------------------------


def grid_samples(
    fn: Callable[[np.ndarray], np.ndarray],
    lower: Sequence[float],
    upper: Sequence[float],
    n: int,
    mask: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SampledFunction:
    """Cell-centred uniform sampling of ``fn`` on a box, ``n`` cells per axis."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    h = (upper - lower) / n
    axes = [lower[k] + h[k] * (np.arange(n) + 0.5) for k in range(lower.size)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    if mask is not None:
        pts = pts[mask(pts)]
    values = np.asarray(fn(pts), dtype=float)
    return SampledFunction(values, np.full(pts.shape[0], float(np.prod(h))))


def disk_grid_samples(fn, n: int = 400, radius: float = 1.0) -> SampledFunction:
    """Uniform grid cells whose centres fall inside the disk."""
    return grid_samples(
        fn, (-radius, -radius), (radius, radius), n,
        mask=lambda x: np.hypot(x[:, 0], x[:, 1]) < radius,
    )


def polar_samples(
    fn,
    radius: float = 1.0,
    r_min: float = 1e-12,
    ratio: float = 1.01,
    n_theta: int = 64,
) -> SampledFunction:
    """Disk cells on a geometrically graded polar grid.

    Resolves level sets of functions singular at the origin down to
    ``r_min``; each cell is sampled at its geometric-mean radius and
    mid-angle, weights are exact cell areas.
    """
    count = int(math.ceil(math.log(radius / r_min) / math.log(ratio)))
    r = r_min * ratio ** np.arange(count + 1)
    r[-1] = radius
    r_mid = np.sqrt(r[:-1] * r[1:])
    dtheta = 2 * np.pi / n_theta
    theta = dtheta * (np.arange(n_theta) + 0.5)
    R, T = np.meshgrid(r_mid, theta, indexing="ij")
    pts = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    area = 0.5 * dtheta * (r[1:] ** 2 - r[:-1] ** 2)
    weights = np.repeat(area, n_theta)
    # the core disk takes its rim value so level sets of radial functions stay exact
    core = np.array([[r_min, 0.0]])
    pts = np.vstack([core, pts])
    weights = np.concatenate([[math.pi * r_min**2], weights])
    return SampledFunction(np.asarray(fn(pts), dtype=float), weights)


def radial_samples(
    profile: Callable[[np.ndarray], np.ndarray],
    N: int,
    radius: float = 1.0,
    r_min: float = 1e-12,
    ratio: float = 1.01,
) -> SampledFunction:
    """Shells of the N-ball for a radial profile ``g(|x|) = profile(r)``."""
    count = int(math.ceil(math.log(radius / r_min) / math.log(ratio)))
    r = r_min * ratio ** np.arange(count + 1)
    r[-1] = radius
    omega = unit_ball_volume(N)
    weights = np.concatenate([[omega * r_min**N], omega * (r[1:] ** N - r[:-1] ** N)])
    radii = np.concatenate([[r_min], np.sqrt(r[:-1] * r[1:])])
    return SampledFunction(np.asarray(profile(radii), dtype=float), weights)
