"""Propagators for linear subflows ``u' = A u + g(t)``.

Forcing that is constant over a step is propagated exactly as
``e^{tA} u0 + t phi1(tA) g``. Time-dependent forcing is replaced on each
substep by its polynomial interpolant at Chebyshev points, which again has
an exact exponential solution through an augmented matrix; the substep
count is doubled until two successive answers agree to ``tol``.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .mesh import GridField
from .operators import AffineSystem

DENSE_LIMIT = 400


class FlowError(RuntimeError):
    pass


def _expm_apply(M, v: np.ndarray, method: str) -> np.ndarray:
    if method == "auto":
        method = "dense" if M.shape[0] < DENSE_LIMIT else "taylor"
    if method == "dense":
        dense = M.toarray() if sp.issparse(M) else np.asarray(M)
        out = scipy.linalg.expm(dense) @ v
    elif method == "taylor":
        out = expm_multiply(sp.csr_matrix(M), v)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(out)):
        raise FlowError("matrix exponential action produced non-finite values")
    return out


def _augmented(A: sp.spmatrix, columns: list) -> sp.csr_matrix:
    """``[[A, W], [0, J]]`` with ``W = columns`` and ``J`` the upper shift."""
    n = A.shape[0]
    p = len(columns)
    W = sp.csr_matrix(np.column_stack(columns)) if p else sp.csr_matrix((n, 0))
    J = sp.diags(np.ones(p - 1), 1, shape=(p, p)) if p > 1 else sp.csr_matrix((p, p))
    return sp.bmat([[sp.csr_matrix(A), W], [sp.csr_matrix((p, n)), J]], format="csr")


def expm_action(A, v: np.ndarray, tau: float, method: str = "auto") -> np.ndarray:
    """``e^{tau A} v``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=float)
    if tau == 0:
        return v.copy()
    return _expm_apply(sp.csr_matrix(A) * tau, v, method)


def phi1_action(A, v: np.ndarray, tau: float, method: str = "auto") -> np.ndarray:
    """``phi1(tau A) v`` with ``phi1(z) = (e^z - 1)/z``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=float)
    if tau == 0:
        return v.copy()
    n = v.size
    M = _augmented(sp.csr_matrix(A) * tau, [v])
    start = np.zeros(n + 1)
    start[-1] = 1.0
    return _expm_apply(M, start, method)[:n]


def _chebyshev_nodes(count: int) -> np.ndarray:
    k = np.arange(count)
    return 0.5 - 0.5 * np.cos((2 * k + 1) * np.pi / (2 * count))


def _affine_step(A, u0, t0, dt, forcing, degree, method):
    """Exact solution over ``[t0, t0+dt]`` for polynomial-in-time forcing.

    ``degree == 0`` freezes the forcing at the substep midpoint.
    """
    n = u0.size
    if degree == 0:
        coeffs = [forcing(t0 + 0.5 * dt)]
    else:
        s = _chebyshev_nodes(degree + 1)
        samples = np.stack([forcing(t0 + si * dt) for si in s])
        # g(t0 + s dt) ~= sum_k a_k s^k on s in [0, 1]
        coeffs = list(np.linalg.solve(np.vander(s, degree + 1, increasing=True), samples))
    # d/ds u = dt A u + sum_k (s^k / k!) w_k with w_k = dt a_k k!
    w = [dt * math.factorial(k) * a for k, a in enumerate(coeffs)]
    scale = max(max(np.abs(wk).sum() for wk in w), 1.0)
    eta = 2.0 ** -math.ceil(math.log2(scale))
    cols = [eta * wk for wk in reversed(w)]
    M = _augmented(sp.csr_matrix(A) * dt, cols)
    start = np.zeros(n + len(cols))
    start[:n] = u0
    start[-1] = 1.0 / eta
    return _expm_apply(M, start, method)[:n]


def propagate(
    system: AffineSystem,
    u0,
    t0: float,
    tau: float,
    tol: float = 1e-10,
    degree: int = 6,
    max_substeps: int = 1024,
    method: str = "auto",
):
    """Solve ``u' = A u + injection(t) + source(t)`` from ``t0`` to ``t0 + tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not 1e-14 <= tol <= 1e-2:
        raise ValueError("tol must lie in [1e-14, 1e-2]")
    wrap = isinstance(u0, GridField)
    u = np.asarray(u0, dtype=float).copy()
    A = system.operator
    if system.steady:
        g = system.forcing(t0)
        if np.any(g):
            out = _affine_step(A, u, t0, tau, lambda t: g, 0, method)
        else:
            out = expm_action(A, u, tau, method)
    else:
        def run(m):
            dt = tau / m
            v = u
            for i in range(m):
                v = _affine_step(A, v, t0 + i * dt, dt, system.forcing, degree, method)
            return v

        m = 1
        prev = run(m)
        while True:
            m *= 2
            out = run(m)
            diff = np.linalg.norm(out - prev) / max(np.linalg.norm(out), 1e-300)
            if diff < tol:
                break
            if 2 * m > max_substeps:
                raise FlowError(
                    f"substep budget {max_substeps} exhausted at t0={t0}: "
                    f"successive difference {diff:.3e} > tol {tol:.1e}"
                )
            prev = out
    return GridField(u0.mesh, out) if wrap else out
