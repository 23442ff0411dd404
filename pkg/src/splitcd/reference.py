"""Reference solutions of the unsplit semi-discrete system.

Explicit Dormand-Prince 5(4) with PI step-size control (the pair behind
MATLAB's ode45), propagating the fifth-order solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GridField
from .operators import AffineSystem

# Dormand & Prince (1980), J. Comput. Appl. Math. 6, 19-26.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0, 0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0],
])
B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class ReferenceError(RuntimeError):
    pass


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0
    t_reached: float = 0.0


def dopri54(rhs, y0, t0: float, T: float, atol: float = 1e-12, rtol: float = 1e-12,
            h0: float = None, max_steps: int = 2_000_000):
    """Integrate ``y' = rhs(t, y)`` to ``T``; returns ``(y, StepStats)``.

    Local error control is componentwise in the max norm:
    ``|y5 - y4| <= atol + rtol * max(|y_n|, |y_{n+1}|)``.
    """
    if atol < 1e-14 or rtol < 1e-14:
        raise ValueError("tolerances must be >= 1e-14")
    y = np.asarray(y0, dtype=float).copy()
    t = float(t0)
    T = float(T)
    stats = StepStats(t_reached=t)
    if T == t:
        return y, stats
    E = B5 - B4
    k = np.empty((7, y.size))
    k[0] = rhs(t, y)
    stats.evaluations += 1
    if h0 is None:
        d0 = np.max(np.abs(y) / (atol + rtol * np.abs(y)))
        d1 = np.max(np.abs(k[0]) / (atol + rtol * np.abs(y)))
        h0 = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h0 = min(h0, T - t)
    h = h0
    # PI controller constants (Hairer, Norsett & Wanner, DOPRI5)
    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    err_old = 1e-4
    safe, fac_min, fac_max = 0.9, 0.2, 10.0
    last_rejected = False
    while t < T:
        if stats.accepted + stats.rejected >= max_steps:
            raise ReferenceError(f"step budget exhausted at t={t}")
        if h < 1e-14 * max(abs(t), 1.0):
            raise ReferenceError(f"step size underflow at t={t}")
        if t + h >= T or t + 1.01 * h >= T:
            h = T - t
        for i in range(1, 7):
            yi = y + h * (A[i, :i] @ k[:i])
            k[i] = rhs(t + C[i] * h, yi)
        stats.evaluations += 6
        y_new = yi  # stage 7 is evaluated at the fifth-order solution (FSAL)
        err_vec = h * (E @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t_new = T if h == T - t else t + h
            y = y_new
            t = t_new
            k[0] = k[6]
            stats.accepted += 1
            fac = safe * max(err, 1e-10) ** -alpha * err_old**beta
            fac = min(fac_max, max(fac_min, fac))
            if last_rejected:
                fac = min(fac, 1.0)
            h *= fac
            err_old = max(err, 1e-4)
            last_rejected = False
        else:
            stats.rejected += 1
            h *= max(fac_min, safe * err**-alpha)
            last_rejected = True
    stats.t_reached = t
    return y, stats


def reference_solve(system: AffineSystem, u0, T: float, atol: float = 1e-12,
                    rtol: float = 1e-12, t0: float = 0.0):
    """Adaptive DP5(4) solution of ``u' = A u + g(t)`` at ``T``.

    Returns ``(GridField, StepStats)``.
    """
    A_op = system.operator
    steady = system.steady
    g0 = system.forcing(t0) if steady else None

    def rhs(t, u):
        return A_op @ u + (g0 if steady else system.forcing(t))

    y, stats = dopri54(rhs, np.asarray(u0, dtype=float), t0, T, atol, rtol)
    return GridField(system.mesh, y), stats
