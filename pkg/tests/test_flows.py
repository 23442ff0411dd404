import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from splitcd.flows import FlowError, expm_action, phi1_action, propagate
from splitcd.mesh import BoundaryData, GridField, SpaceTimeFunction, build_mesh, discrete_l2, sample
from splitcd.operators import EllipticCoefficients, assemble_elliptic
from splitcd.reference import reference_solve
from splitcd.splitting import unsplit_system


def system(A, forcing=None, steady=None):
    A = sp.csr_matrix(np.atleast_2d(A))
    g = forcing if forcing is not None else (lambda t: np.zeros(A.shape[0]))
    return SimpleNamespace(operator=A, forcing=g, steady=forcing is None if steady is None else steady)


def taylor_oracle(A, v, terms=60):
    out = np.zeros_like(v)
    term = v.copy()
    for k in range(terms):
        out += term
        term = A @ term / (k + 1)
    return out


@pytest.mark.parametrize("method", ["dense", "taylor"])
def test_nilpotent(method):
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    v = np.array([0.3, -2.0])
    np.testing.assert_allclose(expm_action(A, v, 0.7, method), v + 0.7 * A @ v, atol=1e-14)


@pytest.mark.parametrize("lam", [-50.0, -1.0, 0.0, 2.0])
def test_scalar_affine(lam):
    g = 1.5
    tau = 0.3
    out = propagate(system([[lam]], lambda t: np.array([g]), steady=True), np.array([2.0]), 0.0, tau)
    phi = tau if lam == 0 else math.expm1(lam * tau) / lam
    assert out[0] == pytest.approx(math.exp(lam * tau) * 2.0 + phi * g, rel=1e-12)


def test_power_series_oracle():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((30, 30)) / 6
    v = rng.standard_normal(30)
    expected = taylor_oracle(A * 0.9, v)
    for method in ("dense", "taylor"):
        np.testing.assert_allclose(expm_action(A, v, 0.9, method), expected, rtol=1e-11, atol=1e-12)


def test_semigroup():
    mesh = build_mesh((0, 0), (1, 1), 12)
    A = assemble_elliptic(mesh, EllipticCoefficients.isotropic(0.1), BoundaryData.homogeneous()).operator
    v = np.random.default_rng(1).standard_normal(mesh.size)
    both = expm_action(A, v, 0.05)
    split = expm_action(A, expm_action(A, v, 0.02), 0.03)
    np.testing.assert_allclose(both, split, rtol=1e-11, atol=1e-13)


def test_phi1_identity():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((20, 20))
    v = rng.standard_normal(20)
    tau = 0.4
    lhs = tau * A @ phi1_action(A, v, tau)
    np.testing.assert_allclose(lhs, expm_action(A, v, tau) - v, atol=1e-11)


def test_laplacian_flow_is_dissipative():
    mesh = build_mesh((-0.5, -0.5), (1, 1), 21)
    A = assemble_elliptic(mesh, EllipticCoefficients.isotropic(0.01), BoundaryData.homogeneous()).operator
    rng = np.random.default_rng(3)
    for _ in range(5):
        u = GridField(mesh, rng.standard_normal(mesh.size))
        for tau in (1e-3, 0.1, 1.0):
            assert discrete_l2(GridField(mesh, expm_action(A, u.values, tau))) <= discrete_l2(u)


def test_time_dependent_forcing_scalar():
    # u' = -u + sin(5t): particular solution (sin 5t - 5 cos 5t)/26
    sys_ = system([[-1.0]], lambda t: np.array([math.sin(5 * t)]), steady=False)
    T = 1.3
    out = propagate(sys_, np.array([1.0]), 0.0, T, tol=1e-13)
    exact = (math.sin(5 * T) - 5 * math.cos(5 * T)) / 26 + (1 + 5 / 26) * math.exp(-T)
    assert out[0] == pytest.approx(exact, abs=1e-11)


def test_polynomial_forcing_exact_in_one_substep():
    sys_ = system([[-2.0]], lambda t: np.array([1 + t + 3 * t**2]), steady=False)
    a = propagate(sys_, np.array([0.5]), 0.2, 0.4, degree=3, tol=1e-14)
    # degree-0 midpoint freeze is only second order
    b = propagate(sys_, np.array([0.5]), 0.2, 0.4, degree=0, tol=1e-6)
    assert abs(a[0] - b[0]) < 1e-5
    c = propagate(sys_, np.array([0.5]), 0.2, 0.4, degree=6, tol=1e-14)
    assert a[0] == pytest.approx(c[0], abs=1e-14)


def test_substep_budget_exhausted():
    sys_ = system([[-1.0]], lambda t: np.array([math.sin(1e4 * t)]), steady=False)
    with pytest.raises(FlowError, match="substep budget 4 exhausted"):
        propagate(sys_, np.array([0.0]), 0.0, 1.0, tol=1e-14, max_substeps=4)


def test_rejects_bad_arguments():
    sys_ = system([[-1.0]])
    with pytest.raises(ValueError):
        propagate(sys_, np.array([1.0]), 0.0, 0.0)
    with pytest.raises(ValueError):
        propagate(sys_, np.array([1.0]), 0.0, 1.0, tol=1e-1)


def test_full_system_matches_reference():
    mesh = build_mesh((-0.5, -0.5), (1, 1), 9)
    b = BoundaryData(SpaceTimeFunction(lambda t, x: 1 + np.sin(5 * t) + 0 * x[:, 0]))
    full = unsplit_system(mesh, 0.05, lambda x: np.stack([1 + x[:, 1], -x[:, 0]], axis=1), b)
    u0 = sample(lambda t, x: 1 + np.cos(x[:, 0]) * x[:, 1], mesh)
    exact = propagate(full, u0, 0.0, 0.5, tol=1e-12)
    ref, _ = reference_solve(full, u0.values, 0.5, atol=1e-12, rtol=1e-12)
    assert isinstance(exact, GridField)
    err = discrete_l2(exact - ref) / discrete_l2(ref)
    assert err < 1e-8
