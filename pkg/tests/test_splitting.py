import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitcd.experiments import estimate_order
from splitcd.flows import propagate
from splitcd.lorentz import TruncationLevel
from splitcd.mesh import BoundaryData, SpaceTimeFunction, build_mesh, discrete_l2, sample
from splitcd.operators import FaceVelocity
from splitcd.splitting import (
    ADAPTED,
    CLASSICAL,
    UncertifiedTruncationWarning,
    build_scheme,
    decompose_convection,
    integrate,
    lie_step,
    step_count,
    unsplit_system,
)

MESH = build_mesh((-0.5, -0.5), (1, 1), 12)


def inv_abs(x):
    return 1.0 / np.abs(x)


def smooth_velocity(x):
    return np.stack([1 + x[:, 1], -x[:, 0]], axis=1)


def bump(mesh):
    return sample(lambda t, x: np.exp(-10 * ((x[:, 0] - 0.3) ** 2 + (x[:, 1] - 0.2) ** 2)), mesh)


@settings(max_examples=40, deadline=None)
@given(K=st.floats(1e-3, 1e3))
def test_decomposition_reconstructs_and_bounds(K):
    fv = FaceVelocity.from_function(MESH, inv_abs)
    bounded, remainder = decompose_convection(fv, K)
    for c, b, r in zip(fv.vectors, bounded.vectors, remainder.vectors):
        np.testing.assert_allclose(b + r, c, rtol=1e-14)
        assert np.all(np.linalg.norm(b, axis=1) <= K * (1 + 1e-15))
        mag = np.linalg.norm(c, axis=1)
        np.testing.assert_array_equal(r[mag <= K], 0.0)


def test_adapted_coincides_with_classical_for_large_K():
    fv = FaceVelocity.from_function(MESH, inv_abs)
    b = BoundaryData(SpaceTimeFunction.constant(1.0))
    K = fv.max_magnitude()
    cl = build_scheme(CLASSICAL, MESH, 0.01, fv, b)
    ad = build_scheme(ADAPTED, MESH, 0.01, fv, b, K=K)
    assert abs(cl.convection.operator - ad.convection.operator).max() == 0.0
    assert abs(cl.diffusion.operator - ad.diffusion.operator).max() == 0.0
    u0 = bump(MESH)
    a = integrate(cl, u0, 0.2, 0.05).final
    c = integrate(ad, u0, 0.2, 0.05).final
    assert discrete_l2(a - c) <= 1e-12 * discrete_l2(a)


def test_zero_velocity_splitting_is_exact():
    b = BoundaryData(SpaceTimeFunction(lambda t, x: 1 + np.sin(5 * t) + 0 * x[:, 0]))
    zero = lambda x: np.zeros_like(x)
    scheme = build_scheme(CLASSICAL, MESH, 0.1, zero, b)
    u0 = bump(MESH)
    split = integrate(scheme, u0, 0.4, 0.1).final
    full = propagate(unsplit_system(MESH, 0.1, zero, b), u0, 0.0, 0.4, tol=1e-12)
    assert discrete_l2(split - full) <= 1e-9 * discrete_l2(full)


def test_local_error_second_order():
    b = BoundaryData.homogeneous()
    scheme = build_scheme(CLASSICAL, MESH, 0.05, smooth_velocity, b)
    full = unsplit_system(MESH, 0.05, smooth_velocity, b)
    u0 = bump(MESH)
    errs = []
    for tau in (0.02, 0.01, 0.005):
        one = lie_step(scheme, u0, 0.0, tau)
        exact = propagate(full, u0, 0.0, tau)
        errs.append(discrete_l2(one - exact))
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.2 <= e0 / e1 <= 4.8


def test_step_count():
    assert step_count(1.0, 1 / 16) == 16
    assert step_count(1.0, 0.1) == 10
    with pytest.raises(ValueError, match="integer multiple"):
        step_count(1.0, 0.3)


def test_trajectory_keeps_states():
    scheme = build_scheme(CLASSICAL, MESH, 0.05, smooth_velocity, BoundaryData.homogeneous())
    traj = integrate(scheme, bump(MESH), 0.5, 0.125, keep_states=True)
    assert len(traj.states) == 5
    np.testing.assert_allclose(traj.times, [0, 0.125, 0.25, 0.375, 0.5])


@pytest.mark.parametrize("kind", [CLASSICAL, ADAPTED])
def test_positivity_preserved(kind):
    b = BoundaryData(SpaceTimeFunction.constant(1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scheme = build_scheme(kind, MESH, 0.01, inv_abs, b, K=5.0 if kind == ADAPTED else None)
    u0 = sample(lambda t, x: np.abs(np.sin(7 * x[:, 0])), MESH)
    for tau in (0.1, 0.02):
        u = lie_step(scheme, u0, 0.0, tau)
        assert u.values.min() >= -1e-12


def test_bounded_velocity_first_order_globally():
    b = BoundaryData.homogeneous()
    scheme = build_scheme(CLASSICAL, MESH, 0.05, smooth_velocity, b)
    full = unsplit_system(MESH, 0.05, smooth_velocity, b)
    u0 = bump(MESH)
    ref = propagate(full, u0, 0.0, 0.5)
    pairs = []
    for tau in (1 / 8, 1 / 16, 1 / 32, 1 / 64):
        pairs.append((tau, discrete_l2(integrate(scheme, u0, 0.5, tau).final - ref)))
    assert 0.9 <= estimate_order(pairs) <= 1.1


def test_uncertified_level_warns():
    fv = FaceVelocity.from_function(MESH, inv_abs)
    with pytest.warns(UncertifiedTruncationWarning):
        build_scheme(ADAPTED, MESH, 0.01, fv, BoundaryData.homogeneous(),
                     K=TruncationLevel(1.0, 3.0, certified=False, target=0.1))


def test_default_K_policies():
    fv = FaceVelocity.from_function(MESH, inv_abs)
    s2 = build_scheme(ADAPTED, MESH, 0.01, fv, BoundaryData.homogeneous())
    assert s2.K.K == pytest.approx(10 * np.median(fv.magnitudes()))
    mesh3 = build_mesh((-0.5,) * 3, (1,) * 3, 7)
    v3 = lambda x: 2 * x / np.sum(x**2, axis=1, keepdims=True)
    s3 = build_scheme(ADAPTED, mesh3, 1.0, v3, BoundaryData.homogeneous())
    assert s3.K.certified and s3.K.delta <= s3.K.target


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        build_scheme("strang", MESH, 0.01, inv_abs, BoundaryData.homogeneous())
