import math
import statistics
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from splitcd import experiments
from splitcd.experiments import (
    DEFAULT_LADDER,
    ErrorReport,
    builtin,
    builtin_names,
    estimate_order,
    parse_fraction,
    reference_for,
    run_sweep,
    velocity_field,
    write_plot_script,
)
from splitcd.flows import FlowError


def small(name="ex1", **kw):
    kw.setdefault("n", 15)
    kw.setdefault("taus", (Fraction(1, 10), Fraction(1, 20)))
    return replace(builtin(name), **kw)


def test_catalog():
    assert builtin_names() == ["ex1", "ex2", "ex3", "ex3d"]
    assert [builtin(n).dim for n in builtin_names()] == [2, 2, 2, 3]
    with pytest.raises(KeyError, match="unknown experiment"):
        builtin("nope")


def test_ladder_and_horizon():
    spec = builtin("ex1")
    assert spec.taus == tuple(Fraction(1, d) for d in (10, 20, 40, 80, 160))
    assert spec.T == Fraction(1, 10)
    assert spec.mesh().h == pytest.approx((0.015, 0.015))


def test_ex1_initial_value_at_quarter_point():
    spec = builtin("ex1")
    u0 = spec.initial_field()
    pts = spec.mesh().points()
    i = np.flatnonzero(np.all(np.isclose(pts, 0.25, atol=1e-12), axis=1))
    assert i.size == 1
    assert u0.values[i[0]] == pytest.approx(2.0, abs=1e-14)


def test_ex3d_velocity_on_unit_sphere():
    c = velocity_field("ex3d", {"N": 3, "gamma": 2.0})
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    np.testing.assert_allclose(c(x), 2 * x, atol=1e-14)


def test_ex2_boundary_at_time_zero():
    b = builtin("ex2").boundary_data().value
    rng = np.random.default_rng(1)
    pts = np.column_stack([np.full(5, -0.5), rng.uniform(-0.5, 1, 5)])
    np.testing.assert_allclose(b(0.0, pts), 1.0)
    np.testing.assert_allclose(b(math.pi / 10, pts), 2.0)  # 1 + sin(5t) on x-faces
    top = np.column_stack([rng.uniform(-0.5, 1, 5), np.full(5, 1.0)])
    np.testing.assert_allclose(b(math.pi / 20, top), 2.0)  # 1 + sin(10t) on y-faces


def test_ex3_mesh_avoids_zero():
    mesh = builtin("ex3").mesh()
    assert mesh.n == (100, 100)
    assert np.min(np.abs(mesh.axis_nodes(0))) == pytest.approx(1 / 101)


def test_parse_fraction():
    assert parse_fraction("1/160") == Fraction(1, 160)
    assert parse_fraction(" 0.25 ") == Fraction(1, 4)
    with pytest.raises(ValueError):
        parse_fraction("x")


def test_tau_must_divide_horizon():
    with pytest.raises(ValueError, match="does not divide"):
        replace(builtin("ex1"), taus=(Fraction(1, 7),))


# order estimation --------------------------------------------------------------


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_estimate_order_power_law(p):
    pairs = [(float(t), 3.0 * float(t) ** p) for t in DEFAULT_LADDER]
    assert estimate_order(pairs) == pytest.approx(p, abs=1e-12)


def test_estimate_order_skips_infinite():
    pairs = [(0.1, math.inf), (0.05, 0.05), (0.025, 0.025)]
    assert estimate_order(pairs) == pytest.approx(1.0)


def test_log_factor_lowers_fitted_slope():
    # a tau (1 + |log tau|) error law fitted over the default ladder
    taus = [float(t) for t in DEFAULT_LADDER]
    errs = [t * (1 + abs(math.log(t))) for t in taus]
    oracle = statistics.linear_regression([math.log(t) for t in taus], [math.log(e) for e in errs]).slope
    got = estimate_order(zip(taus, errs))
    assert got == pytest.approx(oracle, abs=1e-12)
    assert got == pytest.approx(0.78117, abs=1e-5)
    assert got < 1.0


# reports -----------------------------------------------------------------------


def sample_report():
    r = ErrorReport("ex1", [0.1, 0.05, 0.025], [0.3, math.inf, 0.07], [0.2, 0.09, 0.04], K=95.38)
    r.fit_slopes()
    return r


def test_csv_round_trip(tmp_path):
    r = sample_report()
    r.to_csv(tmp_path / "r.csv")
    back = ErrorReport.from_csv(tmp_path / "r.csv")
    assert back == r
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "tau,err_classical,err_adapted,factor"
    assert any(line.startswith("# slope_classical=") for line in text)
    assert any(line.startswith("# slope_adapted=") for line in text)


def test_plot_script(tmp_path):
    r = sample_report()
    write_plot_script(r, tmp_path / "r.csv", tmp_path / "r.gp")
    text = (tmp_path / "r.gp").read_text()
    assert "set logscale xy" in text
    assert "'r.csv'" in text and "slope one" in text


def test_render_report(tmp_path):
    from splitcd.plotting import render_report

    out = render_report(sample_report(), tmp_path / "fig.png")
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# sweeps ------------------------------------------------------------------------


def test_sweep_reproducible_and_job_order(tmp_path):
    spec = small()
    a = run_sweep(spec, cache_dir=tmp_path)
    b = run_sweep(spec, cache_dir=tmp_path, jobs=2)
    assert a.err_classical == b.err_classical
    assert a.err_adapted == b.err_adapted
    assert a.taus == [0.1, 0.05]


def test_reference_cache(tmp_path):
    spec = small()
    ref, meta = reference_for(spec, tmp_path)
    files = list(tmp_path.glob("ref-ex1-*.txt"))
    assert len(files) == 1 and spec.cache_key() in files[0].name
    again, meta2 = reference_for(spec, tmp_path)
    np.testing.assert_array_equal(ref.values, again.values)
    fresh, _ = reference_for(spec, use_cache=False)
    np.testing.assert_array_equal(ref.values, fresh.values)
    assert small(rtol=1e-10).cache_key() != spec.cache_key()
    assert small(taus=(Fraction(1, 10),)).cache_key() == spec.cache_key()


def test_divergent_run_recorded_as_infinity(tmp_path, monkeypatch):
    spec = small(taus=(Fraction(1, 10),))
    real = experiments.integrate

    def flaky(scheme, *a, **kw):
        if scheme.kind == "classical":
            raise FlowError("blew up")
        return real(scheme, *a, **kw)

    monkeypatch.setattr(experiments, "integrate", flaky)
    r = run_sweep(spec, cache_dir=tmp_path)
    assert r.err_classical == [math.inf]
    assert math.isfinite(r.err_adapted[0])


def test_coincidence_regime_factor_one(tmp_path):
    r = run_sweep(small(K_policy="fixed", K=1e9, taus=(Fraction(1, 10),)), cache_dir=tmp_path)
    assert r.factors[0] == pytest.approx(1.0, abs=1e-10)
