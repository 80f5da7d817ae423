import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tunnelclock.amplitude import Geometry, LightConeError, SourceParams
from tunnelclock.correlation import (
    CorrelationGrid,
    ModelConfig,
    NoConcentrationError,
    closed_delta_weight,
    closed_p,
    extract_delta_line,
    fill_grid,
    fit_exponential,
    mixed_second_difference,
    p_joint,
    saturation,
    single_click_rate,
    single_click_rate_quadrature,
    summary,
    transmission_mod2,
    tunneling_observables,
    write_grid_csv,
)
from tunnelclock.scattering import BarrierProfile, stripped_transmission

SRC = SourceParams(20.0, 0.05)
GEOM = Geometry(40.0)
EMPTY = BarrierProfile.empty()
OPAQUE = BarrierProfile.square(1.0, 1.0, 100.0)
FREE = ModelConfig(SRC, GEOM, EMPTY)
OPQ = ModelConfig(SRC, GEOM, OPAQUE)
# saturation value; the line integral of the Lorentzian is 2 pi / Gamma
A0 = 1 / (8 * math.pi * 40.0**2 * 0.05)


def axes(t1=(45.0, 75.0), t2=(80.0, 110.0), h=0.5):
    return np.arange(t1[0], t1[1] + h / 2, h), np.arange(t2[0], t2[1] + h / 2, h)


# -- closed forms


def test_saturation():
    assert saturation(FREE, "closed") == pytest.approx(A0, rel=1e-15)
    assert closed_p(1e6, 1e6, FREE, "closed") == pytest.approx(A0, rel=1e-12)


def test_closed_p_near_light_cone():
    t2 = 40.0 + 20 / 20.0
    p = closed_p(80.0, t2, FREE, "closed")
    assert p == pytest.approx(A0 * (1 - math.exp(-0.05 * 1.0)), rel=1e-14)


def test_closed_p_after_line_depends_on_t1_only():
    assert closed_p(50.0, 95.0, FREE, "closed") == pytest.approx(A0 * (1 - math.exp(-0.05 * 50)))
    assert closed_p(50.0, 95.0, FREE, "closed") == closed_p(50.0, 120.0, FREE, "closed")


def test_opaque_closed_p_scales_and_shifts():
    T2 = abs(complex(stripped_transmission(OPAQUE, np.array([SRC.pole]))[0])) ** 2
    p = closed_p(50.0, 95.0, OPQ, "opaque")
    assert p / T2 == pytest.approx(A0 * (40 / 39) ** 2 * (1 - math.exp(-0.05 * 50)), rel=1e-5)


def test_single_click_rate():
    assert single_click_rate(40.0, FREE) == 0
    half = single_click_rate(40.0 + math.log(2) / 0.05, FREE)
    assert half == pytest.approx(A0 / 2, rel=1e-14)


@pytest.mark.parametrize("t2", [45.0, 60.0, 90.0])
def test_single_click_rate_quadrature(t2):
    assert single_click_rate_quadrature(t2, FREE) == pytest.approx(single_click_rate(t2, FREE), rel=1e-4)


def test_half_line_differs_by_lorentzian_wing():
    full = single_click_rate_quadrature(90.0, FREE)
    half = single_click_rate_quadrature(90.0, FREE, lower=0.0)
    # the dropped negative-frequency wing is of order Gamma / (2 pi Omega)
    scale = 0.05 / (2 * math.pi * 20)
    assert 0.5 * scale < (full - half) / full < 2 * scale


def test_p_joint_numeric_example():
    p = p_joint(50.0, 95.0, FREE, "numeric")
    assert p == pytest.approx(closed_p(50.0, 95.0, FREE, "closed"), rel=1e-2)


def test_p_joint_light_cone():
    with pytest.raises(LightConeError, match="t2"):
        p_joint(50.0, 40.2, FREE, "closed")


# -- grids and differences


def test_mixed_difference_of_bilinear_is_constant():
    x = np.arange(6.0)
    p = 3.0 * np.outer(x, x)
    w = mixed_second_difference(p, 1.0)
    assert np.all(np.isnan(w[0])) and np.all(np.isnan(w[:, -1]))
    np.testing.assert_allclose(w[1:-1, 1:-1], 3.0)


def test_grid_rejects_nonuniform_axes():
    with pytest.raises(ValueError):
        fill_grid(FREE, [45.0, 46.0, 48.0], [80.0, 81.0, 82.0], "closed")


def test_closed_grid_delta_line():
    g = fill_grid(FREE, *axes(), "closed")
    dl = extract_delta_line(g, FREE)
    assert abs(dl.delay - 40.0) <= g.h
    assert dl.fit_gamma == pytest.approx(0.05, rel=1e-2)
    np.testing.assert_allclose(dl.weight_profile(dl.t1_samples), closed_delta_weight(dl.t1_samples, FREE, "closed"), rtol=2e-2)


def test_opaque_grid_delta_line():
    g = fill_grid(OPQ, *axes(), "opaque")
    dl = extract_delta_line(g, OPQ)
    assert abs(dl.delay - 39.0) <= g.h
    free = extract_delta_line(fill_grid(FREE, *axes(), "closed"), FREE)
    ratio = dl.fit_amplitude / free.fit_amplitude
    assert ratio == pytest.approx(transmission_mod2(OPQ, "opaque") * (40 / 39) ** 2, rel=1e-6)


def test_all_zero_grid():
    t1, t2 = axes()
    z = np.zeros((t1.size, t2.size))
    g = CorrelationGrid(t1, t2, z, mixed_second_difference(z, 0.5), "closed")
    with pytest.raises(NoConcentrationError, match="no concentration found"):
        extract_delta_line(g)


def test_observables():
    free = extract_delta_line(fill_grid(FREE, *axes(), "closed"), FREE)
    o = tunneling_observables(free, GEOM, EMPTY)
    assert o.clock_tunneling_time == pytest.approx(0.0, abs=1e-9)
    assert o.barrier_traversal_time == pytest.approx(0.0, abs=1e-9)
    opq = extract_delta_line(fill_grid(OPQ, *axes(), "opaque"), OPQ)
    o = tunneling_observables(opq, GEOM, OPAQUE)
    assert o.clock_tunneling_time == pytest.approx(-1.0, abs=1e-9)
    assert o.barrier_traversal_time == pytest.approx(0.0, abs=1e-9)
    assert o.vacuum_time == 40.0


def test_fit_exponential():
    t = np.linspace(0, 10, 11)
    a, g = fit_exponential(t, 3.0 * np.exp(-0.7 * t))
    assert a == pytest.approx(3.0) and g == pytest.approx(0.7)


def test_numeric_grid_small():
    t1, t2 = axes((45.0, 55.0), (80.0, 100.0))
    g = fill_grid(FREE, t1, t2, "numeric", threads=2)
    ref = closed_p(*np.meshgrid(t1, t2, indexing="ij"), FREE, "closed")
    assert np.max(np.abs(g.p_values / ref - 1)) < 1e-2
    assert np.all(g.p_errors >= 0)
    dl = extract_delta_line(g, FREE)
    assert abs(dl.delay - 40.0) <= g.h


def test_partially_transparent_barrier_is_reported():
    cfg = ModelConfig(SRC, GEOM, BarrierProfile.square(1.0, 0.05, 40.0))
    t1, t2 = axes((45.0, 52.0), (80.0, 95.0))
    rec = summary(fill_grid(cfg, t1, t2, "numeric"), cfg)
    assert "p_max_error" in rec["errors"]
    if rec["delay"] is not None:
        assert math.isfinite(rec["clock_tunneling_time"])


def test_grid_csv(tmp_path):
    t1, t2 = axes((45.0, 46.0), (80.0, 81.0))
    g = fill_grid(FREE, t1, t2, "closed")
    path = tmp_path / "g.csv"
    write_grid_csv(g, path, g.p_values)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# tunnelclock grid v1")
    assert lines[1] == "t1,t2,p,w,p_ref"
    assert len(lines) == 2 + t1.size * t2.size


# -- invariants


def test_closed_grid_nonnegative_and_monotone():
    for cfg, mode in ((FREE, "closed"), (OPQ, "opaque")):
        g = fill_grid(cfg, *axes(), mode)
        w = g.w_values[np.isfinite(g.w_values)]
        assert w.min() >= -1e-9 * w.max()
        assert np.diff(g.p_values, axis=0).min() >= -1e-12 * g.p_values.max()
        assert np.diff(g.p_values, axis=1).min() >= -1e-12 * g.p_values.max()


def test_total_weight():
    t1, t2 = axes((45.0, 75.0), (80.0, 130.0))
    g = fill_grid(FREE, t1, t2, "closed")
    total = np.nansum(g.w_values) * g.h**2
    expect = A0 * (math.exp(-0.05 * (t1[0] + 0.25)) - math.exp(-0.05 * (t1[-1] - 0.25)))
    assert total == pytest.approx(expect, rel=2e-2)


def test_line_factorization():
    dl = extract_delta_line(fill_grid(FREE, *axes(), "closed"), FREE)
    model = dl.weights[0] * np.exp(-0.05 * (dl.t1_samples - dl.t1_samples[0]))
    np.testing.assert_allclose(dl.weights, model, rtol=1e-2)


@settings(max_examples=15, deadline=None)
@given(st.floats(10.0, 40.0), st.floats(0.02, 0.2), st.floats(20.0, 60.0), st.sampled_from([2.0, 3.0, 0.5]))
def test_scale_invariance_closed(omega, gamma, z, s):
    src = SourceParams(omega, gamma)
    geom = Geometry(z)
    cfg = ModelConfig(src, geom, EMPTY)
    h = 10 / omega
    t1 = z + 25 / omega + h * np.arange(40)
    t2 = t1[0] + z + h * np.arange(-10, 40)
    rec = summary(fill_grid(cfg, t1, t2, "closed"), cfg)
    cs = cfg.scaled(s)
    rs = summary(fill_grid(cs, t1 / s, t2 / s, "closed"), cs)
    assert rec["delay"] / z == pytest.approx(rs["delay"] / cs.geometry.z, rel=1e-6)
    assert gamma * rec["clock_tunneling_time"] == pytest.approx(
        cs.source.gamma * rs["clock_tunneling_time"], abs=1e-6
    )
    assert rec["weight_fit"]["gamma"] / gamma == pytest.approx(rs["weight_fit"]["gamma"] / cs.source.gamma, rel=1e-6)
