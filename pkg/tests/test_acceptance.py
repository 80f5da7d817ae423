"""Acceptance criteria, one test each, at the stated tolerances and runtimes.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured quantity and the wall time.
"""

import cmath
import math
import time

import numpy as np
import pytest

from tunnelclock.amplitude import (
    Geometry,
    SourceParams,
    commutator_form_element,
    product_form_element,
    support_ratio,
)
from tunnelclock.correlation import (
    ModelConfig,
    closed_p,
    extract_delta_line,
    fill_grid,
    summary,
    transmission_mod2,
)
from tunnelclock.scattering import (
    BarrierProfile,
    b1_residual,
    opaque_transmission_asymptotic,
    scattering_coefficients,
    square_barrier_transmission,
)
from tunnelclock.validate import random_profile, reversed_profile

SRC = SourceParams(20.0, 0.05)
GEOM = Geometry(40.0)
EMPTY = BarrierProfile.empty()
OPAQUE = BarrierProfile.square(1.0, 1.0, 100.0)
H = 0.5
T1 = np.arange(45.0, 75.0 + H / 2, H)
T2 = np.arange(80.0, 110.0 + H / 2, H)


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()
    lines = []

    def emit(n, ok, detail, limit):
        dt = time.perf_counter() - t0
        ok = bool(ok) and dt < limit
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}  {detail}  [{dt:.1f}s, limit {limit:.0f}s]")
        lines.append(ok)
        return ok

    return emit


def test_criterion_1_unitarity_reciprocity(report):
    rng = np.random.default_rng(1)
    worst_u = worst_r = worst_b = 0.0
    for _ in range(500):
        prof = random_profile(rng)
        rev = reversed_profile(prof)
        for k in rng.uniform(1e-3, 3 * max(prof.mu_max, 1.0), 2):
            sc = scattering_coefficients(prof, float(k))
            worst_u = max(worst_u, sc.unitarity_residual)
            worst_r = max(worst_r, abs(sc.T - scattering_coefficients(rev, float(k)).T))
            worst_b = max(worst_b, b1_residual(sc, prof))
    ok = worst_u < 1e-10 and worst_r < 1e-12 and worst_b < 1e-10
    detail = f"unitarity {worst_u:.1e} < 1e-10, |T-T'| {worst_r:.1e} < 1e-12, B1 {worst_b:.1e} < 1e-10"
    assert report(1, ok, detail, 5)


def test_criterion_2_square_barrier_oracle(report):
    rng = np.random.default_rng(2)
    worst = worst_band = 0.0
    for n in range(1000):
        mu, D = rng.uniform(0.5, 20.0), rng.uniform(0.05, 2.0)
        # every tenth sample sits in the kappa ~ 0 series band
        k = mu + rng.uniform(-1e-4, 1e-4) if n % 10 == 0 else mu * rng.uniform(0.01, 3.0)
        rel = abs(scattering_coefficients(BarrierProfile.square(1.0, D, mu), k).T / square_barrier_transmission(mu, D, k) - 1)
        if abs(k - mu) < 1e-3:
            worst_band = max(worst_band, rel)
        else:
            worst = max(worst, rel)
    ok = worst < 1e-10 and worst_band < 1e-6
    assert report(2, ok, f"max rel {worst:.1e} < 1e-10, series band {worst_band:.1e} < 1e-6", 2)


def test_criterion_3_opaque_asymptotic(report):
    rng = np.random.default_rng(3)
    worst, n = 0.0, 0
    while n < 1000:
        mu, D = rng.uniform(5.0, 200.0), rng.uniform(0.1, 3.0)
        k = mu * rng.uniform(0.01, 1.0)
        if math.exp(-2 * D * math.sqrt(mu * mu - k * k)) >= 1e-8:
            continue
        if n % 2:
            k = complex(k, -rng.uniform(0.0, 0.1))
        exact = square_barrier_transmission(mu, D, k) * cmath.exp(1j * k * D)
        worst = max(worst, abs(opaque_transmission_asymptotic(mu, D, k) / exact - 1))
        n += 1
    assert report(3, worst < 1e-6, f"max rel over {n} opaque samples {worst:.1e} < 1e-6", 2)


def _free_numeric():
    cfg = ModelConfig(SRC, GEOM, EMPTY)
    return cfg, fill_grid(cfg, T1, T2, "numeric", threads=4)


def test_criterion_4_no_barrier_chain(report):
    cfg, g = _free_numeric()
    rng = np.random.default_rng(4)
    i = rng.integers(0, T1.size, 50)
    j = rng.integers(0, T2.size, 50)
    ref = closed_p(T1[i], T2[j], cfg, "closed")
    rel = float(np.max(np.abs(g.p_values[i, j] / ref - 1)))
    dl = extract_delta_line(g, cfg)
    gam = abs(dl.fit_gamma / SRC.gamma - 1)
    ok = rel < 1e-2 and abs(dl.delay - GEOM.z) <= g.h and gam < 1e-2
    detail = f"p rel {rel:.1e} < 1e-2, delay {dl.delay:.2f} vs {GEOM.z}, Gamma rel {gam:.1e} < 1e-2"
    assert report(4, ok, detail, 300)


def test_criterion_5_opaque_barrier(report):
    cfg = ModelConfig(SRC, GEOM, OPAQUE)
    g = fill_grid(cfg, T1, T2, "numeric", threads=4)
    free_cfg, free = _free_numeric()
    target = GEOM.z - OPAQUE.D
    expect = transmission_mod2(cfg, "opaque") * (GEOM.z / target) ** 2
    try:
        dl = extract_delta_line(g, cfg)
        fl = extract_delta_line(free, free_cfg)
        ratio = dl.fit_amplitude / fl.fit_amplitude
        rel = abs(ratio / expect - 1)
        ok = abs(dl.delay - target) <= 2 * g.h and rel < 5e-2
        detail = f"delay {dl.delay:.2f} vs {target:.2f} +/- {2 * g.h}, weight ratio rel {rel:.1e} < 5e-2"
    except Exception as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    assert report(5, ok, detail, 600)


def test_criterion_6_commutator_identity(report):
    rng = np.random.default_rng(6)
    bad, worst = 0, 0.0
    for _ in range(20):
        src = SourceParams(float(rng.uniform(15, 25)), float(rng.uniform(0.03, 0.1)))
        geom = Geometry(float(rng.uniform(30, 45)))
        t = geom.z + float(rng.uniform(2, 10))
        prod = product_form_element(t, src, geom, EMPTY)
        comm, cerr = commutator_form_element(t, src, geom, EMPTY)
        tol = prod.error_estimate + cerr
        diff = abs(prod.value - comm)
        worst = max(worst, diff / tol)
        bad += diff > tol
    assert report(6, bad == 0, f"{20 - bad}/20 draws agree, worst diff/tolerance {worst:.1e}", 120)


def test_criterion_7_support(report):
    ratio, s = support_ratio(SRC, GEOM, EMPTY)
    assert report(7, ratio < 1e-3, f"max |K| outside / peak {ratio:.2e} at t - t1 = {s:.2f}, limit 1e-3", 60)


def _dimensionless(rec, cfg):
    g = cfg.source.gamma
    return np.array(
        [g * rec["clock_tunneling_time"], rec["transmission_mod2"], rec["delay"] / cfg.geometry.z, rec["weight_fit"]["gamma"] / g]
    )


def _rel(a, b):
    scale = np.where(a != 0, np.abs(a), 1.0)
    return float(np.max(np.abs(a - b) / scale))


def test_criterion_8_scale_invariance(report):
    s = 3.0
    worst_closed = worst_numeric = 0.0
    for prof, mode in ((EMPTY, "closed"), (OPAQUE, "opaque"), (EMPTY, "numeric")):
        cfg = ModelConfig(SRC, GEOM, prof)
        cs = cfg.scaled(s)
        a = _dimensionless(summary(fill_grid(cfg, T1, T2, mode, threads=4), cfg), cfg)
        b = _dimensionless(summary(fill_grid(cs, T1 / s, T2 / s, mode, threads=4), cs), cs)
        if mode == "numeric":
            worst_numeric = _rel(a, b)
        else:
            worst_closed = max(worst_closed, _rel(a, b))
    ok = worst_closed < 1e-6 and worst_numeric < 1e-2
    assert report(8, ok, f"closed {worst_closed:.1e} < 1e-6, numeric {worst_numeric:.1e} < 1e-2 at s = {s}", 600)
