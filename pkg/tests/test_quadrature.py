import cmath
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import exp1

from tunnelclock.quadrature import (
    IntegralResult,
    NonConvergenceWarning,
    PoleRule,
    QuadratureConfig,
    adaptive_gk,
    integrate_oscillatory_finite,
    integrate_pole_semiinfinite,
    pole_tail,
    ray_integral,
    write_diagnostics,
)
from tunnelclock.scattering import BarrierProfile, stripped_transmission
from tunnelclock.validate import ROUNDOFF, quadrature_corpus

CFG = QuadratureConfig()
P = 20 - 0.025j


def pole_oracle(u, pole=P):
    """int_0^inf e^{-iwu}/(w - pole) dw for u > 0."""
    return cmath.exp(-1j * pole * u) * (complex(exp1(-1j * u * pole)) - 2j * math.pi)


# -- config and result types


@pytest.mark.parametrize(
    "kw", [{"rel_tol": 0}, {"abs_tol": -1}, {"rotation_angle": 0}, {"rotation_angle": 2.0}, {"max_subdivisions": 0}]
)
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        QuadratureConfig(**kw)


def test_omega_cut():
    assert CFG.omega_cut(P) == pytest.approx(20 + 2000 * 0.05)


def test_negative_error_estimate_rejected():
    with pytest.raises(ValueError):
        IntegralResult(0j, -1.0, 0, "direct-adaptive")


# -- adaptive Gauss-Kronrod


def test_gk_is_exact_for_polynomials():
    r = adaptive_gk(lambda x: 7 * x**20 - x**3, -1.0, 2.0)
    assert r.value == pytest.approx((2**21 + 1) / 3 - (16 - 1) / 4, rel=1e-14)


def test_gk_agrees_with_scipy():
    f = lambda x: np.exp(-x) * np.cos(7 * x) / (1 + x * x)
    ref, _ = integrate.quad(f, 0, 10, limit=200, epsabs=1e-14, epsrel=1e-13)
    r = adaptive_gk(f, 0, 10, rel_tol=1e-12)
    assert abs(r.value - ref) < 1e-12


def test_sqrt_singularity_converges_and_tightens():
    # int_0^2 1/sqrt|x-1| dx = 4, singular at the interior point 1
    f = lambda x: 1 / np.sqrt(np.abs(x - 1))
    errs = []
    for tol in (1e-4, 5e-5, 2.5e-5):
        r = adaptive_gk(f, 0, 2, breakpoints=(1.0,), rel_tol=tol, max_subdivisions=5000)
        assert r.converged
        assert abs(r.value - 4) <= 10 * r.error_estimate
        errs.append(r.error_estimate)
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_nonconvergence_is_flagged():
    with pytest.warns(NonConvergenceWarning):
        r = adaptive_gk(lambda x: np.sin(1 / x), 1e-6, 1.0, rel_tol=1e-14, max_subdivisions=8)
    assert not r.converged
    assert np.isfinite(r.value) and r.error_estimate > 0


def test_pairwise_summation_is_deterministic():
    f = lambda x: np.cos(40 * x) * np.exp(-x)
    a = adaptive_gk(f, 0, 5)
    b = adaptive_gk(f, 0, 5)
    assert a.value == b.value and a.error_estimate == b.error_estimate


# -- oscillatory finite integrals


@pytest.mark.parametrize("q, w", [(3.0, 2.0), (39.0, 20.0), (-5.0, 1.5)])
def test_constant_integrand(q, w):
    exact = (cmath.exp(1j * q * w) - 1) / (1j * q)
    r = integrate_oscillatory_finite(lambda x: np.ones_like(x, dtype=complex), 0.0, w, q, analytic=True)
    assert abs(r.value - exact) < 1e-10


def test_rotation_is_chosen_for_strong_oscillation():
    f = lambda x: np.ones_like(x, dtype=complex)
    assert integrate_oscillatory_finite(f, 0, 20, 39.0, analytic=True).method == "contour-rotated"
    assert integrate_oscillatory_finite(f, 0, 1, 3.0, analytic=True).method == "direct-adaptive"
    assert integrate_oscillatory_finite(f, 0, 20, 39.0, analytic=False).method == "direct-adaptive"


def test_opaque_inner_integral_matches_asymptotic():
    prof = BarrierProfile.square(1.0, 1.0, 100.0)
    q = 39.0
    f = lambda k: stripped_transmission(prof, k)
    r = integrate_oscillatory_finite(f, 0.0, 20.0, q, analytic=True)
    asym = cmath.exp(20j * q) * complex(f(np.array([20.0]))[0]) / (1j * q)
    assert abs(r.value / asym - 1) < 1e-2


def test_direct_and_rotated_agree_on_inner_integral():
    prof = BarrierProfile.square(1.0, 1.0, 100.0)
    f = lambda k: stripped_transmission(prof, k)
    a = integrate_oscillatory_finite(f, 0.0, 20.0, 39.0, analytic=True, method="direct-adaptive")
    b = integrate_oscillatory_finite(f, 0.0, 20.0, 39.0, analytic=True, method="contour-rotated")
    assert abs(a.value - b.value) <= a.error_estimate + b.error_estimate + 1e-14


def test_branch_point_is_a_breakpoint():
    # sqrt|x - mu| kink inside the range
    mu = 1.3
    f = lambda x: np.sqrt(np.abs(x - mu)).astype(complex)
    r = integrate_oscillatory_finite(f, 0.0, 2.0, 4.0, breakpoints=(mu,), method="direct-adaptive")
    re, _ = integrate.quad(lambda x: math.sqrt(abs(x - mu)) * math.cos(4 * x), 0, 2, points=[mu], epsabs=1e-13)
    im, _ = integrate.quad(lambda x: math.sqrt(abs(x - mu)) * math.sin(4 * x), 0, 2, points=[mu], epsabs=1e-13)
    assert abs(r.value - complex(re, im)) < 1e-9


def test_ray_integral_error_decreases_with_nodes():
    f = lambda x: 1 / (x + 1)
    ends = np.array([0.0])
    _, e20 = ray_integral(f, ends, 15.0, n=20)
    _, e40 = ray_integral(f, ends, 15.0, n=40)
    assert e40[0] < e20[0]


# -- pole integrals


def test_zero_integrand():
    r = integrate_pole_semiinfinite(lambda w: np.zeros_like(w, dtype=complex), P, upper=50.0)
    assert r.value == 0


def test_constant_on_truncated_domain():
    r = integrate_pole_semiinfinite(lambda w: np.ones_like(w, dtype=complex), P, upper=70.0)
    assert abs(r.value - cmath.log((70 - P) / (-P))) < 1e-14


def test_pole_rejects_upper_half_plane():
    with pytest.raises(ValueError):
        integrate_pole_semiinfinite(lambda w: w, 20 + 0.1j)


@pytest.mark.parametrize("s", [2.0, 10.0, 60.0])
def test_residue_term(s):
    # residue from closing e^{-iws} downward; the E1 remainder is O(1/(s Omega))
    cut = CFG.omega_cut(P)
    r = integrate_pole_semiinfinite(lambda w: np.exp(-1j * w * s), P, upper=cut, oscillation=s)
    value = r.value + complex(pole_tail(s, cut, P))
    assert abs(value - pole_oracle(s)) < 1e-9
    residue = -2j * math.pi * cmath.exp(-1j * P * s)
    assert abs(value - residue) < 2 / (s * abs(P))


def test_tail_is_flagged_when_large():
    with pytest.warns(NonConvergenceWarning):
        r = integrate_pole_semiinfinite(lambda w: np.exp(-1j * w * 5.0), P, oscillation=5.0)
    assert not r.converged
    assert r.tail_estimate > CFG.abs_tol
    assert abs(r.value - pole_oracle(5.0)) <= r.error_estimate


def test_pole_rule_matches_adaptive():
    cut = 120.0
    rule = PoleRule.build(P, cut, 0.2, 0.125 * 0.025)
    f = lambda w: np.exp(-3j * w)
    val, err = rule.integrate(f(rule.nodes), complex(f(np.array([rule.anchor]))[0]))
    ref = integrate_pole_semiinfinite(f, P, upper=cut, oscillation=3.0).value
    assert abs(val - ref) < 1e-9


def test_diagnostics_csv(tmp_path):
    r = adaptive_gk(np.sin, 0, 3)
    path = tmp_path / "diag.csv"
    write_diagnostics(r, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lower,upper,error_estimate"
    assert len(lines) > 1


# -- corpus invariants


def test_corpus_has_twenty_integrals():
    assert len(quadrature_corpus()) == 20


def test_error_estimate_honesty():
    corpus = quadrature_corpus()
    honest = 0
    for e in corpus:
        r = e.run(CFG, "auto")
        honest += abs(r.value - e.exact) <= 10 * r.error_estimate + ROUNDOFF * max(1, abs(e.exact))
    assert honest >= 0.95 * len(corpus)


def test_method_equivalence():
    for e in quadrature_corpus():
        if len(e.methods) < 2:
            continue
        a = e.run(CFG, e.methods[0])
        b = e.run(CFG, e.methods[1])
        assert abs(a.value - b.value) <= a.error_estimate + b.error_estimate + ROUNDOFF * max(1, abs(a.value)), e.name


def test_tolerance_monotonicity():
    for e in quadrature_corpus():
        errs = [abs(e.run(QuadratureConfig(rel_tol=t), "auto").value - e.exact) for t in (1e-6, 1e-8, 1e-10)]
        slack = ROUNDOFF * max(1, abs(e.exact))
        assert errs[1] <= errs[0] + slack and errs[2] <= errs[1] + slack, e.name


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(0.5, 60.0))
def test_constant_oscillatory_property(q, w):
    exact = (cmath.exp(1j * q * w) - 1) / (1j * q)
    r = integrate_oscillatory_finite(lambda x: np.ones_like(x, dtype=complex), 0.0, w, q, analytic=True)
    assert abs(r.value - exact) <= max(10 * r.error_estimate, 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 30.0), st.floats(0.01, 0.5), st.floats(0.5, 40.0))
def test_pole_oracle_property(omega, gamma, s):
    pole = omega - 0.5j * gamma
    cut = omega + 2000 * gamma
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        r = integrate_pole_semiinfinite(lambda w: np.exp(-1j * w * s), pole, upper=cut, oscillation=s)
    value = r.value + complex(pole_tail(s, cut, pole))
    assert abs(value - pole_oracle(s, pole)) < 1e-8
