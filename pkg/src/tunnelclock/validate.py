"""Invariant suites across all modules, runnable as one report.

Each suite returns a :class:`SuiteResult`; :func:`run_validation` collects
them into a JSON-ready report.  Randomized suites draw from a
``numpy.random.Generator`` seeded by the caller, so a report is
reproducible for a fixed seed.
"""

from __future__ import annotations

import cmath
import math
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.special import exp1

from .amplitude import (
    Geometry,
    SourceParams,
    commutator_form_element,
    free_kernel_terms,
    kernel_terms,
    m_amplitude,
    product_form_element,
    script_M,
    support_ratio,
)
from .correlation import (
    ModelConfig,
    extract_delta_line,
    fill_grid,
    saturation,
    summary,
)
from .quadrature import (
    IntegralResult,
    NonConvergenceWarning,
    QuadratureConfig,
    adaptive_gk,
    integrate_oscillatory_finite,
    integrate_pole_semiinfinite,
)
from .scattering import (
    BarrierProfile,
    scattering_coefficients,
    square_barrier_transmission,
    stripped_transmission,
)

__all__ = [
    "SuiteResult",
    "CorpusEntry",
    "quadrature_corpus",
    "random_profile",
    "SUITES",
    "run_validation",
]

ROUNDOFF = 10 * np.finfo(float).eps


@dataclass
class SuiteResult:
    name: str
    module: str
    passed: bool
    detail: str
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# shared fixtures


def random_profile(rng: np.random.Generator, max_segments: int = 4) -> BarrierProfile:
    """Random piecewise profile with lengths in [0.05, 2] and cutoffs in [0, 20]."""
    n = int(rng.integers(1, max_segments + 1))
    segs = tuple((float(rng.uniform(0.05, 2.0)), float(rng.uniform(0.0, 20.0))) for _ in range(n))
    return BarrierProfile(float(rng.uniform(0.5, 3.0)), segs)


def reversed_profile(profile: BarrierProfile) -> BarrierProfile:
    return BarrierProfile(profile.a, tuple(reversed(profile.segments)))


@dataclass(frozen=True)
class CorpusEntry:
    """Integral with a known value; ``run(cfg, method)`` returns an IntegralResult."""

    name: str
    exact: complex
    run: Callable[[QuadratureConfig, str], IntegralResult]
    methods: tuple[str, ...] = ("adaptive",)


def _gk(f, a, b, **kw):
    def run(cfg, method):
        return adaptive_gk(
            f, a, b, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, max_subdivisions=cfg.max_subdivisions, **kw
        )

    return run


def _osc(f, a, b, q):
    def run(cfg, method):
        return integrate_oscillatory_finite(f, a, b, q, cfg, analytic=True, method=method)

    return run


def _pole(f, P, **kw):
    def run(cfg, method):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            return integrate_pole_semiinfinite(f, P, cfg, **kw)

    return run


def quadrature_corpus() -> list[CorpusEntry]:
    """Twenty integrals with closed forms: smooth, singular, oscillatory, polar."""
    osc = ("direct-adaptive", "contour-rotated")
    P1 = 20 - 0.025j
    P2 = 3 - 0.1j
    P3 = 1 - 0.01j
    P4 = 5 - 0.05j
    P5 = 4 - 0.001j
    q13 = 15.0
    return [
        CorpusEntry("x^5 on [0,1]", 1 / 6, _gk(lambda x: x**5, 0, 1)),
        CorpusEntry("sin on [0,pi]", 2.0, _gk(np.sin, 0, math.pi)),
        CorpusEntry("exp on [0,1]", math.e - 1, _gk(np.exp, 0, 1)),
        CorpusEntry("1/sqrt(x) on [0,1]", 2.0, _gk(lambda x: 1 / np.sqrt(x), 0, 1)),
        CorpusEntry("log x on [0,1]", -1.0, _gk(np.log, 0, 1)),
        CorpusEntry("Runge 1/(1+25x^2) on [0,1]", math.atan(5) / 5, _gk(lambda x: 1 / (1 + 25 * x * x), 0, 1)),
        CorpusEntry("cos^2(50x) on [0,2pi]", math.pi, _gk(lambda x: np.cos(50 * x) ** 2, 0, 2 * math.pi)),
        CorpusEntry("sqrt(x) on [0,1]", 2 / 3, _gk(np.sqrt, 0, 1)),
        CorpusEntry("|x-1/3| on [0,1]", 5 / 18, _gk(lambda x: np.abs(x - 1 / 3), 0, 1, breakpoints=(1 / 3,))),
        CorpusEntry(
            "e^-x sin x on [0,10]",
            (1 - math.exp(-10) * (math.sin(10) + math.cos(10))) / 2,
            _gk(lambda x: np.exp(-x) * np.sin(x), 0, 10),
        ),
        CorpusEntry("e^{20ix} on [0,10]", (cmath.exp(200j) - 1) / 20j, _osc(lambda x: np.ones_like(x), 0, 10, 20.0), osc),
        CorpusEntry(
            "x e^{30ix} on [0,5]",
            cmath.exp(150j) * (5 / 30j + 1 / 900) - 1 / 900,
            _osc(lambda x: x, 0, 5, 30.0),
            osc,
        ),
        CorpusEntry(
            "e^{15ix}/x on [1,20]",
            complex(exp1(-1j * q13) - exp1(-20j * q13)),
            _osc(lambda x: 1 / x, 1, 20, q13),
            osc,
        ),
        CorpusEntry(
            "e^{-x} e^{40ix} on [0,3]",
            (cmath.exp((-1 + 40j) * 3) - 1) / (-1 + 40j),
            _osc(lambda x: np.exp(-x), 0, 3, 40.0),
            osc,
        ),
        CorpusEntry(
            "cos x e^{50ix} on [0,2]",
            0.5 * ((cmath.exp(102j) - 1) / 51j + (cmath.exp(98j) - 1) / 49j),
            _osc(np.cos, 0, 2, 50.0),
            osc,
        ),
        CorpusEntry(
            "e^{-5iw}/(w-P) on [0,inf)",
            cmath.exp(-1j * P1 * 5) * (complex(exp1(-5j * P1)) - 2j * math.pi),
            _pole(lambda w: np.exp(-5j * w), P1, oscillation=5.0),
        ),
        CorpusEntry("e^{-w}/(w-P) on [0,inf)", cmath.exp(-P2) * complex(exp1(-P2)), _pole(lambda w: np.exp(-w), P2)),
        CorpusEntry(
            "e^{-2w}/(w-P) on [0,inf)", cmath.exp(-2 * P3) * complex(exp1(-2 * P3)), _pole(lambda w: np.exp(-2 * w), P3)
        ),
        CorpusEntry("w/(w-P) on [0,10]", 10 + P4 * cmath.log((10 - P4) / (-P4)), _pole(lambda w: w, P4, upper=10.0)),
        CorpusEntry("1/(w-P) on [0,10], narrow", cmath.log((10 - P5) / (-P5)), _pole(lambda w: np.ones_like(w), P5, upper=10.0)),
    ]


def _true_error(res: IntegralResult, exact: complex) -> float:
    return abs(res.value - exact)


# ---------------------------------------------------------------------------
# scattering suites


def suite_unitarity(rng, inject):
    worst = 0.0
    for _ in range(25):
        prof = random_profile(rng)
        for k in rng.uniform(1e-3, 3 * max(prof.mu_max, 1.0), 200):
            worst = max(worst, scattering_coefficients(prof, float(k)).unitarity_residual)
    return worst < 1e-10, f"max ||T|^2+|R|^2-1| = {worst:.2e} (limit 1e-10)"


def suite_reciprocity(rng, inject):
    worst = 0.0
    for _ in range(25):
        prof = random_profile(rng)
        rev = reversed_profile(prof)
        for k in rng.uniform(1e-3, 3 * max(prof.mu_max, 1.0), 40):
            T = scattering_coefficients(prof, float(k)).T
            Tp = scattering_coefficients(rev, float(k)).T
            worst = max(worst, abs(T - Tp))
    return worst < 1e-12, f"max |T-T'| = {worst:.2e} (limit 1e-12)"


def suite_b1(rng, inject):
    # T R* e^{-2ika} + T* R' e^{-2ikb} = 0; inject={"b1_sign": -1} flips the second term
    sign = float(inject.get("b1_sign", 1.0))
    worst = 0.0
    for _ in range(25):
        prof = random_profile(rng)
        for k in rng.uniform(1e-3, 3 * max(prof.mu_max, 1.0), 40):
            sc = scattering_coefficients(prof, float(k))
            val = sc.T * np.conj(sc.R) * cmath.exp(-2j * k * prof.a) + sign * np.conj(sc.T) * sc.Rprime * cmath.exp(
                -2j * k * prof.b
            )
            worst = max(worst, abs(val))
    return worst < 1e-10, f"max B1 residual = {worst:.2e} (limit 1e-10)"


def suite_closed_form(rng, inject):
    worst_far = worst_near = 0.0
    for _ in range(20):
        mu = float(rng.uniform(0.5, 20))
        D = float(rng.uniform(0.05, 2))
        prof = BarrierProfile.square(1.0, D, mu)
        k = rng.uniform(1e-2, 3 * mu, 50)
        k = k[np.abs(k - mu) > 1e-3]
        tm = stripped_transmission(prof, k) * np.exp(-1j * k * D)
        cf = square_barrier_transmission(mu, D, k)
        worst_far = max(worst_far, float(np.max(np.abs(tm / cf - 1))))
        kn = mu + rng.uniform(-1e-3, 1e-3, 10)
        tm = stripped_transmission(prof, kn) * np.exp(-1j * kn * D)
        cf = square_barrier_transmission(mu, D, kn)
        worst_near = max(worst_near, float(np.max(np.abs(tm / cf - 1))))
    ok = worst_far < 1e-10 and worst_near < 1e-6
    return ok, f"relative |T - T_closed|: {worst_far:.2e} away from mu, {worst_near:.2e} within 1e-3 of mu"


def suite_branch_continuity(rng, inject):
    worst = 0.0
    for _ in range(20):
        prof = random_profile(rng, 3)
        for mu in prof.cutoffs:
            d = 1e-9 * max(mu, 1.0)
            lo, hi = stripped_transmission(prof, np.array([mu - d, mu + d]))
            worst = max(worst, abs(hi - lo))
    return worst < 1e-6, f"max jump of T across kz = mu: {worst:.2e}"


# ---------------------------------------------------------------------------
# quadrature suites


def suite_error_honesty(rng, inject):
    cfg = QuadratureConfig()
    honest = 0
    bad = []
    corpus = quadrature_corpus()
    for e in corpus:
        r = e.run(cfg, "auto")
        if _true_error(r, e.exact) <= 10 * r.error_estimate + ROUNDOFF * max(1.0, abs(e.exact)):
            honest += 1
        else:
            bad.append(e.name)
    frac = honest / len(corpus)
    return frac >= 0.95, f"{honest}/{len(corpus)} honest" + (f"; dishonest: {', '.join(bad)}" if bad else "")


def suite_method_equivalence(rng, inject):
    cfg = QuadratureConfig()
    bad = []
    n = 0
    for e in quadrature_corpus():
        if len(e.methods) < 2:
            continue
        n += 1
        a = e.run(cfg, e.methods[0])
        b = e.run(cfg, e.methods[1])
        if abs(a.value - b.value) > a.error_estimate + b.error_estimate + ROUNDOFF * max(1.0, abs(a.value)):
            bad.append(f"{e.name} ({abs(a.value - b.value):.1e})")
    return not bad, f"{n - len(bad)}/{n} agree within combined error" + (f"; differ: {', '.join(bad)}" if bad else "")


def suite_tolerance_monotonicity(rng, inject):
    bad = []
    for e in quadrature_corpus():
        errs = [_true_error(e.run(QuadratureConfig(rel_tol=t), "auto"), e.exact) for t in (1e-6, 1e-8, 1e-10)]
        slack = ROUNDOFF * max(1.0, abs(e.exact))
        if any(b > a + slack for a, b in zip(errs, errs[1:])):
            bad.append(e.name)
    return not bad, "true error non-increasing as rel_tol tightens" + (f"; violated: {', '.join(bad)}" if bad else "")


# ---------------------------------------------------------------------------
# amplitude suites

_SRC = SourceParams(20.0, 0.05)
_GEOM = Geometry(40.0)
_EMPTY = BarrierProfile.empty()
_OPAQUE = BarrierProfile.square(1.0, 1.0, 100.0)


def suite_t1_independence(rng, inject):
    t2 = 60.0
    w = np.array([19.9, 20.0, 20.1])
    base = script_M(w, t2, _SRC, _GEOM, _EMPTY)
    worst = 0.0
    for t1 in (61.0, 70.0, 90.0):
        worst = max(worst, float(np.max(np.abs(m_amplitude(w, t1, t2, _SRC, _GEOM, _EMPTY) - base))))
    scale = float(np.max(np.abs(base)))
    return worst <= 1e-12 * scale, f"max |M(t1) - M(t2)| over t1 > t2: {worst:.2e} (scale {scale:.2e})"


def suite_product_identity(rng, inject, draws: int = 4):
    bad = []
    worst = 0.0
    for _ in range(draws):
        src = SourceParams(float(rng.uniform(15, 25)), float(rng.uniform(0.03, 0.1)))
        geom = Geometry(float(rng.uniform(30, 45)))
        t = geom.z + float(rng.uniform(2, 10))
        prod = product_form_element(t, src, geom, _EMPTY)
        comm, cerr = commutator_form_element(t, src, geom, _EMPTY)
        diff = abs(prod.value - comm)
        tol = prod.error_estimate + cerr
        worst = max(worst, diff / max(tol, 1e-300))
        if diff > tol:
            bad.append(f"t={t:.2f}")
    return not bad, f"{draws - len(bad)}/{draws} draws agree; worst diff/tolerance = {worst:.2f}"


def suite_support(rng, inject):
    ratio, s = support_ratio(_SRC, _GEOM, _EMPTY)
    return ratio < 1e-3, f"max |K| outside light cone / peak = {ratio:.2e} at t - t1 = {s:.2f} (limit 1e-3)"


def suite_opaque_factorization(rng, inject):
    t, t1 = 50.0, 44.0
    Tp = complex(stripped_transmission(_OPAQUE, np.array([_SRC.pole]))[0])
    num = kernel_terms(t, t1, _SRC, _GEOM, _OPAQUE)
    ref = free_kernel_terms(t, t1, _SRC, _GEOM.z - _OPAQUE.D)
    ratios = [n / r for n, r in zip(num, ref)]
    worst = max(abs(r / Tp - 1) for r in ratios)
    return worst < 5e-2, f"max |I_j / I_j0 / calT(P) - 1| = {worst:.2e} (|calT(P)| = {abs(Tp):.2e}, limit 5e-2)"


# ---------------------------------------------------------------------------
# correlation suites


def _closed_cfg(barrier=_EMPTY):
    return ModelConfig(_SRC, _GEOM, barrier)


def _closed_grid(cfg, mode, t1=(45.0, 75.0), t2=(80.0, 130.0), h=0.5):
    a1 = np.arange(t1[0], t1[1] + h / 2, h)
    a2 = np.arange(t2[0], t2[1] + h / 2, h)
    return fill_grid(cfg, a1, a2, mode)


def suite_nonnegativity(rng, inject):
    worst = 0.0
    for prof, mode in ((_EMPTY, "closed"), (_OPAQUE, "opaque")):
        g = _closed_grid(_closed_cfg(prof), mode)
        w = g.w_values[np.isfinite(g.w_values)]
        worst = min(worst, float(w.min() / w.max()))
    return worst >= -1e-9, f"min w / peak = {worst:.2e}"


def suite_factorization(rng, inject):
    cfg = _closed_cfg()
    dl = extract_delta_line(_closed_grid(cfg, "closed"), cfg)
    model = dl.weights[0] * np.exp(-_SRC.gamma * (dl.t1_samples - dl.t1_samples[0]))
    worst = float(np.max(np.abs(dl.weights / model - 1)))
    return worst < 1e-2, f"max |w_line / (w0 e^(-Gamma t1)) - 1| = {worst:.2e} (limit 1e-2)"


def suite_total_weight(rng, inject):
    cfg = _closed_cfg()
    g = _closed_grid(cfg, "closed")
    h = g.h
    total = float(np.nansum(g.w_values)) * h * h
    # interior central differences telescope to the half-step-inset window
    lo, hi = g.t1_axis[0] + h / 2, g.t1_axis[-1] - h / 2
    expect = saturation(cfg, "closed") * (math.exp(-_SRC.gamma * lo) - math.exp(-_SRC.gamma * hi))
    rel = abs(total / expect - 1)
    return rel < 2e-2, f"grid total {total:.4e} vs {expect:.4e}, relative {rel:.2e} (limit 2e-2)"


def suite_scale_invariance(rng, inject, s: float = 3.0):
    worst = 0.0
    for prof, mode in ((_EMPTY, "closed"), (_OPAQUE, "opaque")):
        cfg = _closed_cfg(prof)
        a = _dimensionless(summary(_closed_grid(cfg, mode), cfg), cfg)
        cs = cfg.scaled(s)
        gs = fill_grid(
            cs,
            np.arange(45.0, 75.0 + 0.25, 0.5) / s,
            np.arange(80.0, 130.0 + 0.25, 0.5) / s,
            mode,
        )
        b = _dimensionless(summary(gs, cs), cs)
        for x, y in zip(a, b):
            # all three outputs are O(1) or exactly zero; a zero is compared absolutely
            worst = max(worst, abs(x - y) / (abs(x) if x != 0 else 1.0))
    return worst < 1e-6, f"max relative change of dimensionless outputs at s={s}: {worst:.2e}"


def _dimensionless(rec, cfg):
    g = cfg.source.gamma
    return (g * rec["clock_tunneling_time"], rec["transmission_mod2"], rec["delay"] / cfg.geometry.z)


def suite_monotonicity(rng, inject):
    worst = 0.0
    for prof, mode in ((_EMPTY, "closed"), (_OPAQUE, "opaque")):
        cfg = _closed_cfg(prof)
        g = _closed_grid(cfg, mode)
        p = g.p_values
        scale = float(p.max())
        worst = min(worst, float(np.diff(p, axis=0).min()) / scale, float(np.diff(p, axis=1).min()) / scale)
    return worst >= -1e-12, f"min step of p along t1 or t2, relative to max p: {worst:.2e}"


# ---------------------------------------------------------------------------
# cli suites


def suite_config_roundtrip(rng, inject):
    from .config import RunConfig
    import yaml

    cfg = RunConfig.from_dict({"barrier": {"a": 1.0, "segments": [[1.0, 100.0]]}, "mode": "opaque"})
    again = RunConfig.from_dict(yaml.safe_load(cfg.dumps()))
    return again == cfg, "load -> echo -> load is identical" if again == cfg else "round trip changed the config"


def suite_deterministic_output(rng, inject):
    from .cli import cmd_correlate
    from .config import RunConfig

    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg = RunConfig.from_dict({"grids": {"t1": [45, 55, 0.5], "t2": [80, 95, 0.5]}, "output": {"dir": tmp}})
        for _ in range(2):
            paths = cmd_correlate(cfg)
            blobs.append({p.name: p.read_bytes() for p in paths})
    same = blobs[0] == blobs[1]
    return same, "two identical runs are byte-identical" if same else "outputs differ between identical runs"


# ---------------------------------------------------------------------------

SUITES = [
    ("scattering", "unitarity", suite_unitarity),
    ("scattering", "reciprocity", suite_reciprocity),
    ("scattering", "B1 residual", suite_b1),
    ("scattering", "closed-form equivalence", suite_closed_form),
    ("scattering", "branch continuity", suite_branch_continuity),
    ("quadrature", "error-estimate honesty", suite_error_honesty),
    ("quadrature", "method equivalence", suite_method_equivalence),
    ("quadrature", "tolerance monotonicity", suite_tolerance_monotonicity),
    ("ww-amplitude", "t1 independence", suite_t1_independence),
    ("ww-amplitude", "commutator vs product identity", suite_product_identity),
    ("ww-amplitude", "support property", suite_support),
    ("ww-amplitude", "opaque factorization", suite_opaque_factorization),
    ("correlation", "nonnegativity", suite_nonnegativity),
    ("correlation", "factorization", suite_factorization),
    ("correlation", "total weight", suite_total_weight),
    ("correlation", "scale invariance", suite_scale_invariance),
    ("correlation", "monotonicity", suite_monotonicity),
    ("cli", "config round trip", suite_config_roundtrip),
    ("cli", "deterministic outputs", suite_deterministic_output),
]


def run_validation(seed: int = 0, *, inject: dict | None = None, only=None, progress=None) -> dict:
    """Run every suite (or those named in ``only``) and return the report.

    ``inject`` carries fault-injection switches for testing the harness
    itself; ``{"b1_sign": -1}`` flips a sign inside the B1 check.
    """
    inject = dict(inject or {})
    results = []
    for module, name, fn in SUITES:
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, len(results)])
        t0 = time.perf_counter()
        try:
            passed, detail = fn(rng, inject)
        except Exception as exc:  # a crashing suite is a failed suite
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        r = SuiteResult(name, module, bool(passed), detail, round(time.perf_counter() - t0, 3))
        results.append(r)
        if progress is not None:
            progress(r)
    failed = [r.name for r in results if not r.passed]
    return {
        "seed": seed,
        "passed": not failed,
        "failed": failed,
        "suites": [asdict(r) for r in results],
    }
