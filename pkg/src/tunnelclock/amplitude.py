"""Wigner-Weisskopf matrix elements and the detection amplitude M_omega(t1, t2).

Units c = hbar = 1, Q_ge = 1 throughout.  The source pole is
``P = Omega - i Gamma / 2``.

Numeric mode reduces everything to one function of a single time variable,

    J(s) = int_0^inf G(w) exp(-i w s) / (w - P) dw,
    G(w) = int_0^w [T e^{i kz z} + T* e^{-i kz z}] dkz = 2 Re F(w),

with ``F(w) = int_0^w calT(kz) exp(i kz (z - D)) dkz``.  The commutator
kernel is ``K(t, t1) = [exp(-iPt) J(0) - exp(-iP t1) J(t - t1)] / (8 pi^2)``
and the amplitude is the Fourier integral of

    g(t) = [J(t) - exp(-iPt) J(0)] / (8 pi^2)              t < t1
    g(t) = [J(t) - exp(-iP t1) J(t - t1)] / (8 pi^2)       t > t1

over ``0 < t < t2``.  J is tabulated on a uniform lattice by a pole-subtracted
Gauss-Kronrod rule in ``w``; beyond the rule's upper end ``W`` the inner
integral is replaced by its free-space form ``F ~ F(0+) + e^{iwz}/(iz)`` whose
contribution is an exponential integral.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.special import erfc

from .quadrature import (
    IntegralResult,
    NonConvergenceWarning,
    PoleRule,
    QuadratureConfig,
    integrate_oscillatory_finite,
    integrate_pole_semiinfinite,
    pole_tail,
    ray_integral,
)
from .scattering import (
    BarrierProfile,
    NotOpaqueError,
    opaque_transmission_asymptotic,
    opaqueness,
    scattering_coefficients,
    stripped_transmission,
)

__all__ = [
    "AmplitudeMode",
    "SourceParams",
    "Geometry",
    "LightConeError",
    "ConsistencyError",
    "mode_functions",
    "ww_coefficient",
    "OverlapResult",
    "summed_mode_overlap",
    "inner_F",
    "transmission_factor",
    "effective_distance",
    "smooth_step",
    "closed_kernel",
    "closed_script_M",
    "closed_m_amplitude",
    "NumericEngine",
    "get_engine",
    "commutator_kernel",
    "kernel_terms",
    "free_kernel_terms",
    "product_form_element",
    "commutator_form_element",
    "script_M",
    "m_amplitude",
    "support_ratio",
]

EIGHT_PI2 = 8 * math.pi**2


class AmplitudeMode(str, Enum):
    NO_BARRIER_CLOSED = "NoBarrierClosed"
    OPAQUE_ASYMPTOTIC = "OpaqueAsymptotic"
    NUMERIC = "Numeric"

    @classmethod
    def parse(cls, name) -> "AmplitudeMode":
        if isinstance(name, cls):
            return name
        short = {"closed": cls.NO_BARRIER_CLOSED, "opaque": cls.OPAQUE_ASYMPTOTIC, "numeric": cls.NUMERIC}
        key = str(name)
        if key.lower() in short:
            return short[key.lower()]
        for m in cls:
            if m.value.lower() == key.lower():
                return m
        raise ValueError(f"unknown amplitude mode {name!r}")

    @property
    def short(self) -> str:
        return {"NoBarrierClosed": "closed", "OpaqueAsymptotic": "opaque", "Numeric": "numeric"}[self.value]


class LightConeError(ValueError):
    """Evaluation requested outside the region where the exponential decay ansatz holds."""


class ConsistencyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SourceParams:
    omega: float
    gamma: float
    norm: float = 1.0

    def __post_init__(self):
        for name in ("omega", "gamma", "norm"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"source.{name} must be positive and finite, got {v!r}")
        if not self.gamma < self.omega:
            raise ValueError(
                f"source.gamma={self.gamma} must be smaller than source.omega={self.omega} "
                "(decay ansatz needs a narrow line)"
            )

    @property
    def pole(self) -> complex:
        return complex(self.omega, -self.gamma / 2)

    def scaled(self, s: float) -> "SourceParams":
        """Frequencies times ``s``; ``norm`` is left as is."""
        return SourceParams(self.omega * s, self.gamma * s, self.norm)


@dataclass(frozen=True)
class Geometry:
    """Detector coordinate ``z`` and the light-cone margin ``(t - z) Omega >= margin``."""

    z: float
    margin: float = 20.0

    def __post_init__(self):
        if not (np.isfinite(self.z) and self.z > 0):
            raise ValueError(f"geometry.z must be positive, got {self.z!r}")
        if self.margin < 0:
            raise ValueError("geometry.margin must be non-negative")

    def validate(self, profile: BarrierProfile) -> None:
        if not profile.is_empty and not self.z > profile.b:
            raise ValueError(f"detector z={self.z} must lie beyond the barrier end b={profile.b}")
        if not self.z > profile.a and profile.is_empty:
            raise ValueError(f"detector z={self.z} must lie beyond a={profile.a}")

    def require_inside(self, t: float, src: SourceParams, what: str = "t") -> None:
        if (t - self.z) * src.omega < self.margin:
            raise LightConeError(
                f"{what}={t:g} is too close to the light cone: (t - z) Omega = "
                f"{(t - self.z) * src.omega:.3g} < margin {self.margin:g}; the decay ansatz "
                "is not valid there"
            )

    def scaled(self, s: float) -> "Geometry":
        """Lengths divided by ``s``."""
        return Geometry(self.z / s, self.margin)


# ---------------------------------------------------------------------------
# mode functions and the Wigner-Weisskopf coefficient


def mode_functions(profile: BarrierProfile, kz: float, x: float) -> tuple[complex, complex]:
    """``(v_+(kz|x), v_-(kz|x))`` outside the barrier."""
    if kz <= 0:
        raise ValueError("kz must be positive")
    a, b = profile.a, profile.b
    sc = scattering_coefficients(profile, kz)
    if x <= a:
        vp = np.exp(1j * kz * (x - a)) + sc.R * np.exp(-1j * kz * (x - a))
        vm = sc.T * np.exp(-1j * kz * (x - b))
    elif x >= b:
        vp = sc.T * np.exp(1j * kz * (x - a))
        vm = np.exp(-1j * kz * (x - b)) + sc.Rprime * np.exp(1j * kz * (x - b))
    else:
        raise ValueError(f"x={x} lies inside the barrier ({a}, {b})")
    return complex(vp), complex(vm)


def ww_coefficient(kr: float, kz: float, s: int, t: float, src: SourceParams, profile: BarrierProfile) -> complex:
    """Photon amplitude ``A^s_{kr kz}(t)`` of the decaying source (Q_ge = 1)."""
    if kr < 0 or kz < 0:
        raise ValueError("kr and kz must be non-negative")
    if t < 0:
        raise ValueError("t must be non-negative")
    if s not in (1, -1, "+", "-"):
        raise ValueError("direction s must be +1 or -1")
    s = 1 if s in (1, "+") else -1
    w = math.hypot(kr, kz)
    if w == 0:
        return 0j
    vp, vm = mode_functions(profile, kz, 0.0)
    v = vp if s == 1 else vm
    x = w - src.pole
    return complex(
        (1 / (2 * math.pi)) * math.sqrt(kr / (2 * w)) * np.conj(v) * (1 - np.exp(1j * x * t)) / x
    )


@dataclass(frozen=True)
class OverlapResult:
    direct: complex
    reduced: complex

    @property
    def discrepancy(self) -> float:
        return abs(self.direct - self.reduced)


def summed_mode_overlap(kz: float, z: float, profile: BarrierProfile, tol: float = 1e-10) -> OverlapResult:
    """``sum_s v_s*(kz|0) v_s(kz|z)`` by direct summation and in reduced form."""
    if not z > profile.b:
        raise ValueError(f"z={z} must lie beyond the barrier end b={profile.b}")
    p0, m0 = mode_functions(profile, kz, 0.0)
    pz, mz = mode_functions(profile, kz, z)
    direct = np.conj(p0) * pz + np.conj(m0) * mz
    T = scattering_coefficients(profile, kz).T
    reduced = T * np.exp(1j * kz * z) + np.conj(T) * np.exp(-1j * kz * z)
    res = OverlapResult(complex(direct), complex(reduced))
    scale = max(1.0, abs(reduced))
    if res.discrepancy > tol * scale:
        raise ConsistencyError(
            f"direct and reduced mode sums differ by {res.discrepancy:.3g} at kz={kz}: "
            "the reflection identity is broken"
        )
    return res


# ---------------------------------------------------------------------------
# inner integral


def _calT(profile: BarrierProfile):
    if profile.is_empty:
        return lambda k: np.ones_like(np.asarray(k), dtype=complex)
    return lambda k: stripped_transmission(profile, k)


def inner_F(
    omega: float,
    profile: BarrierProfile,
    z: float,
    cfg: QuadratureConfig = QuadratureConfig(),
    mode: AmplitudeMode | str = AmplitudeMode.NUMERIC,
    *,
    with_error: bool = False,
):
    """``F(omega) = int_0^omega calT(kz) exp(i kz (z - D)) dkz``.

    ``mode`` NoBarrierClosed gives the free-space antiderivative (the profile
    must then be empty), OpaqueAsymptotic the first-order endpoint term
    ``exp(i omega q) calT(omega) / (i q)`` with ``q = z - D``.
    """
    mode = AmplitudeMode.parse(mode)
    if omega < 0:
        raise ValueError("omega must be non-negative")
    q = z - profile.D
    if q <= 0:
        raise ValueError("z must exceed the barrier width")
    if omega == 0:
        out = IntegralResult(0j, 0.0, 0, "direct-adaptive")
    elif mode is AmplitudeMode.NO_BARRIER_CLOSED:
        if not profile.is_empty:
            raise ValueError("NoBarrierClosed mode needs an empty barrier profile")
        out = IntegralResult(complex((np.exp(1j * omega * z) - 1) / (1j * z)), 0.0, 1, "direct-adaptive")
    elif mode is AmplitudeMode.OPAQUE_ASYMPTOTIC:
        val = np.exp(1j * omega * q) * _calT(profile)(np.array([omega]))[0] / (1j * q)
        out = IntegralResult(complex(val), abs(val) / (abs(omega * q) + 1), 1, "contour-rotated")
    else:
        out = integrate_oscillatory_finite(
            _calT(profile), 0.0, omega, q, cfg, analytic=True, breakpoints=profile.cutoffs
        )
    return out if with_error else out.value


# ---------------------------------------------------------------------------
# closed forms


def effective_distance(geom: Geometry, profile: BarrierProfile, mode: AmplitudeMode) -> float:
    """Free-flight distance entering the closed forms: ``z`` or ``z - D``."""
    mode = AmplitudeMode.parse(mode)
    if mode is AmplitudeMode.OPAQUE_ASYMPTOTIC:
        return geom.z - profile.D
    return geom.z


def transmission_factor(src: SourceParams, profile: BarrierProfile, mode: AmplitudeMode, threshold: float = 1e-8) -> complex:
    """Amplitude factor of the closed forms: 1, or ``calT(P)`` in the opaque limit.

    A single-segment profile uses the asymptotic expression; a layered one uses
    the exact ``calT``.  Both require every segment to be opaque at ``Omega``.
    """
    mode = AmplitudeMode.parse(mode)
    if mode is AmplitudeMode.NO_BARRIER_CLOSED:
        return 1.0 + 0j
    if mode is not AmplitudeMode.OPAQUE_ASYMPTOTIC:
        raise ValueError("transmission_factor is defined for the closed modes only")
    if profile.is_empty:
        raise NotOpaqueError("the opaque closed form needs a barrier")
    total = 1.0
    for length, mu in profile.segments:
        total *= float(opaqueness(mu, length, src.omega))
    if not total < threshold:
        raise NotOpaqueError(
            f"barrier not opaque enough at Omega={src.omega}: exp(-2 D sqrt(mu^2 - Omega^2)) = {total:.3g}"
        )
    if len(profile.segments) == 1:
        (length, mu), = profile.segments
        return complex(opaque_transmission_asymptotic(mu, length, src.pole, threshold=threshold))
    return complex(stripped_transmission(profile, np.array([src.pole]))[0])


def smooth_step(x, eps: float | None = None):
    """Heaviside step, or its erf-smoothed version of width ``eps``.

    The sharp step takes the value 1/2 at 0.
    """
    x = np.asarray(x, dtype=float)
    if eps is None or eps == 0:
        return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
    return 0.5 * erfc(-x / eps)


def _check_closed(profile: BarrierProfile, mode: AmplitudeMode) -> None:
    if mode is AmplitudeMode.NO_BARRIER_CLOSED and not profile.is_empty:
        raise ValueError("NoBarrierClosed mode needs an empty barrier profile")


def closed_kernel(t, t1, src: SourceParams, geom: Geometry, profile: BarrierProfile, mode, eps=None):
    """Pole-term commutator kernel ``Tf/(4 pi d) theta(t - t1 - d) e^{-iP(t - d)}``."""
    mode = AmplitudeMode.parse(mode)
    _check_closed(profile, mode)
    d = effective_distance(geom, profile, mode)
    tf = transmission_factor(src, profile, mode)
    t = np.asarray(t, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    return tf / (4 * np.pi * d) * smooth_step(t - t1 - d, eps) * np.exp(-1j * src.pole * (t - d))


def _script_M0(omega, t2, pole, d):
    x = omega - pole
    return 1j / (4 * np.pi * d) * np.exp(1j * pole * d) * (np.exp(1j * x * t2) - np.exp(1j * x * d)) / x


def closed_script_M(omega, t2, src: SourceParams, geom: Geometry, profile: BarrierProfile, mode):
    mode = AmplitudeMode.parse(mode)
    _check_closed(profile, mode)
    d = effective_distance(geom, profile, mode)
    tf = transmission_factor(src, profile, mode)
    omega = np.asarray(omega, dtype=float)
    return tf * _script_M0(omega, np.asarray(t2, dtype=float), src.pole, d)


def closed_m_amplitude(omega, t1, t2, src, geom, profile, mode, eps=None):
    """``theta(t1 + d - t2) M(t2) + theta(t2 - t1 - d) M(t1 + d)``."""
    mode = AmplitudeMode.parse(mode)
    _check_closed(profile, mode)
    d = effective_distance(geom, profile, mode)
    tf = transmission_factor(src, profile, mode)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    after = smooth_step(t2 - t1 - d, eps)
    return tf * (
        (1 - after) * _script_M0(omega, t2, src.pole, d) + after * _script_M0(omega, t1 + d, src.pole, d)
    )


# ---------------------------------------------------------------------------
# numeric engine


def _bucket(t: float, z: float) -> float:
    """Round a time horizon up to a multiple of z/4 so engines are shared."""
    step = z / 4
    return step * math.ceil(t / step - 1e-9)


@dataclass
class _Lattice:
    offset: float
    values: np.ndarray
    errors: np.ndarray


class NumericEngine:
    """Tabulates ``J(s)`` for one (source, geometry, profile, config, horizon).

    ``t_max`` bounds every time argument; the frequency panels are sized so
    each holds at most ``cfg.panel_phase`` radians of ``exp(-i w s)``
    ``exp(+-i w z)`` for ``s <= t_max``.
    """

    def __init__(
        self,
        src: SourceParams,
        geom: Geometry,
        profile: BarrierProfile,
        cfg: QuadratureConfig,
        t_max: float,
        grid_step: float | None = None,
    ):
        geom.validate(profile)
        self.src, self.geom, self.profile, self.cfg = src, geom, profile, cfg
        self.t_max = float(t_max)
        z = geom.z
        self.q = z - profile.D
        P = src.pole
        self.P = P
        mu = profile.mu_max
        self.W = max(cfg.omega_cut(P), 2.0 * mu)
        width = cfg.panel_phase / (self.t_max + z)
        cut_focus = [(m, width) for m in profile.cutoffs if 0 < m < self.W]
        self.rule = PoleRule.build(P, self.W, width, cfg.pole_resolution * src.gamma, cut_focus)
        x = self.rule.nodes
        Fx, Fe, F0, F0e = self._inner(np.concatenate([x, [src.omega, self.W]]))
        self.F0 = F0
        Fp = Fx - F0
        Fm = np.conj(Fx) - np.conj(F0)
        # nodes, anchor (Omega) and cut (W) values of the two pole parts
        self.Fp_nodes, self.Fm_nodes = Fp[:-2], Fm[:-2]
        self.Fp_anchor, self.Fm_anchor = Fp[-2], Fm[-2]
        self.F_error = float(np.max(Fe) + F0e)
        inv = 1 / (x - P)
        wk, wg = self.rule.rule.weights, self.rule.rule.gauss_weights
        self.cp_k, self.cm_k = wk * inv * self.Fp_nodes, wk * inv * self.Fm_nodes
        self.cp_g, self.cm_g = wg * inv * self.Fp_nodes, wg * inv * self.Fm_nodes
        self.c_k = self.cp_k + self.cm_k
        self.c_g = self.cp_g + self.cm_g
        self.anchor_k = (self.Fp_anchor + self.Fm_anchor) * self.rule.correction
        self.anchor_g = (self.Fp_anchor + self.Fm_anchor) * self.rule.correction_gauss
        # mismatch between the exact inner integral and its free-space tail model at W
        Fw = Fx[-1]
        model = F0 + np.exp(1j * self.W * z) / (1j * z)
        self.tail_mismatch = float(abs(Fw - model)) + abs(2 * F0.real)
        # time lattice: Nyquist frequency at least 2W, commensurate with a grid step
        dt = math.pi / (2 * self.W)
        if grid_step is not None:
            dt = grid_step / math.ceil(grid_step / dt - 1e-9)
        self.dt = dt
        self.C1, self.C1_err = self._J_point(np.array([0.0]))
        self.C1, self.C1_err = complex(self.C1[0]), float(self.C1_err[0])
        self._lattices: dict[float, _Lattice] = {}

    # -- inner integral on all nodes
    def _inner(self, omegas):
        n = self.cfg.laguerre_nodes
        if self.profile.is_empty:
            z = self.geom.z
            F = (np.exp(1j * omegas * z) - 1) / (1j * z)
            return F, np.zeros(omegas.shape), complex(1j / z), 0.0
        f = _calT(self.profile)
        q = self.q
        v0, e0 = ray_integral(f, np.array([0.0]), q, n=n)
        out = np.empty(omegas.shape, dtype=complex)
        err = np.empty(omegas.shape)
        chunk = 8192
        for i in range(0, omegas.size, chunk):
            v, e = ray_integral(f, omegas[i : i + chunk], q, n=n)
            out[i : i + chunk] = v
            err[i : i + chunk] = e
        F0 = complex(v0[0])
        return F0 - out, err, F0, float(e0[0])

    # -- J and its pieces
    def _tail(self, s, part: str = "G"):
        z = self.geom.z
        s = np.asarray(s, dtype=float)
        lim = 1e-12 / self.W
        out = np.zeros(s.shape, dtype=complex)
        if part in ("G", "p"):
            u = s - z
            u = np.where(np.abs(u) < lim, lim, u)
            out += pole_tail(u, self.W, self.P) / (1j * z)
        if part in ("G", "m"):
            out -= pole_tail(s + z, self.W, self.P) / (1j * z)
        return out

    def _tail_error(self, s):
        s = np.asarray(s, dtype=float)
        dist = np.maximum(np.abs(s - self.geom.z), 1 / self.W)
        return 2 * self.tail_mismatch / ((self.W - self.src.omega) * dist) + 1e-16

    def _J_point(self, s, part: str = "G"):
        s = np.asarray(s, dtype=float)
        x = self.rule.nodes
        if part == "G":
            ck, cg, fa = self.c_k, self.c_g, self.Fp_anchor + self.Fm_anchor
        elif part == "p":
            ck, cg, fa = self.cp_k, self.cp_g, self.Fp_anchor
        elif part == "m":
            ck, cg, fa = self.cm_k, self.cm_g, self.Fm_anchor
        else:
            raise ValueError(part)
        out = np.empty(s.shape, dtype=complex)
        err = np.empty(s.shape)
        for i in range(0, s.size, 256):
            ss = s.ravel()[i : i + 256]
            E = np.exp(-1j * np.outer(ss, x))
            ph = np.exp(-1j * self.src.omega * ss)
            k = E @ ck + fa * ph * self.rule.correction
            g = E @ cg + fa * ph * self.rule.correction_gauss
            absterm = np.abs(E) @ np.abs(ck)
            out.ravel()[i : i + 256] = k + self._tail(ss, part)
            err.ravel()[i : i + 256] = (
                np.abs(k - g) + 64 * np.finfo(float).eps * absterm + self._tail_error(ss)
            )
        return out, err

    def J(self, s, part: str = "G"):
        """``int_0^inf G(w) e^{-iws}/(w - P) dw`` (``part`` p / m: the F or conj(F) piece)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s > self.t_max * (1 + 1e-9)) or np.any(s < 0):
            raise ValueError(f"s outside [0, t_max={self.t_max}]")
        return self._J_point(s, part)

    def lattice(self, offset: float, n: int) -> _Lattice:
        """``J((k + offset) dt)`` for ``k < n`` by blocked matrix products."""
        key = round(offset % 1.0, 12)
        lat = self._lattices.get(key)
        if lat is not None and lat.values.size >= n:
            return lat
        n = max(n, int(math.ceil(self.t_max / self.dt)) + 2)
        B = 64
        nb = int(math.ceil(n / B))
        x = self.rule.nodes
        dt = self.dt
        E0 = np.exp(-1j * np.outer(x, dt * np.arange(B)))
        vals = np.empty(nb * B, dtype=complex)
        gvals = np.empty(nb * B, dtype=complex)
        step = 16
        for b0 in range(0, nb, step):
            bs = np.arange(b0, min(nb, b0 + step))
            s0 = (bs * B + key) * dt
            ph = np.exp(-1j * np.outer(s0, x))
            blk = (ph * self.c_k) @ E0
            vals[b0 * B : (b0 + bs.size) * B] = blk.ravel()
            # embedded Gauss sum on every fourth block, for the error table
            gblk = (ph[::4] * self.c_g) @ E0
            for j, b in enumerate(bs[::4]):
                gvals[b * B : (b + 1) * B] = gblk[j]
        s = (np.arange(nb * B) + key) * dt
        anchor_ph = np.exp(-1j * self.src.omega * s)
        vals = vals + anchor_ph * self.anchor_k
        # error: Kronrod-Gauss difference, sampled every fourth block and spread
        diff = np.zeros(nb)
        for b in range(0, nb, 4):
            sl = slice(b * B, (b + 1) * B)
            diff[b] = np.max(np.abs(vals[sl] - (gvals[sl] + anchor_ph[sl] * self.anchor_g)))
        sampled = diff[::4]
        spread = np.repeat(np.maximum.accumulate(sampled[::-1])[::-1], 4)[:nb]
        err = np.repeat(np.maximum(spread, diff), B) + 64 * np.finfo(float).eps * np.sum(np.abs(self.c_k))
        vals = vals + self._tail(s)
        err = err + self._tail_error(s)
        lat = _Lattice(key, vals, err)
        self._lattices[key] = lat
        return lat

    # -- kernel
    def kernel(self, t, t1):
        """Commutator kernel and its error estimate (``t >= t1``)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        t1 = np.broadcast_to(np.asarray(t1, dtype=float), t.shape)
        if np.any(t < t1):
            raise ValueError("kernel needs t >= t1")
        Js, Je = self.J(t - t1)
        P = self.P
        val = (np.exp(-1j * P * t) * self.C1 - np.exp(-1j * P * t1) * Js) / EIGHT_PI2
        err = (np.abs(np.exp(-1j * P * t)) * self.C1_err + np.abs(np.exp(-1j * P * t1)) * Je) / EIGHT_PI2
        return val, err

    def kernel_terms(self, t, t1):
        """``(I1, I2, I3, I4)`` of the four-term split, kernel = sum / (8 pi^2)."""
        P = self.P
        s = np.atleast_1d(np.asarray(t - t1, dtype=float))
        Jp0 = self._J_point(np.array([0.0]), "p")[0][0]
        Jm0 = self._J_point(np.array([0.0]), "m")[0][0]
        Jps = self._J_point(s, "p")[0]
        Jms = self._J_point(s, "m")[0]
        I1 = np.exp(-1j * P * t) * Jp0
        I2 = -np.exp(-1j * P * t1) * Jps
        I3 = np.exp(-1j * P * t) * Jm0
        I4 = -np.exp(-1j * P * t1) * Jms
        return I1, I2, I3, I4

    # -- time-domain integrand g(t) of the amplitude
    def _g_point(self, t, t1):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        P = self.P
        Jt, Je = self._J_point(t)
        before = t < t1
        g = np.empty(t.shape, dtype=complex)
        e = np.empty(t.shape)
        g[before] = Jt[before] - np.exp(-1j * P * t[before]) * self.C1
        e[before] = Je[before] + np.abs(np.exp(-1j * P * t[before])) * self.C1_err
        if np.any(~before):
            Js, Jse = self._J_point(t[~before] - t1)
            g[~before] = Jt[~before] - np.exp(-1j * P * t1) * Js
            e[~before] = Je[~before] + abs(np.exp(-1j * P * t1)) * Jse
        return g / EIGHT_PI2, e / EIGHT_PI2

    def time_cells(self, t1: float, t2: float):
        """Midpoint cells of ``[0, t2]`` and the integrand on them.

        Returns ``(g_uniform, err_uniform, specials)``: uniform cells
        ``[k dt, (k+1) dt]`` with midpoint samples (a cell cut by ``t1`` is
        zeroed there) plus a list of ``(t_mid, width, g, err)`` for the cut
        and partial cells.
        """
        if t2 > self.t_max * (1 + 1e-9):
            raise ValueError(f"t2={t2} exceeds engine horizon {self.t_max}")
        dt = self.dt
        P = self.P
        n = int(math.floor(t2 / dt + 1e-9))
        lat0 = self.lattice(0.5, n + 1)
        tm = (np.arange(n) + 0.5) * dt
        g = lat0.values[:n].copy()
        e = lat0.errors[:n].copy()
        specials = []
        inside = 0 < t1 < t2
        if inside:
            tau = t1 / dt
            k1 = int(math.floor(tau + 1e-9))
            phi = tau - k1
            if phi < 1e-9:
                phi = 0.0
            before = np.arange(n) < k1
            g[before] -= np.exp(-1j * P * tm[before]) * self.C1
            e[before] += np.abs(np.exp(-1j * P * tm[before])) * self.C1_err
            first_after = k1 + (1 if phi > 0 else 0)
            if first_after < n:
                o = 0.5 - phi
                shift = 0
                if o < 0:
                    o += 1.0
                    shift = 1
                m = n - first_after
                lat = self.lattice(o, m + shift + 1)
                idx = np.arange(first_after, n) - k1 - shift
                # (k + 1/2) dt - t1 = (k - k1 - shift + o) dt
                g[first_after:] -= np.exp(-1j * P * t1) * lat.values[idx]
                e[first_after:] += abs(np.exp(-1j * P * t1)) * lat.errors[idx]
            if phi > 0 and k1 < n:
                g[k1] = 0
                e[k1] = 0
                lo, hi = k1 * dt, (k1 + 1) * dt
                pts = np.array([(lo + t1) / 2, (t1 + hi) / 2])
                gv, ge = self._g_point(pts, t1)
                specials.append((pts[0], t1 - lo, gv[0] * EIGHT_PI2, ge[0] * EIGHT_PI2))
                specials.append((pts[1], hi - t1, gv[1] * EIGHT_PI2, ge[1] * EIGHT_PI2))
        else:
            g -= np.exp(-1j * P * tm) * self.C1
            e += np.abs(np.exp(-1j * P * tm)) * self.C1_err
        rest = t2 - n * dt
        if rest > 1e-9 * dt:
            lo = n * dt
            cuts = [lo, t2]
            if inside and lo < t1 < t2:
                cuts = [lo, t1, t2]
            for a_, b_ in zip(cuts[:-1], cuts[1:]):
                mid = (a_ + b_) / 2
                gv, ge = self._g_point(np.array([mid]), t1 if inside else np.inf)
                specials.append((mid, b_ - a_, gv[0] * EIGHT_PI2, ge[0] * EIGHT_PI2))
        return g / EIGHT_PI2, e / EIGHT_PI2, [(m, w, gv / EIGHT_PI2, ge / EIGHT_PI2) for m, w, gv, ge in specials]

    def amplitude(self, omega, t1: float, t2: float):
        """``M_omega(t1, t2)`` and an error bound, for an array of ``omega``."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        g, e, specials = self.time_cells(t1, t2)
        dt = self.dt
        tm = (np.arange(g.size) + 0.5) * dt
        out = np.empty(omega.shape, dtype=complex)
        for i in range(0, omega.size, 64):
            w = omega[i : i + 64]
            out[i : i + 64] = np.exp(1j * np.outer(w, tm)) @ g * dt
        err = np.full(omega.shape, float(np.sum(e) * dt))
        for m, wdt, gv, ge in specials:
            out += wdt * gv * np.exp(1j * omega * m)
            err += wdt * ge
        return out, err

    def joint_probability(self, t1: float, t2: float):
        """``int_0^inf |M_omega(t1, t2)|^2 d omega`` (norm = 1) and an error bound.

        The amplitude is a finite-time Fourier integral, so its squared modulus
        is sampled exactly enough by a discrete transform with frequency step
        below ``pi / t2``; the sum runs up to the lattice Nyquist frequency.
        """
        g, e, specials = self.time_cells(t1, t2)
        dt = self.dt
        n = g.size
        npad = sfft.next_fast_len(max(4 * n, 64))
        dw = 2 * math.pi / (npad * dt)
        m = np.arange(npad // 2 + 1)
        w = m * dw
        spec = sfft.ifft(g, n=npad)[: m.size] * npad * dt * np.exp(1j * w * dt / 2)
        for tmid, wdt, gv, ge in specials:
            spec += wdt * gv * np.exp(1j * w * tmid)
        f = np.abs(spec) ** 2
        p = dw * (np.sum(f) - 0.5 * (f[0] + f[-1]))
        # Cauchy-Schwarz with Parseval: |delta p| <= 2 pi (2 ||g|| ||dg|| + ||dg||^2)
        gn2 = dt * np.sum(np.abs(g) ** 2) + sum(wdt * abs(gv) ** 2 for _, wdt, gv, _ in specials)
        en2 = dt * np.sum(e**2) + sum(wdt * ge**2 for _, wdt, _, ge in specials)
        err = 2 * math.pi * (2 * math.sqrt(gn2 * en2) + en2)
        # spectrum beyond the Nyquist frequency, assuming 1/w^2 decay
        err += f[-1] * w[-1]
        return float(p), float(err)


@lru_cache(maxsize=16)
def _engine_cached(src, geom, profile, cfg, t_max, grid_step):
    return NumericEngine(src, geom, profile, cfg, t_max, grid_step)


def get_engine(
    src: SourceParams,
    geom: Geometry,
    profile: BarrierProfile,
    cfg: QuadratureConfig,
    t_max: float,
    grid_step: float | None = None,
) -> NumericEngine:
    """Shared engine; ``grid_step`` makes grid times fall on the time lattice."""
    return _engine_cached(src, geom, profile, cfg, _bucket(t_max, geom.z), grid_step)


# ---------------------------------------------------------------------------
# public operations


def _check_inputs(src, geom, profile):
    geom.validate(profile)


def commutator_kernel(t, t1, src, geom, profile, cfg=QuadratureConfig(), mode=AmplitudeMode.NUMERIC, *, eps=None, with_error=False):
    """``<g,vac|[phi(t, z), P_g(t1)]|e,vac>`` for ``t >= t1``."""
    mode = AmplitudeMode.parse(mode)
    _check_inputs(src, geom, profile)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    t1_arr = np.broadcast_to(np.asarray(t1, dtype=float), t_arr.shape)
    if np.any(t_arr < t1_arr):
        raise ValueError("commutator kernel needs t >= t1")
    for tt in t_arr:
        geom.require_inside(float(tt), src, "t")
    if mode is AmplitudeMode.NUMERIC:
        eng = get_engine(src, geom, profile, cfg, float(np.max(t_arr)))
        val, err = eng.kernel(t_arr, t1_arr)
    else:
        val = np.atleast_1d(closed_kernel(t_arr, t1_arr, src, geom, profile, mode, eps))
        err = np.zeros(val.shape)
    if np.ndim(t) == 0:
        val, err = complex(val[0]), float(err[0])
    return (val, err) if with_error else val


def kernel_terms(t, t1, src, geom, profile, cfg=QuadratureConfig()):
    """Numeric ``(I1, I2, I3, I4)``; their sum over ``8 pi^2`` is the kernel."""
    geom.require_inside(float(t), src, "t")
    eng = get_engine(src, geom, profile, cfg, float(t))
    return tuple(complex(np.atleast_1d(v)[0]) for v in eng.kernel_terms(t, t1))


def free_kernel_terms(t, t1, src: SourceParams, d: float, cfg=QuadratureConfig()):
    """The four free-space terms at distance ``d``, each by pole-subtracted quadrature.

    ``I1 = e^{-iPt}/(id) int e^{iwd}/(w-P)``, ``I2 = -e^{-iPt1}/(id) int e^{-iw(t-t1-d)}/(w-P)``,
    ``I3 = -e^{-iPt}/(id) int e^{-iwd}/(w-P)``, ``I4 = e^{-iPt1}/(id) int e^{-iw(t-t1+d)}/(w-P)``;
    each semi-infinite integral is the panel part up to the cut plus the exact tail.
    """
    P = src.pole
    cut = cfg.omega_cut(P)

    def full(u):
        # int_0^inf e^{-iwu}/(w-P) dw
        if u == 0:
            raise ValueError("the free-space term diverges at zero phase rate")
        r = integrate_pole_semiinfinite(lambda w: np.exp(-1j * w * u), P, cfg, upper=cut, oscillation=abs(u))
        return r.value + complex(pole_tail(u, cut, P))

    e_t = np.exp(-1j * P * t)
    e_t1 = np.exp(-1j * P * t1)
    s = t - t1
    return (
        e_t / (1j * d) * full(-d),
        -e_t1 / (1j * d) * full(s - d),
        -e_t / (1j * d) * full(d),
        e_t1 / (1j * d) * full(s + d),
    )


def product_form_element(t: float, src, geom, profile, cfg=QuadratureConfig()) -> IntegralResult:
    """``<g,vac|P_g(t1) phi(t, z)|e,vac>`` from its single-integral form.

    ``(1/8 pi^2) int_0^inf (e^{-iwt} - e^{-iPt}) G(w)/(w - P) dw``, integrated
    adaptively with the inner integral evaluated at every abscissa; the part
    beyond the cut uses the same free-space tail model as the tabulated route.
    Independent of ``t1``.
    """
    _check_inputs(src, geom, profile)
    P = src.pole
    z = geom.z
    eng = get_engine(src, geom, profile, cfg, t)
    W = eng.W
    cutoffs = [m for m in profile.cutoffs if 0 < m < W]
    f = _calT(profile)
    q = z - profile.D

    def G(w):
        w = np.asarray(w, dtype=float)
        if profile.is_empty:
            return 2 * np.sin(w * z) / z
        F = np.empty(w.shape, dtype=complex)
        for i in range(0, w.size, 4096):
            v, _ = ray_integral(f, w[i : i + 4096], q, n=cfg.laguerre_nodes)
            F[i : i + 4096] = eng.F0 - v
        return 2 * F.real

    ept = np.exp(-1j * P * t)

    def integrand(w):
        return (np.exp(-1j * w * t) - ept) * G(w)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        r = integrate_pole_semiinfinite(
            integrand, P, cfg, upper=W, oscillation=t + z, breakpoints=cutoffs
        )
    tail = eng._tail(np.array([t]))[0] - ept * eng._tail(np.array([0.0]))[0]
    tail_err = float(eng._tail_error(np.array([t]))[0] + abs(ept) * eng._tail_error(np.array([0.0]))[0])
    return IntegralResult(
        value=complex((r.value + tail) / EIGHT_PI2),
        error_estimate=(r.error_estimate + tail_err) / EIGHT_PI2,
        evaluations=r.evaluations,
        method="pole-subtracted",
        converged=r.converged,
    )


def commutator_form_element(t: float, src, geom, profile, cfg=QuadratureConfig()):
    """``-<g,vac|[phi(t, z), P_g(0)]|e,vac>`` from the tabulated kernel, with error."""
    eng = get_engine(src, geom, profile, cfg, t)
    val, err = eng.kernel(np.array([t]), np.array([0.0]))
    return complex(-val[0]), float(err[0])


def script_M(omega, t2: float, src, geom, profile, cfg=QuadratureConfig(), mode=AmplitudeMode.NUMERIC, *, with_error=False):
    """``int_0^t2 e^{iwt} <g,vac|P_g(t1) phi(t, z)|e,vac> dt`` (independent of t1)."""
    mode = AmplitudeMode.parse(mode)
    _check_inputs(src, geom, profile)
    geom.require_inside(t2, src, "t2")
    if mode is AmplitudeMode.NUMERIC:
        eng = get_engine(src, geom, profile, cfg, t2)
        val, err = eng.amplitude(omega, np.inf, t2)
    else:
        val = np.atleast_1d(closed_script_M(omega, t2, src, geom, profile, mode))
        err = np.zeros(val.shape)
    if np.ndim(omega) == 0:
        val, err = complex(val[0]), float(err[0])
    return (val, err) if with_error else val


def m_amplitude(omega, t1: float, t2: float, src, geom, profile, cfg=QuadratureConfig(), mode=AmplitudeMode.NUMERIC, *, eps=None, with_error=False):
    """Detection amplitude ``M_omega(t1, t2)``."""
    mode = AmplitudeMode.parse(mode)
    _check_inputs(src, geom, profile)
    geom.require_inside(t1, src, "t1")
    geom.require_inside(t2, src, "t2")
    if mode is AmplitudeMode.NUMERIC:
        eng = get_engine(src, geom, profile, cfg, t2)
        val, err = eng.amplitude(omega, t1, t2)
    else:
        val = np.atleast_1d(closed_m_amplitude(omega, t1, t2, src, geom, profile, mode, eps))
        err = np.zeros(val.shape)
    if np.ndim(omega) == 0:
        val, err = complex(val[0]), float(err[0])
    return (val, err) if with_error else val


def support_ratio(src, geom, profile, cfg=QuadratureConfig(), *, t=None, margin_cycles=10.0, n=801):
    """``max |K(t, t1)|`` outside the light cone over its peak, at fixed ``t``.

    Outside means ``t - t1 < z - margin_cycles / Omega``; ``t1`` runs over
    ``[0, t]``.  Returns ``(ratio, s_outside_max)`` where the second entry is
    the separation ``t - t1`` at which the outside maximum sits.
    """
    _check_inputs(src, geom, profile)
    if t is None:
        t = geom.z + 2 * geom.margin / src.omega + 5.0
    s = np.linspace(0.0, t, n)
    edge = geom.z - margin_cycles / src.omega
    s = np.union1d(s, np.linspace(edge - 2.0, edge, 81))
    s = s[(s >= 0) & (s <= t)]
    K = np.abs(commutator_kernel(np.full(s.shape, t), t - s, src, geom, profile, cfg))
    out = s < edge
    i = int(np.argmax(np.where(out, K, -1.0)))
    return float(K[i] / K.max()), float(s[i])
