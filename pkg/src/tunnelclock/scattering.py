"""One-dimensional scattering on piecewise-constant cutoff profiles.

The longitudinal mode equation is ``-v'' + V(z) v = kz**2 v`` with
``V = mu_i**2`` on segment ``i`` and ``V = 0`` outside ``[a, b]``.  Units are
natural (c = hbar = 1), so ``mu_i`` is the cutoff frequency of the segment.

Coefficient conventions follow the asymptotic forms used throughout the
package::

    v_+(z) = exp(ik(z-a)) + R exp(-ik(z-a))      z < a
           = T exp(ik(z-a))                      z > b
    v_-(z) = T exp(-ik(z-b))                     z < a
           = exp(-ik(z-b)) + R' exp(ik(z-b))     z > b

so ``T``, ``R`` and ``R'`` only depend on the shape of the profile (they are
the coefficients of the profile translated to ``[0, D]``).  ``T`` contains
the free phase ``exp(-ik D)``; the remainder ``T * exp(ik D)`` is called the
*stripped* transmission throughout.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "BarrierProfile",
    "TransferMatrix",
    "ScatteringCoefficients",
    "NotOpaqueError",
    "PrecisionLossWarning",
    "PhaseIllConditionedError",
    "local_wavenumber",
    "transfer_matrix",
    "scattering_coefficients",
    "raw_coefficients",
    "stripped_transmission",
    "b1_residual",
    "square_barrier_transmission",
    "opaque_transmission_asymptotic",
    "opaqueness",
    "wigner_phase_time",
    "SERIES_THRESHOLD",
]

# |kappa * length| below which the segment matrix is built from its Taylor series
SERIES_THRESHOLD = 1e-4

_LOG_TINY = math.log(np.finfo(float).tiny)


class NotOpaqueError(ValueError):
    """The opaque-barrier expansion was requested outside its regime."""


class PhaseIllConditionedError(ArithmeticError):
    """|T| underflows, so arg T carries no usable information."""


class PrecisionLossWarning(RuntimeWarning):
    """Linear-scale coefficients under/overflowed; use the log representation."""


@dataclass(frozen=True)
class BarrierProfile:
    """Piecewise-constant cutoff profile starting at ``a``.

    ``segments`` is an ordered sequence of ``(length, cutoff)`` pairs.  An
    empty sequence means no barrier at all.
    """

    a: float
    segments: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        segs = tuple((float(length), float(mu)) for length, mu in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "a", float(self.a))
        if not math.isfinite(self.a) or self.a <= 0:
            raise ValueError(f"barrier start a must be positive and finite, got {self.a}")
        for i, (length, mu) in enumerate(segs):
            if not (math.isfinite(length) and length > 0):
                raise ValueError(f"segment {i}: length must be positive, got {length}")
            if not (math.isfinite(mu) and mu >= 0):
                raise ValueError(f"segment {i}: cutoff must be non-negative, got {mu}")

    @classmethod
    def square(cls, a: float, width: float, mu: float) -> "BarrierProfile":
        return cls(a, ((width, mu),))

    @classmethod
    def empty(cls, a: float = 1.0) -> "BarrierProfile":
        return cls(a, ())

    @property
    def D(self) -> float:
        return float(sum(length for length, _ in self.segments))

    @property
    def b(self) -> float:
        return self.a + self.D

    @property
    def is_empty(self) -> bool:
        return not self.segments

    @property
    def mu_max(self) -> float:
        return max((mu for _, mu in self.segments), default=0.0)

    @property
    def cutoffs(self) -> tuple[float, ...]:
        """Distinct positive cutoffs, sorted; these are the branch points in kz."""
        return tuple(sorted({mu for _, mu in self.segments if mu > 0}))

    def shifted(self, a: float) -> "BarrierProfile":
        return BarrierProfile(a, self.segments)

    def scaled(self, s: float) -> "BarrierProfile":
        """Lengths divided by ``s`` and cutoffs multiplied by ``s``."""
        return BarrierProfile(self.a / s, tuple((l / s, mu * s) for l, mu in self.segments))


@dataclass(frozen=True)
class TransferMatrix:
    """Plane-wave transfer matrix with a factored-out magnitude.

    ``matrix[..., :, :] * exp(log_scale)`` maps the amplitudes of
    ``(exp(+ik x), exp(-ik x))`` referenced at the left edge of the profile to
    the same pair referenced at the right edge.  Keeping the scale separate
    lets opaque profiles be handled without overflow.
    """

    matrix: np.ndarray
    log_scale: np.ndarray
    kz: np.ndarray

    def full(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.matrix * np.exp(self.log_scale)[..., None, None]

    @property
    def log_det(self) -> np.ndarray:
        # computed from the stored entries, so for opaque profiles the
        # relative error grows like eps * exp(2 * log_scale)
        m = self.matrix
        det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        return np.log(det) + 2 * self.log_scale


@dataclass(frozen=True)
class ScatteringCoefficients:
    """Coefficients at one (possibly complex) longitudinal frequency.

    ``log_T`` is ``log|T| + i arg T`` and stays finite when ``T`` itself
    underflows.
    """

    T: complex
    R: complex
    Rprime: complex
    kz: complex
    log_T: complex = field(default=complex("nan"))

    @property
    def unitarity_residual(self) -> float:
        return abs(abs(self.T) ** 2 + abs(self.R) ** 2 - 1.0)


def _check_kz(kz) -> np.ndarray:
    k = np.asarray(kz, dtype=complex)
    if not np.all(np.isfinite(k)):
        raise ValueError("kz must be finite")
    if np.any(k == 0):
        raise ValueError("kz = 0 is degenerate: the plane-wave basis collapses")
    return k


def local_wavenumber(kz, mu: float) -> np.ndarray:
    """``sqrt(kz**2 - mu**2)`` on the branch with ``Im >= 0``.

    For real ``kz < mu`` this is the decaying evanescent wavenumber, and the
    only cut sits on the real axis above ``mu`` (physical values on its upper
    edge).
    """
    k = np.asarray(kz, dtype=complex)
    kappa = np.sqrt(k * k - mu * mu)
    flip = (kappa.imag < 0) | ((kappa.imag == 0) & (kappa.real < 0))
    return np.where(flip, -kappa, kappa)


def _segment(kz: np.ndarray, length: float, mu: float):
    """Scaled (psi, psi') propagator across one segment.

    Returns ``(c, s_over_k, k_s, log_scale)`` with the segment matrix being
    ``[[c, s_over_k], [-k_s, c]] * exp(log_scale)``.  Every entry is even in
    kappa, so the branch of the square root does not matter here.
    """
    kappa2 = kz * kz - mu * mu
    kappa = local_wavenumber(kz, mu)
    x = kappa * length
    x2 = kappa2 * length * length
    small = np.abs(x) < SERIES_THRESHOLD

    # series: cos x = 1 - x^2/2 + x^4/24, sin x / x = 1 - x^2/6 + x^4/120
    c_ser = 1 - x2 / 2 + x2 * x2 / 24
    sinc_ser = 1 - x2 / 6 + x2 * x2 / 120

    m = np.abs(x.imag)
    with np.errstate(all="ignore"):
        e_plus = np.exp(1j * x - m)
        e_minus = np.exp(-1j * x - m)
        c_big = (e_plus + e_minus) / 2
        s_big = (e_plus - e_minus) / 2j
        s_over_k_big = s_big / kappa
        k_s_big = kappa * s_big

    c = np.where(small, c_ser, c_big)
    s_over_k = np.where(small, length * sinc_ser, s_over_k_big)
    k_s = np.where(small, kappa2 * length * sinc_ser, k_s_big)
    log_scale = np.where(small, 0.0, m)
    return c, s_over_k, k_s, log_scale


def transfer_matrix(profile: BarrierProfile, kz) -> TransferMatrix:
    """Transfer matrix of ``profile`` in the exterior plane-wave basis.

    Accepts scalar or array ``kz``; the matrix has shape ``kz.shape + (2, 2)``.
    """
    k = _check_kz(kz)
    shape = k.shape
    if profile.is_empty:
        eye = np.zeros(shape + (2, 2), dtype=complex)
        eye[..., 0, 0] = eye[..., 1, 1] = 1
        return TransferMatrix(eye, np.zeros(shape), k)
    # (psi, psi') propagator, accumulated with renormalisation
    m = np.zeros(shape + (2, 2), dtype=complex)
    m[..., 0, 0] = 1
    m[..., 1, 1] = 1
    log_scale = np.zeros(shape)
    for length, mu in profile.segments:
        c, sk, ks, ls = _segment(k, length, mu)
        seg = np.empty(shape + (2, 2), dtype=complex)
        seg[..., 0, 0] = c
        seg[..., 0, 1] = sk
        seg[..., 1, 0] = -ks
        seg[..., 1, 1] = c
        m = seg @ m
        norm = np.max(np.abs(m), axis=(-2, -1))
        norm = np.where(norm > 0, norm, 1.0)
        m = m / norm[..., None, None]
        log_scale = log_scale + ls + np.log(norm)

    # plane waves: (psi, psi') = P (A, B), P = [[1, 1], [ik, -ik]]
    ik = 1j * k
    p = np.zeros(shape + (2, 2), dtype=complex)
    p[..., 0, 0] = 1
    p[..., 0, 1] = 1
    p[..., 1, 0] = ik
    p[..., 1, 1] = -ik
    p_inv = np.zeros_like(p)
    p_inv[..., 0, 0] = 0.5
    p_inv[..., 0, 1] = 1 / (2 * ik)
    p_inv[..., 1, 0] = 0.5
    p_inv[..., 1, 1] = -1 / (2 * ik)
    q = p_inv @ m @ p
    return TransferMatrix(q, log_scale, k)


def _coefficients_from(tm: TransferMatrix, D: float):
    q = tm.matrix
    q22 = q[..., 1, 1]
    with np.errstate(all="ignore"):
        R = -q[..., 1, 0] / q22
        Rp = q[..., 0, 1] / q22
        log_T = -tm.log_scale - np.log(q22) - 1j * tm.kz * D
    return log_T, R, Rp


def scattering_coefficients(profile: BarrierProfile, kz) -> ScatteringCoefficients:
    """T, R and R' of ``profile`` at a scalar ``kz``.

    ``T`` is returned in linear form when representable; when it underflows a
    :class:`PrecisionLossWarning` is issued and ``log_T`` should be used.
    """
    import warnings

    if np.ndim(kz) != 0:
        raise TypeError("scattering_coefficients takes a scalar kz; use the array helpers")
    tm = transfer_matrix(profile, kz)
    log_T, R, Rp = _coefficients_from(tm, profile.D)
    log_T = complex(log_T)
    if log_T.real < _LOG_TINY:
        warnings.warn(
            f"|T| = exp({log_T.real:.1f}) underflows; T reported as 0, use log_T",
            PrecisionLossWarning,
            stacklevel=2,
        )
        T = 0j
    else:
        T = cmath.exp(log_T)
    return ScatteringCoefficients(T=T, R=complex(R), Rprime=complex(Rp), kz=complex(kz), log_T=log_T)


def raw_coefficients(profile: BarrierProfile, kz) -> tuple[complex, complex, complex]:
    """Coefficients with phases referenced to the coordinate origin.

    Returns ``(t, r, r')`` for ``exp(ikz) + r exp(-ikz) -> t exp(ikz)`` and the
    mirror process.  Meant for debugging phase conventions.
    """
    sc = scattering_coefficients(profile, kz)
    k = complex(kz)
    return (
        sc.T,
        sc.R * cmath.exp(2j * k * profile.a),
        sc.Rprime * cmath.exp(-2j * k * profile.b),
    )


def stripped_transmission(profile: BarrierProfile, kz) -> np.ndarray:
    """``T(kz) * exp(i kz D)``, vectorised over ``kz``.

    This is the smooth factor left once the free phase of the barrier width is
    removed; it is analytic in the upper half plane and vanishes at kz = 0 for
    any non-empty profile.
    """
    k = np.asarray(kz, dtype=complex)
    if profile.is_empty:
        return np.ones_like(k)
    out = np.zeros_like(k)
    nz = k != 0
    if np.any(nz):
        tm = transfer_matrix(profile, k[nz])
        q22 = tm.matrix[..., 1, 1]
        with np.errstate(under="ignore"):
            out[nz] = np.exp(-tm.log_scale) / q22
    return out


def b1_residual(sc: ScatteringCoefficients, profile: BarrierProfile) -> float:
    """|T R* e^{-2ik a} + T* R' e^{-2ik b}| for real kz; zero for a lossless profile."""
    k = sc.kz.real
    val = sc.T * np.conj(sc.R) * cmath.exp(-2j * k * profile.a) + np.conj(sc.T) * sc.Rprime * cmath.exp(
        -2j * k * profile.b
    )
    return abs(val)


def _opaque_root(mu: float, kz) -> np.ndarray:
    # sqrt(mu^2 - kz^2) = -i * kappa; equals +sqrt for real kz < mu and
    # -i sqrt(kz^2 - mu^2) on the upper edge of the cut kz > mu
    return -1j * local_wavenumber(kz, mu)


def square_barrier_transmission(mu: float, D: float, kz):
    """Closed-form transmission of a single square segment.

    Uses::

        T = e^{-ikD} e^{-Dr} (1 - e^{4ia}) / (1 - e^{4ia} e^{-2Dr}),
        e^{2ia} = (k - ir) / (k + ir),   r = sqrt(mu^2 - k^2).

    The expression is even in ``r``; when ``|r D|`` is tiny it is evaluated in
    its limit form ``1 / (cosh rD + i (r^2 - k^2) sinh(rD) / (2 k r))``.
    """
    if not (mu > 0):
        raise ValueError(f"mu must be positive, got {mu}")
    if not (D > 0):
        raise ValueError(f"D must be positive, got {D}")
    k = np.asarray(kz, dtype=complex)
    scalar = k.ndim == 0
    k = np.atleast_1d(k)
    r = _opaque_root(mu, k)
    rD = r * D
    out = np.empty_like(k)

    near = np.abs(rD) < SERIES_THRESHOLD
    far = ~near
    if np.any(far):
        kf, rf, rDf = k[far], r[far], rD[far]
        e2a = (kf - 1j * rf) / (kf + 1j * rf)
        e4a = e2a * e2a
        damp = np.exp(-rDf)
        out[far] = np.exp(-1j * kf * D) * damp * (1 - e4a) / (1 - e4a * damp * damp)
    if np.any(near):
        kn, rn = k[near], r[near]
        x2 = (rn * D) ** 2
        cosh_ = 1 + x2 / 2 + x2 * x2 / 24
        sinh_over_r = D * (1 + x2 / 6 + x2 * x2 / 120)
        stripped = 1 / (cosh_ + 1j * (rn * rn - kn * kn) * sinh_over_r / (2 * kn))
        out[near] = np.exp(-1j * kn * D) * stripped
    return complex(out[0]) if scalar else out


def opaqueness(mu: float, D: float, kz) -> np.ndarray:
    """``exp(-2 D Re sqrt(mu^2 - kz^2))``: small means an opaque barrier."""
    return np.exp(-2 * D * _opaque_root(mu, kz).real)


def opaque_transmission_asymptotic(mu: float, D: float, kz, threshold: float = 1e-8):
    """Leading opaque-barrier approximation of the stripped transmission.

    ``e^{-Dr} [1 - ((k - i r) / mu)^4]`` with ``r = sqrt(mu^2 - k^2)``, i.e. the
    closed form with the second term of its denominator dropped.  Raises
    :class:`NotOpaqueError` unless ``exp(-2 D Re r) < threshold`` everywhere.
    """
    if not (mu > 0 and D > 0):
        raise ValueError("mu and D must be positive")
    k = np.asarray(kz, dtype=complex)
    r = _opaque_root(mu, k)
    opq = np.exp(-2 * D * r.real)
    if np.any(opq >= threshold):
        worst = float(np.max(opq))
        raise NotOpaqueError(f"not opaque enough: exp(-2D Re r) = {worst:.3g} >= {threshold:g}")
    val = np.exp(-D * r) * (1 - ((k - 1j * r) / mu) ** 4)
    return complex(val) if val.ndim == 0 else val


def _arg_T(profile: BarrierProfile, omega: float) -> float:
    tm = transfer_matrix(profile, omega)
    log_T, _, _ = _coefficients_from(tm, profile.D)
    log_T = complex(log_T)
    if log_T.real < _LOG_TINY:
        raise PhaseIllConditionedError(f"|T| = exp({log_T.real:.1f}) underflows at omega={omega}")
    return log_T


def wigner_phase_time(profile: BarrierProfile, omega: float, rel_tol: float = 1e-10) -> float:
    """``d arg T / d omega`` by Richardson-extrapolated central differences.

    Phase differences are taken from ``log_T`` so wrap-around and small |T|
    are harmless; a true underflow of |T| raises
    :class:`PhaseIllConditionedError`.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    for mu in profile.cutoffs:
        if abs(omega - mu) < 1e-9 * max(mu, 1.0):
            raise ValueError(f"omega={omega} sits on the branch point mu={mu}")

    def slope(h):
        lp = _arg_T(profile, omega + h)
        lm = _arg_T(profile, omega - h)
        d = (lp.imag - lm.imag + math.pi) % (2 * math.pi) - math.pi
        return d / (2 * h)

    # keep the stencil clear of the nearest cutoff
    dist = min((abs(omega - mu) for mu in profile.cutoffs), default=omega)
    h = min(0.05 * omega, 0.25 * dist, 0.1)
    prev = None
    table = [slope(h)]
    for _ in range(12):
        h /= 2
        new = [slope(h)]
        for j, old in enumerate(table):
            f = 4 ** (j + 1)
            new.append((f * new[j] - old) / (f - 1))
        table = new
        est = table[-1]
        if prev is not None and abs(est - prev) <= rel_tol * max(1.0, abs(est)):
            return float(est)
        prev = est
    return float(table[-1])


def coefficients_table(profile: BarrierProfile, kz: Sequence[float]) -> dict[str, np.ndarray]:
    """Vectorised T, R, R' for an array of real frequencies (sweep output)."""
    k = np.asarray(kz, dtype=float)
    tm = transfer_matrix(profile, k)
    log_T, R, Rp = _coefficients_from(tm, profile.D)
    with np.errstate(under="ignore"):
        T = np.exp(log_T)
    return {"kz": k, "T": T, "R": R, "Rprime": Rp, "log_T": log_T}
