"""Joint click probability p(t1, t2), its mixed derivative w, and the delta line.

The closed forms here use the prefactor ``norm / (8 pi d^2 Gamma)``, which is
what the frequency integral of the squared free amplitude actually gives; see
``single_click_rate_quadrature`` for the direct check.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .amplitude import (
    AmplitudeMode,
    Geometry,
    SourceParams,
    closed_script_M,
    effective_distance,
    get_engine,
    smooth_step,
    transmission_factor,
)
from .quadrature import QuadratureConfig
from .scattering import BarrierProfile, stripped_transmission

__all__ = [
    "ModelConfig",
    "NoConcentrationError",
    "CorrelationGrid",
    "DeltaLine",
    "TunnelingObservables",
    "saturation",
    "closed_p",
    "closed_delta_weight",
    "p_joint",
    "single_click_rate",
    "single_click_rate_quadrature",
    "fill_grid",
    "mixed_second_difference",
    "band_profile",
    "extract_delta_line",
    "fit_exponential",
    "tunneling_observables",
    "transmission_mod2",
    "summary",
    "write_grid_csv",
    "GRID_CSV_VERSION",
]

GRID_CSV_VERSION = 1


class NoConcentrationError(ValueError):
    """Raised when w shows no line standing clear of the background."""


@dataclass(frozen=True)
class ModelConfig:
    source: SourceParams
    geometry: Geometry
    barrier: BarrierProfile
    quadrature: QuadratureConfig = QuadratureConfig()
    # flat sensitivity only; other shapes are accepted but untested
    sensitivity: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.geometry.validate(self.barrier)

    def scaled(self, s: float) -> "ModelConfig":
        """Frequencies times ``s``, lengths and times over ``s``."""
        return ModelConfig(
            self.source.scaled(s), self.geometry.scaled(s), self.barrier.scaled(s), self.quadrature, self.sensitivity
        )


# ---------------------------------------------------------------------------
# closed forms


def saturation(cfg: ModelConfig, mode) -> float:
    """Large-time value of p: ``norm |Tf|^2 / (8 pi d^2 Gamma)``."""
    mode = AmplitudeMode.parse(mode)
    d = effective_distance(cfg.geometry, cfg.barrier, mode)
    tf = transmission_factor(cfg.source, cfg.barrier, mode)
    return cfg.source.norm * abs(tf) ** 2 / (8 * math.pi * d**2 * cfg.source.gamma)


def closed_p(t1, t2, cfg: ModelConfig, mode, eps: float | None = None):
    """``A {1 - theta(t1 + d - t2) e^{-G(t2 - d)} - theta(t2 - t1 - d) e^{-G t1}}``."""
    mode = AmplitudeMode.parse(mode)
    if mode is AmplitudeMode.NUMERIC:
        raise ValueError("closed_p needs a closed mode")
    if mode is AmplitudeMode.NO_BARRIER_CLOSED and not cfg.barrier.is_empty:
        raise ValueError("NoBarrierClosed mode needs an empty barrier profile")
    d = effective_distance(cfg.geometry, cfg.barrier, mode)
    G = cfg.source.gamma
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    after = smooth_step(t2 - t1 - d, eps)
    out = saturation(cfg, mode) * (1 - (1 - after) * np.exp(-G * (t2 - d)) - after * np.exp(-G * t1))
    return out if out.ndim else float(out)


def closed_delta_weight(t1, cfg: ModelConfig, mode):
    """Coefficient of ``delta(t2 - t1 - d)`` in w: ``norm |Tf|^2 e^{-G t1} / (8 pi d^2)``."""
    return saturation(cfg, mode) * cfg.source.gamma * np.exp(-cfg.source.gamma * np.asarray(t1, dtype=float))


def single_click_rate(t2: float, cfg: ModelConfig) -> float:
    """``int d omega |M(t2)|^2`` for free propagation: ``A (1 - e^{-G (t2 - z)})``."""
    if t2 < cfg.geometry.z:
        raise ValueError("t2 must not precede the light-cone arrival z")
    z, G = cfg.geometry.z, cfg.source.gamma
    return cfg.source.norm / (8 * math.pi * z**2 * G) * (1 - math.exp(-G * (t2 - z)))


def single_click_rate_quadrature(t2: float, cfg: ModelConfig, lower: float = -math.inf) -> float:
    """Direct frequency quadrature of the squared free amplitude.

    The default integrates over the whole real line, where the Lorentzian
    integral is exact; ``lower=0`` gives the physical half line, short by
    roughly ``Gamma / (2 pi Omega)`` of the total.
    """
    src = cfg.source
    prof = BarrierProfile.empty(cfg.barrier.a)

    def f(w):
        return abs(closed_script_M(w, t2, src, cfg.geometry, prof, AmplitudeMode.NO_BARRIER_CLOSED)) ** 2

    W, G = src.omega, src.gamma
    L = 50 * G
    pts = [W - L, W - G, W, W + G, W + L]
    total = 0.0
    edges = [lower] + [x for x in pts if x > lower]
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a or not math.isfinite(a):
            continue
        v, _ = quad(f, a, b, limit=2000, epsabs=0, epsrel=1e-12)
        total += v
    # beyond |w - Omega| = L, f = A (1 + e^{-G tau} - 2 e^{-G tau/2} cos(u tau)) / (u^2 + G^2/4)
    # with u = w - Omega; the cosine part goes to a Fourier-weighted rule
    tau, z = t2 - cfg.geometry.z, cfg.geometry.z
    A = 1 / (16 * math.pi**2 * z**2)
    g2 = G * G / 4
    smooth = (1 + math.exp(-G * tau)) * (math.pi / 2 - math.atan(L / (G / 2))) / (G / 2)
    osc, _ = quad(lambda u: 1 / (u * u + g2), L, math.inf, weight="cos", wvar=tau, limlst=200)
    tail = A * (smooth - 2 * math.exp(-G * tau / 2) * osc)
    total += tail * (2 if not math.isfinite(lower) else 1)
    return src.norm * total


# ---------------------------------------------------------------------------
# joint probability


def p_joint(t1: float, t2: float, cfg: ModelConfig, mode, *, with_error: bool = False, eps=None):
    """Joint probability of a source click by ``t1`` and a detector click by ``t2``."""
    mode = AmplitudeMode.parse(mode)
    geom, src = cfg.geometry, cfg.source
    geom.require_inside(t1, src, "t1")
    geom.require_inside(t2, src, "t2")
    if mode is AmplitudeMode.NUMERIC:
        if cfg.sensitivity is not None:
            raise NotImplementedError("numeric mode supports a flat sensitivity only")
        eng = get_engine(src, geom, cfg.barrier, cfg.quadrature, t2)
        p, err = eng.joint_probability(t1, t2)
        p, err = src.norm * p, src.norm * err
    else:
        p, err = closed_p(t1, t2, cfg, mode, eps), 0.0
    return (p, err) if with_error else p


@dataclass
class CorrelationGrid:
    t1_axis: np.ndarray
    t2_axis: np.ndarray
    p_values: np.ndarray
    w_values: np.ndarray
    mode: AmplitudeMode
    p_errors: np.ndarray | None = None

    def __post_init__(self):
        self.t1_axis = np.asarray(self.t1_axis, dtype=float)
        self.t2_axis = np.asarray(self.t2_axis, dtype=float)
        shape = (self.t1_axis.size, self.t2_axis.size)
        if self.p_values.shape != shape or self.w_values.shape != shape:
            raise ValueError(f"grid arrays must have shape {shape}")
        h1, h2 = _step(self.t1_axis), _step(self.t2_axis)
        if not math.isclose(h1, h2, rel_tol=1e-9):
            raise ValueError("t1 and t2 axes must share one step")

    @property
    def h(self) -> float:
        return _step(self.t1_axis)


def _step(axis: np.ndarray) -> float:
    if axis.size < 2:
        raise ValueError("axes need at least two points")
    d = np.diff(axis)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ValueError("axes must be uniform")
    return float(d[0])


def mixed_second_difference(p: np.ndarray, h: float) -> np.ndarray:
    """Central ``d^2 p / dt1 dt2`` on the interior; NaN on the border."""
    w = np.full(p.shape, np.nan)
    w[1:-1, 1:-1] = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4 * h * h)
    return w


def fill_grid(
    cfg: ModelConfig,
    t1_axis: Sequence[float],
    t2_axis: Sequence[float],
    mode,
    *,
    threads: int = 1,
    eps: float | None = None,
) -> CorrelationGrid:
    """Evaluate p on the product grid and difference it."""
    mode = AmplitudeMode.parse(mode)
    t1_axis = np.asarray(t1_axis, dtype=float)
    t2_axis = np.asarray(t2_axis, dtype=float)
    geom, src = cfg.geometry, cfg.source
    geom.require_inside(float(t1_axis.min()), src, "t1")
    geom.require_inside(float(t2_axis.min()), src, "t2")
    h = _step(t1_axis)
    _step(t2_axis)
    if mode is AmplitudeMode.NUMERIC:
        eng = get_engine(src, geom, cfg.barrier, cfg.quadrature, float(t2_axis.max()), grid_step=h)
        # tabulate every lattice the grid touches before going parallel
        for t1 in t1_axis:
            eng.time_cells(float(t1), float(t2_axis.max()))
        pairs = [(i, j) for i in range(t1_axis.size) for j in range(t2_axis.size)]

        def one(ij):
            i, j = ij
            return eng.joint_probability(float(t1_axis[i]), float(t2_axis[j]))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                res = list(ex.map(one, pairs))
        else:
            res = [one(ij) for ij in pairs]
        p = np.array([r[0] for r in res]).reshape(t1_axis.size, t2_axis.size) * src.norm
        e = np.array([r[1] for r in res]).reshape(t1_axis.size, t2_axis.size) * src.norm
    else:
        T1, T2 = np.meshgrid(t1_axis, t2_axis, indexing="ij")
        p = np.asarray(closed_p(T1, T2, cfg, mode, eps))
        e = np.zeros_like(p)
    return CorrelationGrid(t1_axis, t2_axis, p, mixed_second_difference(p, h), mode, e)


# ---------------------------------------------------------------------------
# delta line


@dataclass
class DeltaLine:
    delay: float
    t1_samples: np.ndarray
    weights: np.ndarray
    band_width: float
    fit_amplitude: float = math.nan
    fit_gamma: float = math.nan
    band_density: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.weights) < 0):
            # small negative values are numerical; clip for the profile
            self.weights = np.clip(self.weights, 0, None)

    def weight_profile(self, t1):
        """Line weight at ``t1``, interpolated between samples."""
        return np.interp(t1, self.t1_samples, self.weights)


def band_profile(grid: CorrelationGrid, min_cells: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``w h`` along each diagonal ``t2 - t1 = const``."""
    h = grid.h
    T1, T2 = np.meshgrid(grid.t1_axis, grid.t2_axis, indexing="ij")
    k = np.rint((T2 - T1) / h).astype(int)
    w = grid.w_values
    ok = np.isfinite(w)
    ks = np.unique(k[ok])
    offsets, dens = [], []
    for kk in ks:
        sel = ok & (k == kk)
        if sel.sum() < min_cells:
            continue
        offsets.append(float(np.mean((T2 - T1)[sel])))
        dens.append(float(np.mean(w[sel]) * h))
    return np.array(offsets), np.array(dens)


def fit_exponential(t1: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of ``A exp(-gamma t1)`` in log space; returns ``(A, gamma)``."""
    t1 = np.asarray(t1, dtype=float)
    weights = np.asarray(weights, dtype=float)
    ok = weights > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(t1[ok], np.log(weights[ok]), 1)
    return float(math.exp(intercept)), float(-slope)


def extract_delta_line(grid: CorrelationGrid, cfg: ModelConfig | None = None, *, contrast: float = 10.0) -> DeltaLine:
    """Locate the line where w concentrates and measure its weight.

    The delay is the diagonal with the largest mean ``w h``.  For every
    ``t2`` row, the weight is the jump of ``dp/dt2`` between
    ``t1 = t2 - delay + h`` and ``t1 = t2 - delay - h``, each derivative a
    one-sided three-point difference that stays on its own side of the line.
    """
    offsets, dens = band_profile(grid)
    if dens.size == 0:
        raise NoConcentrationError("no concentration found: grid has no interior diagonals")
    imax = int(np.argmax(dens))
    peak = dens[imax]
    background = float(np.median(np.abs(dens)))
    if not peak > 0 or not peak > contrast * background:
        raise NoConcentrationError(
            f"no concentration found: peak band density {peak:.3g} vs background {background:.3g}"
        )
    delay = offsets[imax]
    h = grid.h
    p = grid.p_values
    t1s, ws = [], []
    for j, t2 in enumerate(grid.t2_axis):
        ib = _index(grid.t1_axis, t2 - delay + h, h)
        ia = _index(grid.t1_axis, t2 - delay - h, h)
        if ib is None or ia is None or j - 2 < 0 or j + 2 >= grid.t2_axis.size:
            continue
        d_before = (3 * p[ib, j] - 4 * p[ib, j - 1] + p[ib, j - 2]) / (2 * h)
        d_after = (-3 * p[ia, j] + 4 * p[ia, j + 1] - p[ia, j + 2]) / (2 * h)
        t1s.append(t2 - delay)
        ws.append(d_before - d_after)
    if not t1s:
        raise NoConcentrationError("no concentration found: line does not cross the grid interior")
    t1s = np.array(t1s)
    ws = np.array(ws)
    order = np.argsort(t1s)
    t1s, ws = t1s[order], ws[order]
    amp, gam = fit_exponential(t1s, ws)
    return DeltaLine(
        delay=float(delay),
        t1_samples=t1s,
        weights=ws,
        band_width=h,
        fit_amplitude=amp,
        fit_gamma=gam,
        band_density={"offsets": offsets, "density": dens},
    )


def _index(axis: np.ndarray, t: float, h: float):
    i = int(round((t - axis[0]) / h))
    if 0 <= i < axis.size and abs(axis[i] - t) < 1e-6 * h:
        return i
    return None


@dataclass(frozen=True)
class TunnelingObservables:
    arrival_delay: float
    vacuum_time: float
    barrier_traversal_time: float
    clock_tunneling_time: float


def tunneling_observables(delta: DeltaLine, geom: Geometry, profile: BarrierProfile) -> TunnelingObservables:
    d = delta.delay
    return TunnelingObservables(
        arrival_delay=d,
        vacuum_time=geom.z,
        barrier_traversal_time=d - (geom.z - profile.D),
        clock_tunneling_time=d - geom.z,
    )


def transmission_mod2(cfg: ModelConfig, mode) -> float:
    """``|calT(P)|^2`` that scales the line weight (1 without a barrier)."""
    mode = AmplitudeMode.parse(mode)
    if cfg.barrier.is_empty:
        return 1.0
    if mode is AmplitudeMode.OPAQUE_ASYMPTOTIC:
        return abs(transmission_factor(cfg.source, cfg.barrier, mode)) ** 2
    return float(abs(stripped_transmission(cfg.barrier, np.array([cfg.source.pole]))[0]) ** 2)


def summary(grid: CorrelationGrid, cfg: ModelConfig) -> dict:
    """JSON-ready record of the delta line and the tunneling times."""
    errors: dict = {"delay_resolution": grid.h}
    if grid.p_errors is not None:
        errors["p_max_error"] = float(np.max(grid.p_errors))
    try:
        dl = extract_delta_line(grid, cfg)
    except NoConcentrationError as exc:
        errors["delta_line"] = str(exc)
        return {
            "delay": None,
            "weight_fit": {"amplitude": None, "gamma": None},
            "barrier_traversal_time": None,
            "clock_tunneling_time": None,
            "transmission_mod2": transmission_mod2(cfg, grid.mode),
            "errors": errors,
        }
    obs = tunneling_observables(dl, cfg.geometry, cfg.barrier)
    return {
        "delay": dl.delay,
        "weight_fit": {"amplitude": dl.fit_amplitude, "gamma": dl.fit_gamma},
        "barrier_traversal_time": obs.barrier_traversal_time,
        "clock_tunneling_time": obs.clock_tunneling_time,
        "transmission_mod2": transmission_mod2(cfg, grid.mode),
        "errors": errors,
    }


def write_grid_csv(grid: CorrelationGrid, path, reference: np.ndarray | None = None) -> None:
    """``t1,t2,p,w`` rows, plus ``p_ref`` when a closed-form reference is given."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# tunnelclock grid v{GRID_CSV_VERSION} mode={grid.mode.value}\n")
        wr = csv.writer(fh)
        header = ["t1", "t2", "p", "w"] + (["p_ref"] if reference is not None else [])
        wr.writerow(header)
        for i, t1 in enumerate(grid.t1_axis):
            for j, t2 in enumerate(grid.t2_axis):
                row = [repr(float(t1)), repr(float(t2)), repr(float(grid.p_values[i, j])), repr(float(grid.w_values[i, j]))]
                if reference is not None:
                    row.append(repr(float(reference[i, j])))
                wr.writerow(row)


def dumps_summary(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
