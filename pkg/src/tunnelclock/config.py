"""Run configuration: YAML schema, validation and environment overrides.

Schema (natural units, c = hbar = 1)::

    source:   {omega: 20.0, gamma: 0.05, norm: 1.0}
    geometry: {z: 40.0, margin: 20.0}
    barrier:  {a: 1.0, segments: [[1.0, 100.0]]}   # [length, cutoff] pairs
              # or the square shorthand {a: 1.0, b: 2.0, mu: 100.0}
    grids:
      t1: [45.0, 75.0, 0.5]          # min, max, step
      t2: [80.0, 110.0, 0.5]
      omega_sweep: [0.1, 300.0, 500] # min, max, count
    quadrature: {rel_tol: 1.0e-8, ...}  # any QuadratureConfig field
    mode: closed | opaque | numeric
    output: {dir: out, formats: [csv, json]}

Any leaf can be overridden from the environment as
``TUNNELCLOCK_<SECTION>__<KEY>=value`` (value parsed as YAML), e.g.
``TUNNELCLOCK_SOURCE__OMEGA=25``.
"""

from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .amplitude import AmplitudeMode, Geometry, SourceParams
from .correlation import ModelConfig
from .quadrature import QuadratureConfig
from .scattering import BarrierProfile

__all__ = ["ConfigError", "RunConfig", "ENV_PREFIX", "DEFAULT_CONFIG", "apply_env_overrides", "axis"]

ENV_PREFIX = "TUNNELCLOCK_"

DEFAULT_CONFIG = {
    "source": {"omega": 20.0, "gamma": 0.05, "norm": 1.0},
    "geometry": {"z": 40.0, "margin": 20.0},
    "barrier": {"a": 1.0, "segments": []},
    "grids": {"t1": [45.0, 75.0, 0.5], "t2": [80.0, 110.0, 0.5], "omega_sweep": [0.1, 60.0, 200]},
    "quadrature": {},
    "mode": "closed",
    "output": {"dir": "out", "formats": ["csv", "json"]},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def axis(spec) -> np.ndarray:
    """Uniform axis from ``(min, max, step)``, endpoints included."""
    lo, hi, step = (float(v) for v in spec)
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_env_overrides(raw: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(raw)
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX) :].split("__") if p]
        if not path:
            continue
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {key} does not address a config section")
        node[path[-1]] = yaml.safe_load(environ[key])
    return out


@dataclass(frozen=True)
class RunConfig:
    source: SourceParams
    geometry: Geometry
    barrier: BarrierProfile
    t1: tuple[float, float, float]
    t2: tuple[float, float, float]
    omega_sweep: tuple[float, float, int]
    quadrature: QuadratureConfig = QuadratureConfig()
    mode: AmplitudeMode = AmplitudeMode.NO_BARRIER_CLOSED
    out_dir: str = "out"
    formats: tuple[str, ...] = ("csv", "json")

    # -- construction
    @classmethod
    def from_dict(cls, raw: dict, *, check_grids: bool = True) -> "RunConfig":
        raw = _merge(DEFAULT_CONFIG, raw or {})
        unknown = set(raw) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        s = raw["source"]
        try:
            src = SourceParams(float(s["omega"]), float(s["gamma"]), float(s.get("norm", 1.0)))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"source: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        g = raw["geometry"]
        try:
            geom = Geometry(float(g["z"]), float(g.get("margin", 20.0)))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"geometry: {exc}") from None
        prof = _barrier(raw["barrier"])
        try:
            geom.validate(prof)
        except ValueError as exc:
            raise ConfigError(f"geometry.z: {exc}") from None
        if not prof.a > 0:
            raise ConfigError(f"barrier.a must be positive, got {prof.a}")
        gr = raw["grids"]
        t1 = _triple(gr, "t1")
        t2 = _triple(gr, "t2")
        sweep = gr.get("omega_sweep")
        try:
            sweep = (float(sweep[0]), float(sweep[1]), int(sweep[2]))
        except (TypeError, IndexError, ValueError):
            raise ConfigError("grids.omega_sweep must be [min, max, count]") from None
        if not (0 < sweep[0] < sweep[1] and sweep[2] >= 1):
            raise ConfigError("grids.omega_sweep needs 0 < min < max and count >= 1")
        q = raw.get("quadrature") or {}
        names = {f.name for f in dataclasses.fields(QuadratureConfig)}
        bad = set(q) - names
        if bad:
            raise ConfigError(f"quadrature: unknown field(s) {', '.join(sorted(bad))}")
        try:
            qc = QuadratureConfig(**q)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"quadrature: {exc}") from None
        try:
            mode = AmplitudeMode.parse(raw["mode"])
        except ValueError as exc:
            raise ConfigError(f"mode: {exc}") from None
        out = raw.get("output") or {}
        fmts = tuple(out.get("formats", ("csv", "json")))
        for f in fmts:
            if f not in ("csv", "json"):
                raise ConfigError(f"output.formats: unsupported format {f!r}")
        cfg = cls(src, geom, prof, t1, t2, sweep, qc, mode, str(out.get("dir", "out")), fmts)
        if check_grids:
            for name, (lo, _, _) in (("grids.t1", t1), ("grids.t2", t2)):
                if (lo - geom.z) * src.omega < geom.margin:
                    raise ConfigError(
                        f"{name} starts at {lo}, inside the light-cone margin: need "
                        f"(t - z) Omega >= {geom.margin}"
                    )
        return cfg

    @classmethod
    def load(cls, path, *, environ=None, check_grids: bool = True) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(apply_env_overrides(raw, environ), check_grids=check_grids)

    # -- echo
    def to_dict(self) -> dict:
        return {
            "source": {"omega": self.source.omega, "gamma": self.source.gamma, "norm": self.source.norm},
            "geometry": {"z": self.geometry.z, "margin": self.geometry.margin},
            "barrier": {"a": self.barrier.a, "segments": [list(s) for s in self.barrier.segments]},
            "grids": {"t1": list(self.t1), "t2": list(self.t2), "omega_sweep": list(self.omega_sweep)},
            "quadrature": dataclasses.asdict(self.quadrature),
            "mode": self.mode.short,
            "output": {"dir": self.out_dir, "formats": list(self.formats)},
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def model(self) -> ModelConfig:
        return ModelConfig(self.source, self.geometry, self.barrier, self.quadrature)

    def t1_axis(self) -> np.ndarray:
        return axis(self.t1)

    def t2_axis(self) -> np.ndarray:
        return axis(self.t2)

    def with_mode(self, mode) -> "RunConfig":
        return dataclasses.replace(self, mode=AmplitudeMode.parse(mode))

    def with_out_dir(self, d: str) -> "RunConfig":
        return dataclasses.replace(self, out_dir=d)


def _barrier(b: dict) -> BarrierProfile:
    if not isinstance(b, dict):
        raise ConfigError("barrier must be a mapping")
    try:
        a = float(b.get("a", 1.0))
    except (TypeError, ValueError):
        raise ConfigError("barrier.a must be a number") from None
    if "b" in b:
        try:
            bb = float(b["b"])
        except (TypeError, ValueError):
            raise ConfigError("barrier.b must be a number") from None
        if not a < bb:
            raise ConfigError(f"barrier interval empty: a={a} >= b={bb}")
        if "mu" not in b:
            raise ConfigError("barrier.mu is required with the a/b shorthand")
        segs = [(bb - a, float(b["mu"]))]
    else:
        segs = []
        for i, s in enumerate(b.get("segments") or []):
            try:
                length, cut = float(s[0]), float(s[1])
            except (TypeError, IndexError, ValueError):
                raise ConfigError(f"barrier.segments[{i}] must be [length, cutoff]") from None
            if not length > 0:
                raise ConfigError(f"barrier interval empty: barrier.segments[{i}].length={length} <= 0")
            if not cut >= 0:
                raise ConfigError(f"barrier.segments[{i}].cutoff must be >= 0")
            segs.append((length, cut))
    try:
        return BarrierProfile(a, tuple(segs))
    except ValueError as exc:
        raise ConfigError(f"barrier: {exc}") from None


def _triple(gr: dict, name: str):
    v = gr.get(name)
    try:
        lo, hi, st = float(v[0]), float(v[1]), float(v[2])
    except (TypeError, IndexError, ValueError):
        raise ConfigError(f"grids.{name} must be [min, max, step]") from None
    if not (hi > lo and st > 0):
        raise ConfigError(f"grids.{name} needs max > min and step > 0")
    return (lo, hi, st)
