"""Command line: ``tunnelclock {scatter,correlate,validate}``.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical failure.  Configuration leaves can be overridden with
``TUNNELCLOCK_<SECTION>__<KEY>`` environment variables (see
:mod:`tunnelclock.config`).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .amplitude import AmplitudeMode, LightConeError
from .config import ENV_PREFIX, ConfigError, RunConfig, apply_env_overrides
from .correlation import (
    NoConcentrationError,
    closed_p,
    dumps_summary,
    fill_grid,
    summary,
    write_grid_csv,
)
from .quadrature import NonConvergenceWarning
from .scattering import NotOpaqueError, coefficients_table, opaqueness

__all__ = ["main", "cmd_scatter", "cmd_correlate", "cmd_validate", "SCATTER_CSV_VERSION", "EXIT_CONFIG", "EXIT_NUMERIC"]

SCATTER_CSV_VERSION = 1
SCATTER_COLUMNS = ["kz_re", "kz_im", "T_re", "T_im", "R_re", "R_im", "Rp_re", "Rp_im", "absT2"]
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_json(path: Path, record: dict) -> None:
    path.write_text(dumps_summary(record) + "\n")


# ---------------------------------------------------------------------------
# workflows


def cmd_scatter(cfg: RunConfig) -> list[Path]:
    """Sweep T, R, R' over ``grids.omega_sweep``; writes scatter.csv and scatter.json."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi, n = cfg.omega_sweep
    kz = np.linspace(lo, hi, n)
    tab = coefficients_table(cfg.barrier, kz)
    T, R, Rp = tab["T"], tab["R"], tab["Rprime"]
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(Rp)) and np.all(np.isfinite(tab["log_T"]))):
        raise NumericalFailure("non-finite scattering coefficients in the sweep")
    resid = np.abs(np.abs(T) ** 2 + np.abs(R) ** 2 - 1)
    paths = []
    if "csv" in cfg.formats:
        p = out / "scatter.csv"
        with open(p, "w", newline="") as fh:
            fh.write(f"# tunnelclock scatter v{SCATTER_CSV_VERSION}\n")
            wr = csv.writer(fh)
            wr.writerow(SCATTER_COLUMNS)
            for k, t, r, rp in zip(kz, T, R, Rp):
                wr.writerow([_fmt(k), _fmt(0.0), _fmt(t.real), _fmt(t.imag), _fmt(r.real), _fmt(r.imag),
                             _fmt(rp.real), _fmt(rp.imag), _fmt(abs(t) ** 2)])
        paths.append(p)
    if "json" in cfg.formats:
        p = out / "scatter.json"
        _write_json(
            p,
            {
                "format": f"tunnelclock scatter v{SCATTER_CSV_VERSION}",
                "columns": SCATTER_COLUMNS,
                "barrier": cfg.to_dict()["barrier"],
                "b": cfg.barrier.b,
                "omega_sweep": list(cfg.omega_sweep),
                "unitarity_residual": {"max": float(resid.max()), "mean": float(resid.mean())},
                "min_log_absT": float(np.min(tab["log_T"].real)),
            },
        )
        paths.append(p)
    return paths


def _reference(cfg: RunConfig, t1, t2):
    """Closed-form p on the grid when one applies to this configuration."""
    model = cfg.model()
    if cfg.mode is not AmplitudeMode.NUMERIC:
        ref_mode = cfg.mode
    elif cfg.barrier.is_empty:
        ref_mode = AmplitudeMode.NO_BARRIER_CLOSED
    else:
        opq = math.prod(float(opaqueness(mu, L, cfg.source.omega)) for L, mu in cfg.barrier.segments)
        if not opq < 1e-8:
            return None
        ref_mode = AmplitudeMode.OPAQUE_ASYMPTOTIC
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")
    return np.asarray(closed_p(T1, T2, model, ref_mode))


def cmd_correlate(cfg: RunConfig, threads: int = 1) -> list[Path]:
    """Fill the p/w grid; writes grid.csv and summary.json.

    A non-finite or unconverged grid is still written, with
    ``"status": "failed"`` in the summary, and then reported as a
    numerical failure.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model()
    t1, t2 = cfg.t1_axis(), cfg.t2_axis()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvergenceWarning)
        grid = fill_grid(model, t1, t2, cfg.mode, threads=threads)
    nonconv = [str(w.message) for w in caught if issubclass(w.category, NonConvergenceWarning)]
    ref = _reference(cfg, t1, t2)
    failure = None
    if not np.all(np.isfinite(grid.p_values)):
        failure = "non-finite p values"
    elif nonconv:
        failure = f"quadrature did not converge: {nonconv[0]}"
    rec = summary(grid, model)
    rec.update(
        {
            "status": "failed" if failure else "ok",
            "failure": failure,
            "mode": cfg.mode.short,
            "grid": {"t1": list(cfg.t1), "t2": list(cfg.t2), "h": grid.h},
            "config": cfg.to_dict(),
        }
    )
    paths = []
    if "csv" in cfg.formats:
        p = out / "grid.csv"
        write_grid_csv(grid, p, ref)
        paths.append(p)
    if "json" in cfg.formats or failure:
        p = out / "summary.json"
        _write_json(p, rec)
        paths.append(p)
    if failure:
        raise NumericalFailure(failure)
    return paths


def cmd_validate(seed: int = 0, *, inject=None, stream=None) -> dict:
    from .validate import run_validation

    stream = stream if stream is not None else sys.stderr

    def progress(r):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.module:13s} {r.name:32s} {r.seconds:7.2f}s  {r.detail}", file=stream)

    return run_validation(seed, inject=inject, progress=progress)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tunnelclock",
        description="Photon emission/absorption correlations across a 1D tunnel barrier.",
        epilog=f"Environment overrides: {ENV_PREFIX}<SECTION>__<KEY>=<yaml value>, e.g. {ENV_PREFIX}SOURCE__OMEGA=25",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--mode", choices=["closed", "opaque", "numeric"], help="override the amplitude mode")
    common.add_argument("--out", help="override output.dir")
    common.add_argument("--threads", type=int, default=1, help="worker threads for grid fills")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized property suites")
    sub.add_parser("scatter", parents=[common], help="sweep scattering coefficients")
    sub.add_parser("correlate", parents=[common], help="compute the p/w grid and its delta line")
    v = sub.add_parser("validate", parents=[common], help="run every invariant suite")
    v.add_argument("--report", type=Path, help="also write the JSON report here")
    return ap


def _load(args, environ, *, check_grids=True) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.load(args.config, environ=environ, check_grids=check_grids)
    else:
        cfg = RunConfig.from_dict(apply_env_overrides({}, environ), check_grids=check_grids)
    if args.mode:
        cfg = cfg.with_mode(args.mode)
    if args.out:
        cfg = cfg.with_out_dir(args.out)
    return cfg


def main(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args, environ, check_grids=args.command == "correlate")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "scatter":
            for p in cmd_scatter(cfg):
                print(p)
        elif args.command == "correlate":
            for p in cmd_correlate(cfg, threads=args.threads):
                print(p)
        else:
            report = cmd_validate(args.seed)
            text = json.dumps(report, indent=2, sort_keys=True)
            print(text)
            if args.report:
                args.report.write_text(text + "\n")
            n = len(report["suites"])
            print(f"{n - len(report['failed'])}/{n} suites passed", file=sys.stderr)
            return EXIT_OK if report["passed"] else EXIT_VALIDATION
    except (NotOpaqueError, LightConeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConcentrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericalFailure, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
