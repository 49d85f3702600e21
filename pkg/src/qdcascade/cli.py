"""Command-line entry point and artifact layer.

Subcommands wire the pipeline stages together: simulate runs the
master equation through tomography and writes every intermediate
artifact, fit and decay-fit calibrate parameters against measured
CSVs, tomo reconstructs a density matrix from a counts file, and
sweep maps fidelity over the pulse-parameter grid.  Configs are JSON
with strict unknown-field rejection; every artifact embeds the
resolved config and a schema version; files are written atomically.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.  Failures print a machine-readable JSON line to stderr:
{"error": {"code": int, "stage": str, "message": str}}.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import (
    CalibrationError,
    RabiDataset,
    fit_decay,
    fit_rabi,
    read_decay_series,
)
from .emission import CoincidenceVector, coincidence_counts, emission_probabilities
from .lindblad import IntegrationError, basis_state, evolve
from .model import B, G, X, ModelParams
from .sweep import (
    SweepError,
    energy_contour_check,
    iso_count_contour,
    run_sweep,
    write_contour_csv,
)
from .tomography import (
    TomographyError,
    fidelity_bell,
    project_physical,
    reconstruct,
    save_density_matrix,
)

SCHEMA_VERSION = "1"

_INIT_STATES = {"ground": G, "exciton": X, "biexciton": B}


class CLIError(Exception):
    """Carries the exit code and failing stage to the top-level handler."""

    def __init__(self, code: int, stage: str, message: str):
        super().__init__(message)
        self.code = code
        self.stage = stage


def _strict(d: dict, known: set[str], where: str) -> None:
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown field(s) in {where}: {', '.join(sorted(extra))}")


@dataclass
class FitConfig:
    free: dict[str, tuple[float, float]] | None = None  # None: default set
    n_init: int = 32
    max_evals: int = 400
    rtol: float = 1e-7
    atol: float = 1e-9
    fast: bool = True
    workers: int | None = 1

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        _strict(d, {"free", "n_init", "max_evals", "rtol", "atol", "fast",
                    "workers"}, "fit")
        free = d.get("free")
        if free is not None:
            free = {str(k): (float(v[0]), float(v[1])) for k, v in free.items()}
        return cls(free=free,
                   n_init=int(d.get("n_init", 32)),
                   max_evals=int(d.get("max_evals", 400)),
                   rtol=float(d.get("rtol", 1e-7)),
                   atol=float(d.get("atol", 1e-9)),
                   fast=bool(d.get("fast", True)),
                   workers=d.get("workers", 1))

    def to_dict(self) -> dict:
        return {"free": {k: list(v) for k, v in self.free.items()} if self.free else None,
                "n_init": self.n_init, "max_evals": self.max_evals,
                "rtol": self.rtol, "atol": self.atol, "fast": self.fast,
                "workers": self.workers}


@dataclass
class SweepConfig:
    omega0: tuple[float, float, int] = (0.01, 0.30, 20)
    tau: tuple[float, float, int] = (10.0, 150.0, 20)
    level: float = 0.32
    workers: int | None = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        _strict(d, {"omega0", "tau", "level", "workers"}, "sweep")

        def axis(v, name):
            if len(v) != 3:
                raise ValueError(f"sweep.{name} must be [min, max, n]")
            return (float(v[0]), float(v[1]), int(v[2]))

        return cls(omega0=axis(d.get("omega0", (0.01, 0.30, 20)), "omega0"),
                   tau=axis(d.get("tau", (10.0, 150.0, 20)), "tau"),
                   level=float(d.get("level", 0.32)),
                   workers=d.get("workers", 1))

    def to_dict(self) -> dict:
        return {"omega0": list(self.omega0), "tau": list(self.tau),
                "level": self.level, "workers": self.workers}

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        o0 = np.linspace(self.omega0[0], self.omega0[1], self.omega0[2])
        tau = np.linspace(self.tau[0], self.tau[1], self.tau[2])
        return o0, tau


@dataclass
class RunConfig:
    """Fully-resolved run settings; defaults fill every gap."""

    params: ModelParams = field(default_factory=ModelParams)
    rtol: float = 1e-8
    atol: float = 1e-10
    init_state: str = "ground"
    bell_phase: float = 0.0
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self) -> None:
        if self.init_state not in _INIT_STATES:
            raise ValueError(
                f"init_state must be one of {sorted(_INIT_STATES)}, "
                f"got {self.init_state!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _strict(d, {"schema_version", "params", "rtol", "atol", "init_state",
                    "bell_phase", "seed", "fit", "sweep"}, "config")
        version = str(d.get("schema_version", SCHEMA_VERSION))
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version!r}")
        params = ModelParams().replace(**d.get("params", {}))
        return cls(params=params,
                   rtol=float(d.get("rtol", 1e-8)),
                   atol=float(d.get("atol", 1e-10)),
                   init_state=str(d.get("init_state", "ground")),
                   bell_phase=float(d.get("bell_phase", 0.0)),
                   seed=int(d.get("seed", 0)),
                   fit=FitConfig.from_dict(d.get("fit", {})),
                   sweep=SweepConfig.from_dict(d.get("sweep", {})))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "params": self.params.to_dict(),
                "rtol": self.rtol, "atol": self.atol,
                "init_state": self.init_state,
                "bell_phase": self.bell_phase,
                "seed": self.seed,
                "fit": self.fit.to_dict(),
                "sweep": self.sweep.to_dict()}


def _atomic_write_json(doc: dict, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_file(path: Path, writer) -> None:
    """Run writer(tmp_path) then rename the result into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_header(config: RunConfig) -> list[str]:
    return [f"schema_version: {SCHEMA_VERSION}",
            "config: " + json.dumps(config.to_dict(), sort_keys=True)]


def _load_config(args) -> RunConfig:
    try:
        doc = {}
        if args.config is not None:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        config = RunConfig.from_dict(doc)
    except FileNotFoundError as exc:
        raise CLIError(2, "config", str(exc)) from None
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise CLIError(2, "config", str(exc)) from None

    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "grid", None) is not None:
        try:
            o0, tau = _parse_grid(args.grid)
        except ValueError as exc:
            raise CLIError(2, "config", str(exc)) from None
        config.sweep.omega0 = o0
        config.sweep.tau = tau
    if getattr(args, "level", None) is not None:
        config.sweep.level = args.level
    return config


def _parse_grid(text: str) -> tuple[tuple, tuple]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(
            f"--grid must be 'o0_min:o0_max:n,tau_min:tau_max:n', got {text!r}")
    out = []
    for part in parts:
        bits = part.split(":")
        if len(bits) != 3:
            raise ValueError(f"bad grid axis {part!r}: need min:max:n")
        out.append((float(bits[0]), float(bits[1]), int(bits[2])))
    return out[0], out[1]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_data(args) -> Path:
    if args.data is None:
        raise CLIError(3, "data", "this subcommand requires --data PATH")
    path = Path(args.data)
    if not path.exists():
        raise CLIError(3, "data", f"data file not found: {path}")
    return path


def cmd_simulate(config: RunConfig, out: Path) -> dict:
    try:
        init = basis_state(_INIT_STATES[config.init_state])
        traj = evolve(config.params, init=init, rtol=config.rtol,
                      atol=config.atol)
    except IntegrationError as exc:
        raise CLIError(4, "evolve", str(exc)) from None

    header = _config_header(config)
    try:
        p_x, p_b = emission_probabilities(traj, config.params)
        counts = coincidence_counts(traj)
    except ValueError as exc:
        raise CLIError(4, "emission", str(exc)) from None
    _atomic_file(out / "trajectory.csv", lambda t: traj.to_csv(t, header))
    _atomic_file(out / "counts.csv", lambda t: counts.to_csv(t, header))

    try:
        rho = project_physical(reconstruct(counts))
        f_bell = fidelity_bell(rho, config.bell_phase)
    except TomographyError as exc:
        raise CLIError(4, "tomography", str(exc)) from None
    extra = {"schema_version": SCHEMA_VERSION, "config": config.to_dict()}
    _atomic_file(out / "density_matrix.json",
                 lambda t: save_density_matrix(rho, t, extra=extra))

    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "p_x": p_x,
        "p_b": p_b,
        "counts_total": counts.total(),
        "fidelity_bell": f_bell,
    }
    _atomic_write_json(report, out / "report.json")
    print(f"P_x = {p_x:.6g}")
    print(f"P_b = {p_b:.6g}")
    print(f"fidelity_bell = {f_bell:.6g}")
    return report


def cmd_tomo(config: RunConfig, data: Path, out: Path) -> dict:
    try:
        counts = CoincidenceVector.from_csv(data)
    except ValueError as exc:
        raise CLIError(3, "data", str(exc)) from None
    try:
        rho = project_physical(reconstruct(counts))
        f_bell = fidelity_bell(rho, config.bell_phase)
    except TomographyError as exc:
        raise CLIError(4, "tomography", str(exc)) from None
    extra = {"schema_version": SCHEMA_VERSION, "config": config.to_dict()}
    _atomic_file(out / "density_matrix.json",
                 lambda t: save_density_matrix(rho, t, extra=extra))
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "counts_total": counts.total(),
        "fidelity_bell": f_bell,
        "purity": float(np.real(np.trace(rho @ rho))),
    }
    _atomic_write_json(report, out / "report.json")
    print(f"fidelity_bell = {f_bell:.6g}")
    return report


def cmd_decay_fit(config: RunConfig, data: Path, out: Path) -> dict:
    try:
        series = read_decay_series(data)
    except ValueError as exc:
        raise CLIError(3, "data", str(exc)) from None
    try:
        rate = fit_decay(series)
    except (CalibrationError, ValueError) as exc:
        raise CLIError(4, "decay-fit", str(exc)) from None
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "rate_thz": rate,
        "lifetime_ps": 1.0 / rate,
        "n_points": int(series.shape[0]),
    }
    _atomic_write_json(report, out / "decay_fit.json")
    print(f"rate = {rate:.6g} THz (lifetime {1.0 / rate:.6g} ps)")
    return report


_DEFAULT_FREE = ("gamma_bx_i0", "gamma_xg_i0", "gamma_bx_const",
                 "gamma_xg_const", "gamma_bd_i0", "gamma_xd_i0",
                 "k_p_scale", "k_c_scale_b", "k_c_scale_x",
                 "k_c_off_b", "k_c_off_x")


def cmd_fit(config: RunConfig, data: Path, out: Path) -> dict:
    try:
        dataset = RabiDataset.from_csv(data)
    except ValueError as exc:
        raise CLIError(3, "data", str(exc)) from None
    free = config.fit.free
    if free is None:
        free = {name: (0.25 * getattr(config.params, name),
                       4.0 * getattr(config.params, name))
                for name in _DEFAULT_FREE}
    try:
        report = fit_rabi(dataset, config.params, free,
                          seed=config.seed, n_init=config.fit.n_init,
                          max_evals=config.fit.max_evals,
                          rtol=config.fit.rtol, atol=config.fit.atol,
                          fast=config.fit.fast, workers=config.fit.workers)
    except (CalibrationError, IntegrationError, ValueError) as exc:
        raise CLIError(4, "fit", str(exc)) from None
    extra = {"schema_version": SCHEMA_VERSION, "config": config.to_dict()}
    _atomic_file(out / "fit_report.json", lambda t: report.to_json(t, extra))
    print(f"residual = {report.residual:.6g} after {report.candidates} candidates "
          f"({report.evaluations} solver runs), status {report.status}")
    return extra


def cmd_sweep(config: RunConfig, out: Path) -> dict:
    o0_axis, tau_axis = config.sweep.axes()
    try:
        grid = run_sweep(config.params, o0_axis, tau_axis, rtol=config.rtol,
                         atol=config.atol, phase=config.bell_phase,
                         workers=config.sweep.workers)
        contour = iso_count_contour(grid, config.sweep.level)
        alignment = energy_contour_check(grid)
    except (SweepError, ValueError) as exc:
        raise CLIError(4, "sweep", str(exc)) from None

    header = _config_header(config)
    _atomic_file(out / "sweep.csv", lambda t: grid.to_csv(t, header))
    _atomic_file(out / "contour.csv",
                 lambda t: write_contour_csv(contour, t, header))
    ok = grid.point_status == "ok"
    masked = np.where(ok, grid.fidelity, -np.inf)
    i, j = np.unravel_index(np.argmax(masked), masked.shape)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "n_cells": int(grid.fidelity.size),
        "n_failed": int(np.count_nonzero(~ok)),
        "best_fidelity": float(grid.fidelity[i, j]),
        "best_omega0": float(grid.omega0_axis[i]),
        "best_tau": float(grid.tau_axis[j]),
        "contour_level": config.sweep.level,
        "contour_points": int(contour.shape[0]),
        "energy_alignment": {
            "statistic": alignment.statistic,
            "n_cells": alignment.n_cells,
            "insufficient_variation": alignment.insufficient_variation,
            "note": alignment.note,
        },
    }
    _atomic_write_json(report, out / "sweep_report.json")
    print(f"best fidelity {report['best_fidelity']:.6g} at "
          f"omega0={report['best_omega0']:.4g}, tau={report['best_tau']:.4g}")
    return report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdcascade",
        description="Simulation and calibration pipeline for a driven "
                    "quantum-dot cascade emitting time-bin entangled pairs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run the pipeline and write all artifacts"),
        ("fit", "fit free parameters to a Rabi counts CSV"),
        ("decay-fit", "fit an exponential decay rate to a (t, counts) CSV"),
        ("tomo", "reconstruct a density matrix from a counts CSV"),
        ("sweep", "map fidelity over the pulse-parameter grid"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="JSON config path")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        if name in ("fit", "decay-fit", "tomo"):
            sp.add_argument("--data", default=None, help="input data CSV")
        if name == "sweep":
            sp.add_argument("--grid", default=None,
                            help="o0_min:o0_max:n,tau_min:tau_max:n")
            sp.add_argument("--level", type=float, default=None,
                            help="iso-count contour level")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        out = _out_dir(args)
        if args.command == "simulate":
            cmd_simulate(config, out)
        elif args.command == "tomo":
            cmd_tomo(config, _require_data(args), out)
        elif args.command == "decay-fit":
            cmd_decay_fit(config, _require_data(args), out)
        elif args.command == "fit":
            cmd_fit(config, _require_data(args), out)
        elif args.command == "sweep":
            cmd_sweep(config, out)
        return 0
    except CLIError as exc:
        json.dump({"error": {"code": exc.code, "stage": exc.stage,
                             "message": str(exc)}}, sys.stderr)
        sys.stderr.write("\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
