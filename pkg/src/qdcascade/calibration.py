"""Parameter extraction from measured photon-count data.

Two calibration paths: radiative decay rates come from exponential fits
to time-resolved counts, and the dephasing/dark-state amplitudes plus
count scaling factors come from a derivative-free fit of the predicted
Rabi oscillation (emission probability versus average laser power) to
the measured biexciton and exciton count curves.  Every objective
evaluation of the Rabi fit solves the master equation once per power
point, so the optimizer budget is the dominant cost and is tracked
explicitly.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit, minimize
from scipy.stats import qmc

from .emission import emission_probabilities
from .lindblad import IntegrationError, evolve
from .model import ModelParams, power_to_omega0

log = logging.getLogger(__name__)

_SCALE_FIELDS = ("k_c_scale_b", "k_c_scale_x")


class CalibrationError(RuntimeError):
    """Raised when a fit cannot be performed on the given data."""


def fit_decay(series) -> float:
    """Exponential decay rate from (t, counts) rows, THz.

    Fits a*exp(-gamma*t) + c by least squares: a log-linear estimate
    with the offset taken from the series tail seeds a Levenberg-
    Marquardt refinement, so noiseless data is recovered to machine
    precision.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (t, counts) rows, got shape {arr.shape}")
    if arr.shape[0] < 5:
        raise CalibrationError(f"insufficient points: need >= 5, got {arr.shape[0]}")
    t = arr[:, 0]
    y = arr[:, 1]
    if np.any(y <= 0):
        raise ValueError("counts must be positive")

    # Offset from the tail, pulled just under the series minimum so the
    # log-linear seed sees positive residual counts everywhere.
    tail = y[-max(3, y.size // 10):]
    c0 = min(float(tail.mean()), 0.99 * float(y.min()))
    slope, intercept = np.polyfit(t, np.log(y - c0), 1)
    if slope >= 0:
        raise CalibrationError(f"non-decaying data (rate estimate {-slope:.3g} <= 0)")

    def model(tt, a, gamma, c):
        return a * np.exp(-gamma * tt) + c

    p0 = (math.exp(intercept), -slope, c0)
    try:
        popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise CalibrationError(f"decay fit did not converge: {exc}") from None
    gamma = float(popt[1])
    if gamma <= 0:
        raise CalibrationError(f"non-decaying data (rate estimate {gamma:.3g} <= 0)")
    return gamma


def read_decay_series(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["t", "counts"]:
        raise ValueError(f"{path}: header must be t,counts")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValueError(f"{path}: row {lineno}: expected 2 columns, got {len(row)}")
        try:
            out.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return np.array(out)


def write_decay_series(series, path, header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# t in ps\n")
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "counts"])
        for t, c in np.asarray(series, dtype=float):
            writer.writerow([repr(float(t)), repr(float(c))])


def scale_counts(p_x: float, p_b: float, p: ModelParams) -> tuple[float, float]:
    """Emission probabilities to detector counts, (counts_b, counts_x)."""
    return (
        p.k_c_scale_b * p_b + p.k_c_off_b,
        p.k_c_scale_x * p_x + p.k_c_off_x,
    )


def predict_probs(p: ModelParams, power: float, rtol: float = 1e-8,
                  atol: float = 1e-10, fast: bool = False) -> tuple[float, float]:
    """(P_x, P_b) from the evolve pipeline at the given average power.

    fast=True cuts the integration horizon where the pulse has decayed
    to numerical zero and completes the population integrals over the
    remaining span in closed form.  With the drive off the populations
    obey the plain cascade rate equations, so (rho_bb, rho_xx) together
    with their running integrals form a linear constant-coefficient
    system whose propagator is a 4x4 matrix exponential; the result
    matches the full-horizon integration to solver accuracy.
    """
    omega0 = power_to_omega0(power, p)
    if not fast:
        traj = evolve(p.replace(omega0=omega0), rtol=rtol, atol=atol)
        return emission_probabilities(traj, p)
    t_cut = min(p.t0 + 8.0 * p.tau, p.t_total)
    traj = evolve(p.replace(omega0=omega0, t_total=t_cut), rtol=rtol, atol=atol)
    from scipy.linalg import expm

    from .model import B, X

    rho = traj.states[-1]
    v = np.array([rho[B, B].real, rho[X, X].real,
                  traj.final("pop_b"), traj.final("pop_x")])
    a = np.array([
        [-p.gamma_b, 0.0, 0.0, 0.0],
        [p.gamma_b, -p.gamma_x, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
    ])
    v = expm(a * (p.t_total - t_cut)) @ v
    return p.gamma_x * v[3], p.gamma_b * v[2]


def predict_counts(p: ModelParams, power: float, rtol: float = 1e-8,
                   atol: float = 1e-10, fast: bool = False) -> tuple[float, float]:
    """Predicted (counts_b, counts_x) at one average-power value."""
    p_x, p_b = predict_probs(p, power, rtol=rtol, atol=atol, fast=fast)
    return scale_counts(p_x, p_b, p)


@dataclass
class RabiDataset:
    """Measured counts versus average laser power for both species."""

    powers: np.ndarray
    counts_b: np.ndarray
    counts_x: np.ndarray
    tau: float           # pulse FWHM used in the measurement, ps
    power_unit: str = "uW"

    def __post_init__(self) -> None:
        self.powers = np.asarray(self.powers, dtype=float)
        self.counts_b = np.asarray(self.counts_b, dtype=float)
        self.counts_x = np.asarray(self.counts_x, dtype=float)
        n = self.powers.size
        if self.counts_b.size != n or self.counts_x.size != n:
            raise ValueError("powers and counts columns must have equal length")
        if n == 0:
            raise ValueError("empty dataset")
        if np.any(np.diff(self.powers) <= 0):
            raise ValueError("powers must be strictly increasing")
        if np.any(self.counts_b < 0) or np.any(self.counts_x < 0):
            raise ValueError("counts must be non-negative")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# tau_ps: {self.tau!r}\n")
            fh.write(f"# power_unit: {self.power_unit}\n")
            writer = csv.writer(fh)
            writer.writerow(["power", "counts_b", "counts_x"])
            for row in zip(self.powers, self.counts_b, self.counts_x):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RabiDataset":
        tau = None
        unit = "uW"
        data = []
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        body = []
        for row in rows:
            if row and row[0].lstrip().startswith("#"):
                text = ",".join(row).lstrip("# ").strip()
                if text.startswith("tau_ps:"):
                    tau = float(text.split(":", 1)[1])
                elif text.startswith("power_unit:"):
                    unit = text.split(":", 1)[1].strip()
            elif row:
                body.append(row)
        if tau is None:
            raise ValueError(f"{path}: missing '# tau_ps:' metadata line")
        if not body or [c.strip() for c in body[0]] != ["power", "counts_b", "counts_x"]:
            raise ValueError(f"{path}: header must be power,counts_b,counts_x")
        for lineno, row in enumerate(body[1:], start=2):
            if len(row) != 3:
                raise ValueError(f"{path}: row {lineno}: expected 3 columns, got {len(row)}")
            try:
                data.append(tuple(float(v) for v in row))
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
        arr = np.array(data)
        return cls(powers=arr[:, 0], counts_b=arr[:, 1], counts_x=arr[:, 2],
                   tau=tau, power_unit=unit)


@dataclass
class FitReport:
    """Outcome of the Rabi fitting loop."""

    params: ModelParams
    residual: float
    evaluations: int     # master-equation solver runs: candidates x power rows
    candidates: int      # objective evaluations
    bounds: dict[str, tuple[float, float]]
    seed: int
    status: str          # "ok" or "budget_exhausted"
    free_names: tuple[str, ...]

    def to_json(self, path, extra: dict | None = None) -> None:
        doc = {
            "params": self.params.to_dict(),
            "residual": self.residual,
            "evaluations": self.evaluations,
            "candidates": self.candidates,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "seed": self.seed,
            "status": self.status,
            "free_names": list(self.free_names),
        }
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _probs_task(args):
    params, power, rtol, atol, fast = args
    try:
        return predict_probs(params, power, rtol=rtol, atol=atol, fast=fast)
    except IntegrationError as exc:
        return ("error", str(exc))


class _Objective:
    """Sum of squared count residuals over both species.

    The count scaling factors enter the prediction linearly, so when
    they are among the free parameters their optimum given the rate
    candidates has a closed form and is solved per evaluation instead
    of being searched.  The global sampling stage works in
    log-transformed coordinates wherever the lower bound allows it:
    the free amplitudes span three orders of magnitude and a uniform
    scan in linear coordinates would waste nearly all samples on the
    top decade.  The local simplex stage instead works in linear,
    curvature-normalized coordinates (see fit_rabi): rates that
    partially compensate each other trade off along straight lines in
    linear space, and equalizing the per-direction stiffness is what
    lets a simplex follow those valleys instead of stalling.
    """

    def __init__(self, data: RabiDataset, base: ModelParams,
                 search_names: list[str], scale_names: list[str],
                 bounds: dict[str, tuple[float, float]],
                 rtol: float, atol: float, fast: bool, pool):
        self.data = data
        self.base = base
        self.search_names = search_names
        self.scale_names = scale_names
        self.bounds = bounds
        self.rtol = rtol
        self.atol = atol
        self.fast = fast
        self.pool = pool
        self.log_mask = np.array([bounds[n][0] > 0 for n in search_names], dtype=bool)
        self.solver_runs = 0
        self.candidates = 0
        self.best_value = math.inf
        self.best_values: np.ndarray | None = None  # physical coordinates
        self.best_scales: dict[str, float] = {}

    def to_search(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float)
        out[self.log_mask] = np.log(out[self.log_mask])
        return out

    def from_search(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        out[self.log_mask] = np.exp(out[self.log_mask])
        return out

    def _profiled_scale(self, probs: np.ndarray, observed: np.ndarray,
                        offset: float, name: str) -> float:
        if name not in self.scale_names:
            return getattr(self.base, name)
        denom = float(probs @ probs)
        if denom == 0.0:
            value = getattr(self.base, name)
        else:
            value = float(probs @ (observed - offset)) / denom
        lo, hi = self.bounds[name]
        return min(max(value, lo), hi)

    def __call__(self, x: np.ndarray) -> float:
        return self.eval_physical(self.from_search(np.asarray(x, dtype=float)))

    def eval_physical(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        params = self.base.replace(
            **{name: float(v) for name, v in zip(self.search_names, values)})
        jobs = [(params, float(pw), self.rtol, self.atol, self.fast)
                for pw in self.data.powers]
        if self.pool is None:
            results = [_probs_task(job) for job in jobs]
        else:
            results = list(self.pool.map(_probs_task, jobs))
        self.solver_runs += len(jobs)
        self.candidates += 1

        keep = []
        for row, res in enumerate(results):
            if isinstance(res, tuple) and res and res[0] == "error":
                log.warning("power row %d skipped: %s", row, res[1])
                continue
            keep.append((row, res))
        if not keep:
            return math.inf
        rows = np.array([r for r, _ in keep])
        p_x = np.array([res[0] for _, res in keep])
        p_b = np.array([res[1] for _, res in keep])

        s_b = self._profiled_scale(p_b, self.data.counts_b[rows], params.k_c_off_b,
                                   "k_c_scale_b")
        s_x = self._profiled_scale(p_x, self.data.counts_x[rows], params.k_c_off_x,
                                   "k_c_scale_x")
        res_b = s_b * p_b + params.k_c_off_b - self.data.counts_b[rows]
        res_x = s_x * p_x + params.k_c_off_x - self.data.counts_x[rows]
        value = float(res_b @ res_b + res_x @ res_x)
        if value < self.best_value:
            self.best_value = value
            self.best_values = values.copy()
            self.best_scales = {"k_c_scale_b": s_b, "k_c_scale_x": s_x}
        return value


def _curvature_scales(objective: _Objective, x0: np.ndarray, f0: float,
                      lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-coordinate displacement that changes the residual by ~1.

    Estimates the diagonal curvature H_ii of the objective at x0 with a
    second difference and returns 1/sqrt(H_ii); coordinates that look
    flat or concave (or sit on a bound) fall back to an eighth of their
    bound interval.  These scales turn NM's unit steps into comparably
    informative moves in every direction.
    """
    n = len(x0)
    inv_scale = np.empty(n)
    for i in range(n):
        span = hi[i] - lo[i]
        fallback = span / 8.0 if span > 0 else max(abs(x0[i]), 1.0)
        h = max(1e-3 * abs(x0[i]), 1e-9 * span if span > 0 else 1e-12)
        xp, xm = x0.copy(), x0.copy()
        xp[i] = min(x0[i] + h, hi[i])
        xm[i] = max(x0[i] - h, lo[i])
        hp, hm = xp[i] - x0[i], x0[i] - xm[i]
        if hp <= 0.0 or hm <= 0.0:
            inv_scale[i] = fallback
            continue
        fp = objective.eval_physical(xp)
        fm = objective.eval_physical(xm)
        curv = 2.0 * (hm * fp + hp * fm - (hp + hm) * f0) / (hp * hm * (hp + hm))
        inv_scale[i] = 1.0 / math.sqrt(curv) if curv > 0.0 else fallback
        if span > 0:
            inv_scale[i] = min(inv_scale[i], span)
    return inv_scale


def fit_rabi(data: RabiDataset, base: ModelParams,
             free: dict[str, tuple[float, float]], *,
             seed: int = 0, n_init: int = 32, max_evals: int = 400,
             rtol: float = 1e-7, atol: float = 1e-9,
             fast: bool = True, workers: int | None = None) -> FitReport:
    """Fit free parameters to a Rabi dataset.

    free maps parameter names to finite (lo, hi) bounds.  The search is
    a seeded Latin-hypercube scan over the bounds box followed by a
    Nelder-Mead refinement from the best sample; count scaling factors
    in the free set are solved linearly inside each evaluation.
    max_evals caps the number of objective evaluations (candidates).
    """
    if not free:
        raise ValueError("free parameter list must not be empty")
    valid = {f.name for f in dataclasses.fields(ModelParams)}
    for name, (lo, hi) in free.items():
        if name not in valid:
            raise ValueError(f"unknown parameter {name!r}")
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"bounds for {name!r} must be finite with lo <= hi")
    base = base.replace(tau=data.tau)

    scale_names = [n for n in free if n in _SCALE_FIELDS]
    search_names = [n for n in free if n not in _SCALE_FIELDS]

    n_workers = workers if workers is not None else (os.cpu_count() or 1)
    pool = ProcessPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        objective = _Objective(data, base, search_names, scale_names, dict(free),
                               rtol, atol, fast, pool)
        if search_names:
            lo = np.array([free[n][0] for n in search_names])
            hi = np.array([free[n][1] for n in search_names])
            slo = objective.to_search(lo)
            shi = objective.to_search(hi)
            x_init = np.clip([getattr(base, n) for n in search_names], lo, hi)
            init_value = objective(objective.to_search(x_init))

            n_samples = min(n_init, max(max_evals - objective.candidates - 1, 0))
            if n_samples > 0:
                sampler = qmc.LatinHypercube(d=len(search_names), seed=seed)
                samples = slo + sampler.random(n_samples) * (shi - slo)
                for x in samples:
                    if objective.candidates >= max_evals:
                        break
                    objective(x)

            # Simplex refinement with restarts.  The residual curvature
            # per relative parameter displacement spans four orders of
            # magnitude across the rate space (strongly-driven rates are
            # stiff, the constant dephasing offsets are sloppy), which
            # stalls a simplex in raw coordinates.  Each restart probes
            # the diagonal curvature at the incumbent (two evaluations
            # per coordinate) and runs NM in curvature-normalized
            # coordinates, where a unit step changes the residual by
            # about the same amount in every direction.
            remaining = max_evals - objective.candidates
            nm_block = max(50 * (len(search_names) + 1), (remaining + 2) // 3)
            while remaining > 0 and objective.best_values is not None:
                before = objective.best_value
                x0 = objective.best_values.copy()
                inv_scale = _curvature_scales(objective, x0, before, lo, hi)
                remaining = max_evals - objective.candidates
                if remaining <= 0:
                    break
                n = len(x0)
                step = math.sqrt(max(objective.best_value, 1e-12) / 2.0)
                simplex = np.zeros((n + 1, n))
                for k in range(n):
                    up = x0[k] + step * inv_scale[k] <= hi[k]
                    simplex[k + 1, k] = step if up else -step
                minimize(
                    lambda z: objective.eval_physical(
                        np.clip(x0 + z * inv_scale, lo, hi)),
                    np.zeros(n), method="Nelder-Mead",
                    options={"maxfev": min(nm_block, remaining),
                             "xatol": 1e-12, "fatol": 1e-16,
                             "adaptive": True, "initial_simplex": simplex},
                )
                remaining = max_evals - objective.candidates
                if objective.best_value >= before - 1e-14 - 1e-10 * abs(before):
                    break
            improved = objective.best_value < init_value
        else:
            # Only linear scale factors are free: one evaluation suffices.
            init_value = objective(np.empty(0))
            improved = True

        fitted_values = {}
        if search_names and objective.best_values is not None:
            fitted_values.update({n: float(v) for n, v
                                  in zip(search_names, objective.best_values)})
        for name in scale_names:
            fitted_values[name] = float(objective.best_scales[name])
        fitted = base.replace(**fitted_values)

        exhausted = objective.candidates >= max_evals and not improved
        status = "budget_exhausted" if exhausted else "ok"
        return FitReport(
            params=fitted,
            residual=float(objective.best_value),
            evaluations=objective.solver_runs,
            candidates=objective.candidates,
            bounds=dict(free),
            seed=seed,
            status=status,
            free_names=tuple(free),
        )
    finally:
        if pool is not None:
            pool.shutdown()
