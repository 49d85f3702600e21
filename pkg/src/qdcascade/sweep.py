"""Pulse-parameter maps of entanglement quality.

Runs the full simulate/measure/reconstruct pipeline over a grid of
peak Rabi amplitude and pulse length, producing a Bell-state fidelity
surface and a normalized total-coincidence surface.  Iso-count
contours extracted from the count surface trace out operating curves
of constant brightness; the energy-alignment check quantifies how
closely the fidelity surface follows lines of constant pulse energy
(amplitude squared times length) in the low-energy regime, where the
two-photon excitation probability is the only driver.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .emission import coincidence_counts
from .lindblad import IntegrationError, evolve
from .model import ModelParams
from .tomography import (
    TomographyError,
    default_basis,
    fidelity_bell,
    project_physical,
    reconstruct,
)

log = logging.getLogger(__name__)

SWEEP_CSV_COLUMNS = ("omega0", "tau", "fidelity", "counts_norm", "status")
CONTOUR_CSV_COLUMNS = ("omega0", "tau", "fidelity")


class SweepError(RuntimeError):
    """Raised when a sweep or contour operation cannot produce output."""


def _cell_task(args):
    """One grid cell: evolve, count, reconstruct, score."""
    i, j, params, rtol, atol, phase = args
    try:
        traj = evolve(params, rtol=rtol, atol=atol)
        counts = coincidence_counts(traj)
        rho = project_physical(reconstruct(counts, default_basis()))
        return i, j, fidelity_bell(rho, phase), counts.total(), "ok"
    except (IntegrationError, TomographyError, ValueError) as exc:
        return i, j, float("nan"), float("nan"), f"failed: {exc}"


@dataclass
class SweepGrid:
    """Fidelity and count surfaces over (omega0, tau).

    fidelity and counts_norm are indexed [i_omega0, j_tau]; counts_norm
    is scaled so its maximum over successful cells is exactly 1.
    """

    omega0_axis: np.ndarray
    tau_axis: np.ndarray
    fidelity: np.ndarray
    counts_norm: np.ndarray
    point_status: np.ndarray
    params: ModelParams = field(repr=False, default=None)

    def to_csv(self, path, header_lines: list[str] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines or []:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(SWEEP_CSV_COLUMNS)
            for i, o0 in enumerate(self.omega0_axis):
                for j, tau in enumerate(self.tau_axis):
                    writer.writerow([
                        repr(float(o0)), repr(float(tau)),
                        repr(float(self.fidelity[i, j])),
                        repr(float(self.counts_norm[i, j])),
                        self.point_status[i, j],
                    ])

    @classmethod
    def from_csv(cls, path, params: ModelParams | None = None) -> "SweepGrid":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        if not rows or tuple(c.strip() for c in rows[0]) != SWEEP_CSV_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(SWEEP_CSV_COLUMNS)}")
        cells = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 5:
                raise ValueError(f"{path}: row {lineno}: expected 5 columns, got {len(row)}")
            try:
                o0, tau, fid, cn = (float(v) for v in row[:4])
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            cells[(o0, tau)] = (fid, cn, row[4])
        omega0_axis = np.array(sorted({k[0] for k in cells}))
        tau_axis = np.array(sorted({k[1] for k in cells}))
        if len(cells) != omega0_axis.size * tau_axis.size:
            raise ValueError(f"{path}: rows do not form a complete grid")
        fid = np.empty((omega0_axis.size, tau_axis.size))
        cn = np.empty_like(fid)
        status = np.empty(fid.shape, dtype=object)
        for i, o0 in enumerate(omega0_axis):
            for j, tau in enumerate(tau_axis):
                fid[i, j], cn[i, j], status[i, j] = cells[(o0, tau)]
        return cls(omega0_axis=omega0_axis, tau_axis=tau_axis, fidelity=fid,
                   counts_norm=cn, point_status=status, params=params)


def run_sweep(p: ModelParams, omega0_axis, tau_axis, *, rtol: float = 1e-8,
              atol: float = 1e-10, phase: float = 0.0,
              workers: int | None = None) -> SweepGrid:
    """Map Bell fidelity and total counts over the pulse-parameter grid.

    Cell failures are recorded in point_status and never abort the
    sweep; normalization runs over the successful cells.
    """
    omega0_axis = np.asarray(omega0_axis, dtype=float)
    tau_axis = np.asarray(tau_axis, dtype=float)
    for name, axis in (("omega0_axis", omega0_axis), ("tau_axis", tau_axis)):
        if axis.ndim != 1 or axis.size == 0:
            raise ValueError(f"{name} must be a non-empty 1-d array")
        if np.any(np.diff(axis) <= 0):
            raise ValueError(f"{name} must be strictly increasing")
    if np.any(omega0_axis < 0) or np.any(tau_axis <= 0):
        raise ValueError("omega0 values must be >= 0 and tau values > 0")

    tasks = [
        (i, j, p.replace(omega0=float(o0), tau=float(tau)), rtol, atol, phase)
        for i, o0 in enumerate(omega0_axis)
        for j, tau in enumerate(tau_axis)
    ]
    n_workers = workers if workers is not None else (os.cpu_count() or 1)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_cell_task, tasks, chunksize=4))
    else:
        results = [_cell_task(t) for t in tasks]

    shape = (omega0_axis.size, tau_axis.size)
    fid = np.full(shape, np.nan)
    counts = np.full(shape, np.nan)
    status = np.empty(shape, dtype=object)
    for i, j, f, c, st in results:
        fid[i, j] = f
        counts[i, j] = c
        status[i, j] = st
        if st != "ok":
            log.warning("cell (omega0=%g, tau=%g) %s",
                        omega0_axis[i], tau_axis[j], st)

    ok = status == "ok"
    if not ok.any():
        raise SweepError("all sweep cells failed")
    peak = float(np.max(counts[ok]))
    if peak <= 0:
        raise SweepError("no positive counts on the grid; cannot normalize")
    return SweepGrid(omega0_axis=omega0_axis, tau_axis=tau_axis, fidelity=fid,
                     counts_norm=counts / peak, point_status=status, params=p)


def _bilinear(grid: SweepGrid, values: np.ndarray, o0: float, tau: float) -> float:
    """Bilinear interpolation of a cell-cornered surface at one point."""
    xa, ya = grid.omega0_axis, grid.tau_axis
    i = int(np.clip(np.searchsorted(xa, o0) - 1, 0, max(xa.size - 2, 0)))
    j = int(np.clip(np.searchsorted(ya, tau) - 1, 0, max(ya.size - 2, 0)))
    if xa.size == 1:
        fx = 0.0
        i1 = i
    else:
        i1 = i + 1
        fx = (o0 - xa[i]) / (xa[i1] - xa[i])
    if ya.size == 1:
        fy = 0.0
        j1 = j
    else:
        j1 = j + 1
        fy = (tau - ya[j]) / (ya[j1] - ya[j])
    return float(
        values[i, j] * (1 - fx) * (1 - fy)
        + values[i1, j] * fx * (1 - fy)
        + values[i, j1] * (1 - fx) * fy
        + values[i1, j1] * fx * fy
    )


def iso_count_contour(grid: SweepGrid, level: float) -> np.ndarray:
    """Points on the counts_norm == level contour, (m, 3) array.

    Columns are (omega0, tau, fidelity) with fidelity interpolated
    bilinearly from the sweep surface; rows are ordered by increasing
    omega0 (then tau).  Marching-squares edge crossings with linear
    interpolation along each grid edge; the level equal to the surface
    maximum degenerates to the single peak cell.
    """
    c = grid.counts_norm
    finite = np.isfinite(c)
    if not finite.any():
        raise SweepError("count surface has no finite cells")
    vmin = float(np.min(c[finite]))
    vmax = float(np.max(c[finite]))
    if not (vmin <= level <= vmax):
        raise SweepError(
            f"contour level {level} outside surface range [{vmin}, {vmax}]")

    if level == vmax:
        i, j = np.unravel_index(np.nanargmax(np.where(finite, c, -np.inf)), c.shape)
        return np.array([[grid.omega0_axis[i], grid.tau_axis[j],
                          grid.fidelity[i, j]]])

    points = []
    seen = set()

    def crossing(v0, v1, p0, p1):
        if not (np.isfinite(v0) and np.isfinite(v1)):
            return
        d0, d1 = v0 - level, v1 - level
        if d0 == 0.0 and d1 == 0.0:
            return  # edge lies on the level; endpoints come from neighbors
        if d0 * d1 > 0:
            return
        t = 0.0 if d0 == 0.0 else (1.0 if d1 == 0.0 else d0 / (d0 - d1))
        o0 = p0[0] + t * (p1[0] - p0[0])
        tau = p0[1] + t * (p1[1] - p0[1])
        key = (round(o0, 12), round(tau, 12))
        if key not in seen:
            seen.add(key)
            points.append((o0, tau, _bilinear(grid, grid.fidelity, o0, tau)))

    xa, ya = grid.omega0_axis, grid.tau_axis
    for i in range(xa.size):
        for j in range(ya.size):
            if i + 1 < xa.size:
                crossing(c[i, j], c[i + 1, j], (xa[i], ya[j]), (xa[i + 1], ya[j]))
            if j + 1 < ya.size:
                crossing(c[i, j], c[i, j + 1], (xa[i], ya[j]), (xa[i], ya[j + 1]))

    if not points:
        raise SweepError(f"contour level {level} crosses no grid edge")
    out = np.array(sorted(points, key=lambda q: (q[0], q[1])))
    return out


def write_contour_csv(points: np.ndarray, path,
                      header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(CONTOUR_CSV_COLUMNS)
        for o0, tau, fid in np.asarray(points, dtype=float):
            writer.writerow([repr(float(o0)), repr(float(tau)), repr(float(fid))])


@dataclass
class EnergyAlignmentReport:
    """Correlation diagnostic between fidelity and pulse energy.

    statistic is minus the Spearman rank correlation of fidelity with
    omega0^2 * tau over the low-energy quarter of the grid: near +1
    means fidelity falls monotonically with pulse energy there, i.e.
    iso-fidelity curves track iso-energy curves.  Reported, not
    asserted; the flag marks grids with too little variation to rank.
    """

    statistic: float
    n_cells: int
    insufficient_variation: bool
    note: str = ""


def energy_contour_check(grid: SweepGrid) -> EnergyAlignmentReport:
    energy = np.outer(grid.omega0_axis**2, grid.tau_axis)
    ok = (grid.point_status == "ok") & np.isfinite(grid.fidelity)
    if not ok.any():
        return EnergyAlignmentReport(float("nan"), 0, True, "no successful cells")
    threshold = np.quantile(energy[ok], 0.25)
    mask = ok & (energy <= threshold)
    n = int(mask.sum())
    e = energy[mask]
    f = grid.fidelity[mask]
    if n < 8 or np.unique(np.round(e, 12)).size < 3 or np.ptp(f) == 0:
        return EnergyAlignmentReport(
            float("nan"), n, True,
            "too few low-energy cells or no fidelity variation")
    rho = spearmanr(f, e).statistic
    if not np.isfinite(rho):
        return EnergyAlignmentReport(float("nan"), n, True,
                                     "rank correlation undefined")
    return EnergyAlignmentReport(float(-rho), n, False)
