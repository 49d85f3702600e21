"""Photon statistics derived from the dot trajectory.

The biexciton-exciton cascade emits one photon pair per excitation
cycle.  An excitation pulse pair splits the emission into early (e)
and late (l) time bins; detection behind analysis interferometers
realizes projective measurements on the 16 two-photon states built
from {+, R, e, l} per photon.  Each projector nu has a coincidence
probability density eta_nu(t) that reduces to a closed form in the
dot density-matrix elements, and the simulated coincidence counts are
the time integrals n_nu = int eta_nu dt (overall detection constants
are set to 1; the tomographic reconstruction normalizes them away).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import B, G, X, ModelParams

#: (biexciton projector, exciton projector) per row, nu = 1..16.
PROJECTOR_LABELS: tuple[tuple[str, str], ...] = (
    ("+", "+"), ("+", "R"), ("+", "e"), ("+", "l"),
    ("R", "+"), ("R", "R"), ("R", "e"), ("R", "l"),
    ("e", "+"), ("e", "R"), ("e", "e"), ("e", "l"),
    ("l", "+"), ("l", "R"), ("l", "e"), ("l", "l"),
)

ETA_NAMES = tuple(f"eta_{nu}" for nu in range(1, 17))


def eta_from_elements(rho_xx: float, rho_bb: float,
                      abs2_bg: float, abs2_bx: float) -> np.ndarray:
    """All 16 eta values from the four dot-matrix ingredients.

    Every projector row is one of six closed forms built on the common
    term rho_bb*(1 + rho_xx) + rho_xx*rho_bb.  Rows that share a form
    are assigned the same float, so equal rows stay bit-identical.
    """
    half_common = 0.5 * (rho_bb * (1.0 + rho_xx) + rho_xx * rho_bb)
    plus_row = half_common + abs2_bx  # (+,R), (+,e), (+,l)
    cross = half_common               # mixed rows without coherence terms
    diag_same = rho_bb                # (e,e), (l,l)
    diag_cross = 2.0 * rho_xx * rho_bb  # (e,l), (l,e)

    out = np.empty(16)
    out[0] = plus_row + 0.5 * abs2_bg   # (+,+)
    out[1] = plus_row
    out[2] = plus_row
    out[3] = plus_row
    out[4] = cross                      # (R,+)
    out[5] = half_common - 0.5 * abs2_bg  # (R,R)
    out[6] = cross
    out[7] = cross
    out[8] = cross                      # (e,+)
    out[9] = cross
    out[10] = diag_same                 # (e,e)
    out[11] = diag_cross                # (e,l)
    out[12] = cross                     # (l,+)
    out[13] = cross
    out[14] = diag_cross                # (l,e)
    out[15] = diag_same                 # (l,l)
    return out


def eta(nu: int, rho: np.ndarray) -> float:
    """Coincidence probability density for projector nu at dot state rho."""
    if not 1 <= nu <= 16:
        raise ValueError(f"projector index nu must be in 1..16, got {nu}")
    rho = np.asarray(rho)
    if rho.shape != (5, 5):
        raise ValueError(f"expected a 5x5 dot state, got shape {rho.shape}")
    vals = eta_from_elements(
        rho[X, X].real,
        rho[B, B].real,
        abs(rho[B, G]) ** 2,
        abs(rho[B, X]) ** 2,
    )
    return float(vals[nu - 1])


@dataclass
class CoincidenceVector:
    """Counts for the 16 projective measurements, in fixed row order."""

    n: np.ndarray
    labels: tuple[tuple[str, str], ...] = field(default=PROJECTOR_LABELS)

    def __post_init__(self) -> None:
        self.n = np.asarray(self.n, dtype=float)
        if self.n.shape != (16,):
            raise ValueError(f"expected 16 counts, got shape {self.n.shape}")
        if np.any(self.n < 0):
            raise ValueError("coincidence counts must be non-negative")
        if len(self.labels) != 16:
            raise ValueError("expected 16 projector labels")

    def total(self) -> float:
        return float(self.n.sum())

    def to_csv(self, path, header_lines: list[str] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines or []:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["nu", "biexciton_projector", "exciton_projector", "counts"])
            for i, (bp, xp) in enumerate(self.labels):
                writer.writerow([i + 1, bp, xp, repr(float(self.n[i]))])

    @classmethod
    def from_csv(cls, path) -> "CoincidenceVector":
        n = np.full(16, np.nan)
        labels = list(PROJECTOR_LABELS)
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh)
                    if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty counts file")
        expected = ["nu", "biexciton_projector", "exciton_projector", "counts"]
        if [c.strip() for c in rows[0]] != expected:
            raise ValueError(
                f"{path}: header must be {','.join(expected)}, got {','.join(rows[0])}"
            )
        if len(rows) != 17:
            raise ValueError(f"{path}: expected 16 data rows, got {len(rows) - 1}")
        seen = set()
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 4:
                raise ValueError(f"{path}: row {lineno}: expected 4 columns, got {len(row)}")
            try:
                nu = int(row[0])
                value = float(row[3])
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            if not 1 <= nu <= 16 or nu in seen:
                raise ValueError(f"{path}: row {lineno}: bad or repeated index {row[0]}")
            seen.add(nu)
            n[nu - 1] = value
            labels[nu - 1] = (row[1].strip(), row[2].strip())
        return cls(n=n, labels=tuple(labels))


def emission_probabilities(traj, p: ModelParams) -> tuple[float, float]:
    """Exciton and biexciton emission probabilities (P_x, P_b).

    P_i = gamma_i * int <i|rho(t)|i> dt over the configured horizon.
    """
    if traj.times[-1] < p.t_total - 1e-9:
        raise ValueError(
            f"trajectory truncated: spans up to {traj.times[-1]} ps, "
            f"configured horizon is {p.t_total} ps"
        )
    p_x = p.gamma_x * traj.final("pop_x")
    p_b = p.gamma_b * traj.final("pop_b")
    tol = 1e-6
    for name, value in (("P_x", p_x), ("P_b", p_b)):
        if not -tol <= value <= 1.0 + tol:
            raise ValueError(f"{name} = {value} outside [0, 1]")
    return p_x, p_b


def coincidence_counts(traj) -> CoincidenceVector:
    """Integrated coincidence counts n_nu from the trajectory accumulators."""
    missing = [name for name in ETA_NAMES if name not in traj.accumulators]
    if missing:
        raise ValueError(f"trajectory lacks accumulators: {', '.join(missing)}")
    return CoincidenceVector(n=np.array([traj.final(name) for name in ETA_NAMES]))
