"""Five-level model of a two-photon driven quantum dot.

The dot is described on the fixed basis (g, x, b, d_x, d_b), indices
0 to 4: ground state, exciton, biexciton, and two bookkeeping dark
states that absorb intensity-dependent population loss.  A Gaussian
laser pulse couples g-x and x-b with the same Rabi frequency, so the
biexciton is reached through a two-photon process via the detuned
exciton level.

Units: hbar = 1, energies and rates in THz (1/ps), times in ps.  All
modules share the basis order defined here.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

# Basis indices, shared by every module.
G, X, B, DX, DB = 0, 1, 2, 3, 4
DIM = 5

_RATE_FIELDS = (
    "gamma_b",
    "gamma_x",
    "gamma_bx_i0",
    "gamma_xg_i0",
    "gamma_bx_const",
    "gamma_xg_const",
    "gamma_bd_i0",
    "gamma_xd_i0",
)


@dataclass(frozen=True)
class ModelParams:
    """Physical and calibration parameters of the driven-dot system.

    Defaults reproduce the reference parameter set: the fixed system
    values (detunings, radiative rates, pulse timing) and the fitted
    dephasing/dark-state amplitudes and count scaling constants.
    """

    # Detunings and pulse shape
    delta_x: float = 1.60        # exciton detuning from the laser, THz
    delta_b: float = 0.0         # two-photon detuning of the biexciton, THz
    omega0: float = 0.05         # Rabi amplitude, THz
    tau: float = 85.0            # pulse FWHM, ps
    t0: float = 300.0            # pulse center, ps
    t_total: float = 7000.0      # integration horizon, ps
    # Radiative decay
    gamma_b: float = 1.0 / 458.0   # biexciton decay rate, THz
    gamma_x: float = 1.0 / 1241.0  # exciton decay rate, THz
    # Intensity-dependent dephasing amplitudes and constant offsets
    gamma_bx_i0: float = 0.03      # THz
    gamma_xg_i0: float = 0.69      # THz
    gamma_bx_const: float = 0.56e-3  # THz
    gamma_xg_const: float = 0.25e-3  # THz
    # Dark-state decay amplitudes
    gamma_bd_i0: float = 1.16e-3   # THz
    gamma_xd_i0: float = 9.51e-3   # THz
    # Intensity scaling
    n_exp: float = 2.0           # exponent of the intensity dependence
    omega_s: float = 1.0         # Rabi scaling factor, THz
    # Power -> Rabi amplitude mapping
    k_p_scale: float = 3.12e6
    k_p_off: float = 0.0
    # Emission probability -> detector counts mapping
    k_c_scale_b: float = 4.08e4
    k_c_scale_x: float = 3.92e4
    k_c_off_b: float = 1.50e3
    k_c_off_x: float = 1.50e3

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in _RATE_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"rate {name} must be >= 0, got {getattr(self, name)}")
        if self.omega0 < 0:
            raise ValueError(f"omega0 must be >= 0, got {self.omega0}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.t_total <= self.t0:
            raise ValueError(
                f"t_total must exceed t0, got t_total={self.t_total}, t0={self.t0}"
            )
        if self.omega_s <= 0:
            raise ValueError(f"omega_s must be > 0, got {self.omega_s}")
        if self.n_exp < 0:
            raise ValueError(f"n_exp must be >= 0, got {self.n_exp}")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown ModelParams fields: {', '.join(unknown)}")
        return cls(**d)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_params() -> ModelParams:
    """Parameter set shipped with the package (same values as ModelParams())."""
    ref = resources.files("qdcascade").joinpath("data/default_params.json")
    with ref.open(encoding="utf-8") as fh:
        return ModelParams.from_dict(json.load(fh))


def pulse_envelope(t, p: ModelParams):
    """Gaussian Rabi envelope Omega(t) with amplitude omega0 and FWHM tau."""
    arg = (np.asarray(t, dtype=float) - p.t0) / p.tau
    out = p.omega0 * np.exp(-4.0 * math.log(2.0) * arg * arg)
    return out if out.ndim else float(out)


def intensity_factor(t, p: ModelParams):
    """Dimensionless drive intensity (Omega(t)/Omega_S)**n_exp."""
    w = np.asarray(pulse_envelope(t, p))
    out = (w / p.omega_s) ** p.n_exp
    return out if out.ndim else float(out)


def power_to_omega0(p_avg: float, p: ModelParams) -> float:
    """Map average laser power to the Rabi amplitude.

    Omega_0 = sqrt(k_p_scale * |p_avg + k_p_off| / tau).  The absolute
    value is kept even though the offset defaults to zero.
    """
    if p.tau <= 0:
        raise ValueError(f"tau must be > 0, got {p.tau}")
    return math.sqrt(p.k_p_scale * abs(p_avg + p.k_p_off) / p.tau)


def hamiltonian(t: float, p: ModelParams) -> np.ndarray:
    """Interaction-picture Hamiltonian on the five-level basis, THz.

    The g-x-b block carries diag(0, delta_x - delta_b, -2*delta_b) and
    the drive Omega(t) on the (g,x) and (x,b) bonds.  Dark-state rows
    and columns are identically zero: the dark levels are
    non-interacting sinks.
    """
    w = pulse_envelope(t, p)
    h = np.zeros((DIM, DIM), dtype=complex)
    h[X, X] = p.delta_x - p.delta_b
    h[B, B] = -2.0 * p.delta_b
    h[G, X] = h[X, G] = w
    h[X, B] = h[B, X] = w
    return h


def collapse_operators(t: float, p: ModelParams) -> list[np.ndarray]:
    """The six collapse operators at time t, entries in sqrt(THz).

    R1, R2: radiative decay x->g and b->x.  R3, R4: pure dephasing of
    the x-g and b-x coherences with constant plus intensity-dependent
    rates.  R5, R6: intensity-dependent loss into the dark states.
    """
    u = intensity_factor(t, p)

    def op(entries, rate):
        m = np.zeros((DIM, DIM), dtype=complex)
        amp = math.sqrt(rate)
        for i, j, sign in entries:
            m[i, j] = sign * amp
        return m

    return [
        op([(G, X, 1.0)], p.gamma_x),
        op([(X, B, 1.0)], p.gamma_b),
        op([(X, X, 1.0), (G, G, -1.0)], p.gamma_xg_const + p.gamma_xg_i0 * u),
        op([(B, B, 1.0), (X, X, -1.0)], p.gamma_bx_const + p.gamma_bx_i0 * u),
        op([(DX, X, 1.0)], p.gamma_xd_i0 * u),
        op([(DB, B, 1.0)], p.gamma_bd_i0 * u),
    ]
