"""Simulation and calibration toolkit for a driven quantum-dot cascade.

The pipeline models a five-level emitter (ground, exciton, biexciton,
two dark states) under a Gaussian two-photon drive with a Lindblad
master equation, converts the solved dynamics into the sixteen
time-bin coincidence rates of a projective two-photon measurement,
reconstructs the emitted-pair density matrix by linear tomographic
inversion, and scores it against the maximally entangled target.
Calibration fits the model's rate and scaling parameters to measured
decay and Rabi data; the sweep module maps entanglement quality over
pulse amplitude and length.
"""

from .calibration import (
    CalibrationError,
    FitReport,
    RabiDataset,
    fit_decay,
    fit_rabi,
    predict_counts,
    predict_probs,
    read_decay_series,
    scale_counts,
    write_decay_series,
)
from .emission import (
    ETA_NAMES,
    PROJECTOR_LABELS,
    CoincidenceVector,
    coincidence_counts,
    emission_probabilities,
    eta,
    eta_from_elements,
)
from .lindblad import (
    ACCUMULATOR_NAMES,
    IntegrationError,
    Trajectory,
    basis_state,
    build_liouvillian,
    check_density_matrix,
    evolve,
    ground_state,
    lindblad_rhs,
)
from .model import (
    B,
    DB,
    DIM,
    DX,
    G,
    X,
    ModelParams,
    collapse_operators,
    default_params,
    hamiltonian,
    intensity_factor,
    power_to_omega0,
    pulse_envelope,
)
from .sweep import (
    EnergyAlignmentReport,
    SweepError,
    SweepGrid,
    energy_contour_check,
    iso_count_contour,
    run_sweep,
    write_contour_csv,
)
from .tomography import (
    ProjectorSet,
    ReconstructionBasis,
    TomographyError,
    bell_state,
    build_basis,
    default_basis,
    default_projector_set,
    fidelity_bell,
    fidelity_mixed,
    load_density_matrix,
    project_physical,
    reconstruct,
    save_density_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "ACCUMULATOR_NAMES",
    "B",
    "CalibrationError",
    "CoincidenceVector",
    "DB",
    "DIM",
    "DX",
    "ETA_NAMES",
    "EnergyAlignmentReport",
    "FitReport",
    "G",
    "IntegrationError",
    "ModelParams",
    "PROJECTOR_LABELS",
    "ProjectorSet",
    "RabiDataset",
    "ReconstructionBasis",
    "SweepError",
    "SweepGrid",
    "TomographyError",
    "Trajectory",
    "X",
    "basis_state",
    "bell_state",
    "build_basis",
    "build_liouvillian",
    "check_density_matrix",
    "coincidence_counts",
    "collapse_operators",
    "default_basis",
    "default_params",
    "default_projector_set",
    "emission_probabilities",
    "energy_contour_check",
    "eta",
    "eta_from_elements",
    "evolve",
    "fidelity_bell",
    "fidelity_mixed",
    "fit_decay",
    "fit_rabi",
    "ground_state",
    "hamiltonian",
    "intensity_factor",
    "iso_count_contour",
    "lindblad_rhs",
    "load_density_matrix",
    "power_to_omega0",
    "predict_counts",
    "predict_probs",
    "project_physical",
    "pulse_envelope",
    "read_decay_series",
    "reconstruct",
    "run_sweep",
    "save_density_matrix",
    "scale_counts",
    "write_contour_csv",
    "write_decay_series",
]
