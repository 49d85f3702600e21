"""Two-photon state reconstruction and fidelity metrics.

Linear-inversion tomography: the 16 projector counts n_nu determine the
two-photon density matrix through rho = (1/k) sum_nu M_nu n_nu with
k = sum_nu tr(M_nu) n_nu.  The transformation matrices M_nu derive from
the tensor-product Pauli basis Gamma_i and the overlap matrix
B_{i,nu} = <psi_i|Gamma_nu|psi_i> of the projector kets.  For counts
that follow the Born rule exactly, the reconstruction is exact; counts
with statistical noise can land outside the physical set, hence the
deterministic projection onto unit-trace positive matrices.

Basis conventions, fixed throughout: two-photon basis {ee, el, le, ll}
with the biexciton photon as the first tensor factor, and Gamma ordering
(I, sx, sy, sz) x (I, sx, sy, sz), row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .emission import PROJECTOR_LABELS, CoincidenceVector

_KET_E = np.array([1.0, 0.0], dtype=complex)
_KET_L = np.array([0.0, 1.0], dtype=complex)
_SINGLE_PHOTON_KETS = {
    "e": _KET_E,
    "l": _KET_L,
    "+": (_KET_E + _KET_L) / np.sqrt(2.0),
    "R": (_KET_E - 1j * _KET_L) / np.sqrt(2.0),
}

_PAULIS = (
    np.eye(2, dtype=complex),
    np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    np.array([[0.0, -1j], [1j, 0.0]], dtype=complex),
    np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
)


class TomographyError(RuntimeError):
    """Raised when reconstruction is impossible for the given inputs."""


@dataclass(frozen=True)
class ProjectorSet:
    """The 16 two-photon measurement kets, rows ordered as the counts."""

    kets: np.ndarray
    labels: tuple[tuple[str, str], ...] = PROJECTOR_LABELS

    def __post_init__(self) -> None:
        kets = np.asarray(self.kets, dtype=complex)
        if kets.shape != (16, 4):
            raise ValueError(f"expected 16 kets of dimension 4, got {kets.shape}")
        norms = np.linalg.norm(kets, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("projector kets must be unit norm")
        object.__setattr__(self, "kets", kets)


def default_projector_set() -> ProjectorSet:
    kets = np.array([
        np.kron(_SINGLE_PHOTON_KETS[bp], _SINGLE_PHOTON_KETS[xp])
        for bp, xp in PROJECTOR_LABELS
    ])
    return ProjectorSet(kets=kets)


@dataclass(frozen=True)
class ReconstructionBasis:
    """Precomputed tomography operators for one projector set."""

    projectors: ProjectorSet
    gammas: np.ndarray    # (16, 4, 4) tensor-product Pauli basis
    b: np.ndarray         # (16, 16) overlap matrix B_{i,nu}
    b_inv: np.ndarray
    m: np.ndarray         # (16, 4, 4) transformation matrices M_nu
    m_traces: np.ndarray  # tr(M_nu), used for the normalization k
    condition_number: float


def build_basis(ps: ProjectorSet) -> ReconstructionBasis:
    """Construct Gamma, B and M for a projector set; fails if B is singular."""
    norms = np.linalg.norm(ps.kets, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-12:
        raise ValueError("projector kets must be normalized")
    gammas = np.array([np.kron(a, b) for a in _PAULIS for b in _PAULIS])
    b = np.einsum("ia,nab,ib->in", ps.kets.conj(), gammas, ps.kets)
    if np.max(np.abs(b.imag)) > 1e-12:
        raise TomographyError("overlap matrix B has non-real entries")
    b = b.real.copy()
    cond = float(np.linalg.cond(b))
    if not np.isfinite(cond) or cond > 1e12:
        raise TomographyError(
            f"projector set not tomographically complete (cond(B) = {cond:.3g})")
    b_inv = np.linalg.inv(b)
    m = np.einsum("in,iab->nab", b_inv, gammas)
    m_traces = np.einsum("naa->n", m).real
    return ReconstructionBasis(
        projectors=ps, gammas=gammas, b=b, b_inv=b_inv, m=m,
        m_traces=m_traces, condition_number=cond,
    )


@lru_cache(maxsize=1)
def default_basis() -> ReconstructionBasis:
    return build_basis(default_projector_set())


def reconstruct(counts, basis: ReconstructionBasis | None = None) -> np.ndarray:
    """Linear-inversion estimate of the two-photon density matrix.

    Accepts a CoincidenceVector or a plain 16-vector.  The result has
    unit trace by construction; it is Hermitian to rounding but not
    necessarily positive, see project_physical.
    """
    if basis is None:
        basis = default_basis()
    n = counts.n if isinstance(counts, CoincidenceVector) else np.asarray(counts, dtype=float)
    if n.shape != (16,):
        raise ValueError(f"expected 16 counts, got shape {n.shape}")
    k = float(basis.m_traces @ n)
    scale = float(np.abs(basis.m_traces) @ np.abs(n))
    if scale == 0.0 or abs(k) < 1e-12 * scale:
        raise TomographyError("degenerate counts (k = 0)")
    return np.einsum("n,nab->ab", n, basis.m) / k


def project_physical(rho: np.ndarray) -> np.ndarray:
    """Nearest unit-trace positive-semidefinite matrix in Frobenius norm.

    Diagonalizes the (hermitized) input and projects the spectrum onto
    the probability simplex, which redistributes clipped negative weight
    over the remaining eigenvalues.  Idempotent.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if abs(rho.trace() - 1.0) > 1e-8:
        raise ValueError(f"trace deviates from 1 by {abs(rho.trace() - 1.0):.3e}")
    herm = 0.5 * (rho + rho.conj().T)
    lam, vec = np.linalg.eigh(herm)
    mu = _simplex_projection(lam)
    return (vec * mu) @ vec.conj().T


def _simplex_projection(lam: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto {mu >= 0, sum mu = 1}."""
    desc = np.sort(lam)[::-1]
    csum = np.cumsum(desc)
    k = np.arange(1, lam.size + 1)
    shifted = desc + (1.0 - csum) / k
    rho_idx = int(np.nonzero(shifted > 0)[0][-1])
    theta = (1.0 - csum[rho_idx]) / (rho_idx + 1)
    return np.maximum(lam + theta, 0.0)


def _sqrt_psd(rho: np.ndarray, neg_tol: float = 1e-10) -> np.ndarray:
    """Hermitian square root with an eigenvalue clamp at zero.

    Eigenvalues in [-neg_tol, 0) are treated as numerical noise; larger
    negativity is an error rather than masked.
    """
    lam, vec = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if lam.min() < -neg_tol:
        raise ValueError(
            f"non-PSD input beyond tolerance: min eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def fidelity_mixed(a: np.ndarray, b: np.ndarray) -> float:
    """Mixed-state fidelity tr sqrt(sqrt(a) b sqrt(a)), in [0, 1]."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    root_a = _sqrt_psd(a)
    inner = root_a @ b @ root_a
    lam = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    if lam.min() < -1e-10:
        raise ValueError(
            f"non-PSD input beyond tolerance: min eigenvalue {lam.min():.3e}")
    value = float(np.sum(np.sqrt(np.clip(lam, 0.0, None))))
    return min(value, 1.0)


def bell_state(phase: float = 0.0) -> np.ndarray:
    """Target ket (|ee> + exp(i*phase)|ll>)/sqrt(2)."""
    ket = np.zeros(4, dtype=complex)
    ket[0] = 1.0
    ket[3] = np.exp(1j * phase)
    return ket / np.sqrt(2.0)


def fidelity_bell(rho: np.ndarray, phase: float = 0.0) -> float:
    """sqrt(|<Phi|rho|Phi>|) against the phase-parametrized Bell target."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 two-photon state, got shape {rho.shape}")
    ket = bell_state(phase)
    overlap = ket.conj() @ rho @ ket
    return min(float(np.sqrt(abs(overlap))), 1.0)


def density_matrix_to_dict(rho: np.ndarray) -> dict:
    rho = np.asarray(rho, dtype=complex)
    return {
        "dim": rho.shape[0],
        "re": rho.real.tolist(),
        "im": rho.imag.tolist(),
    }


def density_matrix_from_dict(d: dict) -> np.ndarray:
    missing = {"dim", "re", "im"} - set(d)
    if missing:
        raise ValueError(f"matrix document missing field(s): {sorted(missing)}")
    dim = int(d["dim"])
    re = np.asarray(d["re"], dtype=float)
    im = np.asarray(d["im"], dtype=float)
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise ValueError(
            f"matrix blocks must be {dim}x{dim}, got {re.shape} and {im.shape}")
    return re + 1j * im


def save_density_matrix(rho: np.ndarray, path, extra: dict | None = None) -> None:
    doc = density_matrix_to_dict(rho)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_density_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return density_matrix_from_dict(json.load(fh))
