import numpy as np
import pytest

from qdcascade.emission import (
    ETA_NAMES,
    PROJECTOR_LABELS,
    CoincidenceVector,
    coincidence_counts,
    emission_probabilities,
    eta,
    eta_from_elements,
)
from qdcascade.lindblad import evolve
from qdcascade.model import B, DIM, G, X, ModelParams


def state_with(rho_gg, rho_xx, rho_bb, rho_bg=0.0, rho_bx=0.0, rho_xg=0.0):
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[G, G] = rho_gg
    rho[X, X] = rho_xx
    rho[B, B] = rho_bb
    rho[DIM - 1, DIM - 1] = 1.0 - rho_gg - rho_xx - rho_bb
    rho[B, G] = rho_bg
    rho[G, B] = np.conj(rho_bg)
    rho[B, X] = rho_bx
    rho[X, B] = np.conj(rho_bx)
    rho[X, G] = rho_xg
    rho[G, X] = np.conj(rho_xg)
    return rho


class TestEtaFormulas:
    def test_hand_computed_values(self):
        rho_xx, rho_bb = 0.21, 0.34
        bg, bx = 0.05 + 0.02j, 0.03 - 0.07j
        rho = state_with(0.3, rho_xx, rho_bb, rho_bg=bg, rho_bx=bx)
        c = rho_bb * (1 + rho_xx) + rho_xx * rho_bb
        assert eta(1, rho) == pytest.approx(c / 2 + abs(bx) ** 2 + abs(bg) ** 2 / 2)
        assert eta(2, rho) == pytest.approx(c / 2 + abs(bx) ** 2)
        assert eta(5, rho) == pytest.approx(c / 2)
        assert eta(6, rho) == pytest.approx(c / 2 - abs(bg) ** 2 / 2)
        assert eta(11, rho) == pytest.approx(rho_bb)
        assert eta(12, rho) == pytest.approx(2 * rho_xx * rho_bb)

    def test_symmetry_groups_bit_identical(self, rng, make_state):
        # same-basis and cross-basis classes share one formula each
        for _ in range(25):
            rho = make_state(rng, dim=DIM)
            e = eta_from_elements(rho[X, X].real, rho[B, B].real,
                                  abs(rho[B, G]) ** 2, abs(rho[B, X]) ** 2)
            assert e[1] == e[2] == e[3]
            cross = e[[4, 6, 7, 8, 9, 12, 13]]
            assert np.all(cross == cross[0])
            assert e[10] == e[15]
            assert e[11] == e[14]

    def test_vanishing_ground_coherence_merges_first_row(self):
        rho = state_with(0.4, 0.2, 0.3, rho_bg=0.0, rho_bx=0.1j)
        e = eta_from_elements(rho[X, X].real, rho[B, B].real, 0.0,
                              abs(rho[B, X]) ** 2)
        assert e[0] == e[1] == e[2] == e[3]

    def test_nonnegative_on_physical_states(self, rng, make_state):
        for _ in range(100):
            rho = make_state(rng, dim=DIM)
            e = eta_from_elements(rho[X, X].real, rho[B, B].real,
                                  abs(rho[B, G]) ** 2, abs(rho[B, X]) ** 2)
            assert np.all(e >= 0.0)

    def test_index_validation(self):
        rho = state_with(0.5, 0.2, 0.2)
        with pytest.raises(ValueError):
            eta(0, rho)
        with pytest.raises(ValueError):
            eta(17, rho)
        with pytest.raises(ValueError):
            eta(1, np.eye(4))

    def test_label_table(self):
        assert len(PROJECTOR_LABELS) == 16
        assert PROJECTOR_LABELS[0] == ("+", "+")
        assert PROJECTOR_LABELS[5] == ("R", "R")
        assert PROJECTOR_LABELS[10] == ("e", "e")
        assert PROJECTOR_LABELS[15] == ("l", "l")
        # row-major: first factor advances every four entries
        assert [lbl[0] for lbl in PROJECTOR_LABELS[:4]] == ["+"] * 4
        assert [lbl[1] for lbl in PROJECTOR_LABELS[::4]] == ["+"] * 4


class TestCoincidenceVector:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            CoincidenceVector(n=np.full(16, -1.0))

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            CoincidenceVector(n=np.ones(15))

    def test_total(self):
        v = CoincidenceVector(n=np.arange(16.0))
        assert v.total() == pytest.approx(np.arange(16.0).sum())

    def test_csv_roundtrip_identity(self, tmp_path, rng):
        v = CoincidenceVector(n=rng.random(16) * 1e4)
        path = tmp_path / "counts.csv"
        v.to_csv(path, header_lines=["meta: 1"])
        w = CoincidenceVector.from_csv(path)
        np.testing.assert_array_equal(v.n, w.n)

    def test_csv_schema_errors(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nu,biexciton_projector,exciton_projector,counts\n"
                        "1,+,+,10\n")
        with pytest.raises(ValueError, match="16"):
            CoincidenceVector.from_csv(path)
        path.write_text("wrong,header\n")
        with pytest.raises(ValueError, match="header"):
            CoincidenceVector.from_csv(path)

    def test_csv_bad_value_reports_row(self, tmp_path):
        v = CoincidenceVector(n=np.ones(16))
        path = tmp_path / "counts.csv"
        v.to_csv(path)
        text = path.read_text().replace("1.0", "oops", 1)
        path.write_text(text)
        with pytest.raises(ValueError, match="row"):
            CoincidenceVector.from_csv(path)


class TestEmissionProbabilities:
    @pytest.fixture(scope="class")
    @classmethod
    def traj(cls):
        return evolve(ModelParams(t_total=2500.0))

    def test_matches_rate_times_integral(self, traj):
        p = ModelParams(t_total=2500.0)
        p_x, p_b = emission_probabilities(traj, p)
        assert p_x == pytest.approx(p.gamma_x * traj.final("pop_x"))
        assert p_b == pytest.approx(p.gamma_b * traj.final("pop_b"))

    def test_in_range(self, traj):
        p_x, p_b = emission_probabilities(traj, ModelParams(t_total=2500.0))
        assert 0.0 <= p_b <= 1.0
        assert 0.0 <= p_x <= 1.0

    def test_truncated_horizon_rejected(self, traj):
        with pytest.raises(ValueError, match="horizon"):
            emission_probabilities(traj, ModelParams(t_total=7000.0))

    def test_counts_from_trajectory(self, traj):
        v = coincidence_counts(traj)
        assert isinstance(v, CoincidenceVector)
        assert v.total() > 0
        assert v.labels == PROJECTOR_LABELS

    def test_eta_names_align(self):
        assert ETA_NAMES[0] == "eta_1"
        assert ETA_NAMES[15] == "eta_16"
