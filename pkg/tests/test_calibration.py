import numpy as np
import pytest

from qdcascade.calibration import (
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
from qdcascade.model import ModelParams


def decay_series(rate, n=50, t_max=1500.0, amp=4000.0, offset=50.0):
    t = np.linspace(0.0, t_max, n)
    return np.column_stack([t, amp * np.exp(-rate * t) + offset])


class TestFitDecay:
    def test_noiseless_exact(self):
        rate = 1 / 458
        assert fit_decay(decay_series(rate)) == pytest.approx(rate, rel=1e-6)

    def test_biexciton_rate_with_noise(self):
        rng = np.random.default_rng(7)
        s = decay_series(1 / 458, offset=0.0)
        s[:, 1] = np.abs(s[:, 1] * (1 + 0.01 * rng.standard_normal(s.shape[0])))
        assert fit_decay(s) == pytest.approx(1 / 458, rel=0.02)

    def test_exciton_rate_with_noise(self):
        rng = np.random.default_rng(6)
        s = decay_series(1 / 1241, t_max=4000.0, offset=0.0)
        s[:, 1] = np.abs(s[:, 1] * (1 + 0.01 * rng.standard_normal(s.shape[0])))
        assert fit_decay(s) == pytest.approx(1 / 1241, rel=0.02)

    def test_offset_free_series(self):
        rate = 1 / 700
        assert fit_decay(decay_series(rate, offset=0.0)) == pytest.approx(
            rate, rel=1e-6)

    def test_constant_series_rejected(self):
        t = np.linspace(0, 100, 20)
        with pytest.raises(CalibrationError, match="non-decaying"):
            fit_decay(np.column_stack([t, np.full(20, 55.0)]))

    def test_growing_series_rejected(self):
        t = np.linspace(0, 100, 20)
        with pytest.raises(CalibrationError, match="non-decaying"):
            fit_decay(np.column_stack([t, np.exp(t / 50)]))

    def test_too_few_points(self):
        with pytest.raises(CalibrationError, match="insufficient"):
            fit_decay(decay_series(1 / 458, n=4))

    def test_nonpositive_counts_rejected(self):
        s = decay_series(1 / 458, offset=0.0)
        s[-1, 1] = 0.0
        with pytest.raises(ValueError):
            fit_decay(s)

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            fit_decay(np.ones((10, 3)))


class TestDecaySeriesCSV:
    def test_roundtrip(self, tmp_path):
        s = decay_series(1 / 458, n=12)
        path = tmp_path / "decay.csv"
        write_decay_series(s, path, header_lines=["unit: counts"])
        out = read_decay_series(path)
        np.testing.assert_array_equal(out, s)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,value\n0,1\n")
        with pytest.raises(ValueError, match="header"):
            read_decay_series(path)

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,counts\n0.0,1.0\n1.0,oops\n")
        with pytest.raises(ValueError, match="row 3"):
            read_decay_series(path)


class TestScaleCounts:
    def test_reference_arithmetic(self):
        # 4.08e4 * 0.075 + 1.5e3 = 4560 for the biexciton channel
        p = ModelParams()
        counts_b, counts_x = scale_counts(0.0, 0.075, p)
        assert counts_b == pytest.approx(4560.0)
        assert counts_x == pytest.approx(1.5e3)

    def test_zero_probability_gives_offsets(self):
        p = ModelParams(k_c_off_b=77.0, k_c_off_x=33.0)
        assert scale_counts(0.0, 0.0, p) == (77.0, 33.0)


class TestPredict:
    def test_fast_matches_standard(self):
        p = ModelParams()
        power = 0.05**2 * p.tau / p.k_p_scale
        std = predict_probs(p, power, rtol=1e-8)
        fast = predict_probs(p, power, rtol=1e-8, fast=True)
        assert fast[0] == pytest.approx(std[0], abs=1e-9)
        assert fast[1] == pytest.approx(std[1], abs=1e-9)

    def test_zero_power_counts_are_offsets(self):
        p = ModelParams(t_total=1000.0)
        counts_b, counts_x = predict_counts(p, 0.0, fast=True)
        assert counts_b == pytest.approx(p.k_c_off_b, abs=1e-6)
        assert counts_x == pytest.approx(p.k_c_off_x, abs=1e-6)

    def test_power_maps_through_omega0(self):
        p = ModelParams()
        power = 0.12**2 * p.tau / p.k_p_scale
        direct = predict_probs(p.replace(omega0=0.12), 0.0, fast=True) \
            if p.k_p_off else None
        probs = predict_probs(p, power, fast=True)
        assert probs[1] > 0.1  # moderate drive excites the upper level
        if direct is not None:
            assert probs == pytest.approx(direct)


class TestRabiDataset:
    def make(self, n=5):
        powers = np.linspace(1e-8, 5e-7, n)
        return RabiDataset(powers=powers, counts_b=np.ones(n) * 10,
                           counts_x=np.ones(n) * 20, tau=85.0)

    def test_valid(self):
        d = self.make()
        assert d.powers.size == 5

    def test_non_increasing_powers_rejected(self):
        with pytest.raises(ValueError, match="increasing"):
            RabiDataset(powers=np.array([1e-7, 1e-7, 2e-7]),
                        counts_b=np.ones(3), counts_x=np.ones(3), tau=85.0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            RabiDataset(powers=np.array([1e-8, 2e-8]),
                        counts_b=np.array([1.0, -2.0]),
                        counts_x=np.ones(2), tau=85.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            RabiDataset(powers=np.array([1e-8, 2e-8]), counts_b=np.ones(3),
                        counts_x=np.ones(2), tau=85.0)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            RabiDataset(powers=np.array([1e-8]), counts_b=np.ones(1),
                        counts_x=np.ones(1), tau=0.0)

    def test_csv_roundtrip(self, tmp_path):
        d = self.make()
        path = tmp_path / "rabi.csv"
        d.to_csv(path)
        e = RabiDataset.from_csv(path)
        np.testing.assert_array_equal(d.powers, e.powers)
        np.testing.assert_array_equal(d.counts_b, e.counts_b)
        np.testing.assert_array_equal(d.counts_x, e.counts_x)
        assert e.tau == d.tau
        assert e.power_unit == d.power_unit

    def test_csv_missing_tau_rejected(self, tmp_path):
        path = tmp_path / "rabi.csv"
        path.write_text("power,counts_b,counts_x\n1e-8,1.0,2.0\n")
        with pytest.raises(ValueError, match="tau"):
            RabiDataset.from_csv(path)


def synthetic_dataset(truth: ModelParams, omega0s) -> RabiDataset:
    powers = np.asarray(omega0s) ** 2 * truth.tau / truth.k_p_scale
    pred = np.array([predict_counts(truth, pw, rtol=1e-7, fast=True)
                     for pw in powers])
    return RabiDataset(powers=powers, counts_b=pred[:, 0], counts_x=pred[:, 1],
                       tau=truth.tau)


class TestFitRabi:
    def test_empty_free_rejected(self):
        d = TestRabiDataset().make()
        with pytest.raises(ValueError, match="free"):
            fit_rabi(d, ModelParams(), {})

    def test_unknown_name_rejected(self):
        d = TestRabiDataset().make()
        with pytest.raises(ValueError, match="unknown"):
            fit_rabi(d, ModelParams(), {"nope": (0.0, 1.0)})

    def test_bad_bounds_rejected(self):
        d = TestRabiDataset().make()
        with pytest.raises(ValueError, match="bounds"):
            fit_rabi(d, ModelParams(), {"gamma_xg_i0": (1.0, 0.5)})
        with pytest.raises(ValueError, match="bounds"):
            fit_rabi(d, ModelParams(), {"gamma_xg_i0": (0.0, np.inf)})

    def test_recovers_single_rate_and_scales(self):
        base = ModelParams()
        truth = base.replace(gamma_xg_i0=0.80, k_c_scale_b=4.3e4,
                             k_c_scale_x=3.7e4)
        data = synthetic_dataset(truth, [0.06, 0.12, 0.18, 0.24])
        free = {"gamma_xg_i0": (0.3, 1.5),
                "k_c_scale_b": (2e4, 8e4),
                "k_c_scale_x": (2e4, 8e4)}
        rep = fit_rabi(data, base, free, seed=3, n_init=8, max_evals=60,
                       rtol=1e-7, workers=1)
        assert rep.status == "ok"
        assert rep.params.gamma_xg_i0 == pytest.approx(0.80, rel=0.02)
        assert rep.params.k_c_scale_b == pytest.approx(4.3e4, rel=0.02)
        assert rep.params.k_c_scale_x == pytest.approx(3.7e4, rel=0.02)
        assert rep.params.tau == data.tau

    def test_deterministic_given_seed(self):
        base = ModelParams()
        truth = base.replace(gamma_xg_i0=0.75)
        data = synthetic_dataset(truth, [0.08, 0.16, 0.24])
        free = {"gamma_xg_i0": (0.3, 1.5)}
        rep1 = fit_rabi(data, base, free, seed=9, n_init=4, max_evals=12,
                        rtol=1e-6, workers=1)
        rep2 = fit_rabi(data, base, free, seed=9, n_init=4, max_evals=12,
                        rtol=1e-6, workers=1)
        assert rep1.params == rep2.params
        assert rep1.residual == rep2.residual
        assert rep1.evaluations == rep2.evaluations

    def test_evaluation_accounting(self):
        base = ModelParams()
        truth = base.replace(gamma_xg_i0=0.75)
        data = synthetic_dataset(truth, [0.08, 0.16, 0.24])
        rep = fit_rabi(data, base, {"gamma_xg_i0": (0.3, 1.5)}, seed=2,
                       n_init=4, max_evals=10, rtol=1e-6, workers=1)
        assert rep.candidates <= 10
        assert rep.evaluations == rep.candidates * data.powers.size

    def test_starts_from_base_guess(self):
        # base equal to truth: the first candidate is already optimal
        base = ModelParams()
        data = synthetic_dataset(base, [0.08, 0.20])
        rep = fit_rabi(data, base, {"gamma_xg_i0": (0.3, 1.5)}, seed=1,
                       n_init=2, max_evals=6, rtol=1e-7, workers=1)
        assert rep.residual < 1e-10
        assert rep.params.gamma_xg_i0 == pytest.approx(base.gamma_xg_i0,
                                                       rel=1e-3)

    def test_report_serialization(self, tmp_path):
        base = ModelParams()
        data = synthetic_dataset(base, [0.08, 0.20])
        rep = fit_rabi(data, base, {"gamma_xg_i0": (0.3, 1.5)}, seed=1,
                       n_init=2, max_evals=4, rtol=1e-6, workers=1)
        path = tmp_path / "fit.json"
        rep.to_json(path, extra={"tag": "unit"})
        import json
        doc = json.loads(path.read_text())
        assert doc["seed"] == 1
        assert doc["status"] in ("ok", "budget_exhausted")
        assert doc["free_names"] == ["gamma_xg_i0"]
        assert doc["bounds"]["gamma_xg_i0"] == [0.3, 1.5]
        assert isinstance(rep, FitReport)
