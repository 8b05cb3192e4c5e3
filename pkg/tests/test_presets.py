import pytest
from numpy.testing import assert_allclose

from qlink.errors import DomainError
from qlink.linkmodel import (
    config_loss_budget,
    measured_visibilities,
    readout_delay,
    snr_model,
)
from qlink.presets import (
    CONFIG_LABELS,
    REFERENCE_RESULTS,
    REFERENCE_VISIBILITIES_A,
    drift_penalty,
    ideal_config,
    preset,
    reference_decoherence,
    uncalibrated_config,
)
from qlink.qcore import average_visibility


class TestPresets:
    @pytest.mark.parametrize("label", CONFIG_LABELS)
    def test_calibrated(self, label):
        cfg = preset(label)
        assert cfg.decoherence.calibrated
        assert 0 < cfg.decoherence.drift_penalty <= 1

    def test_a_reproduces_fringe_visibilities(self):
        assert_allclose(measured_visibilities(preset("A")), REFERENCE_VISIBILITIES_A, atol=1e-9)

    def test_a_budget_anchors(self):
        b = config_loss_budget(preset("A"))
        assert b["readout"] == pytest.approx(3.0, abs=1e-6)
        assert b["decoherence"] == pytest.approx(11.0, abs=1e-6)

    @pytest.mark.parametrize("label", ["A", "B", "D"])
    def test_mean_visibility_matches(self, label):
        v = average_visibility(*measured_visibilities(preset(label)))
        assert v == pytest.approx(REFERENCE_RESULTS[label].v_bar, abs=1e-6)

    def test_c_shortfall(self):
        # C's measured mean exceeds the drift-free model; the penalty is capped at 1
        assert drift_penalty("C") == 1.0
        v = average_visibility(*measured_visibilities(preset("C")))
        assert REFERENCE_RESULTS["C"].v_bar - 0.02 < v < REFERENCE_RESULTS["C"].v_bar

    def test_fit_values(self):
        d = reference_decoherence()
        assert d.dephasing_time_sensitive_s == pytest.approx(534.7e-6, rel=1e-3)
        assert d.dephasing_time_insensitive_s == 50e-3
        assert all(0.9 < v <= 1 for v in d.v0_per_state)

    def test_geometry(self):
        assert preset("B").fiber.length_km == 10.0
        assert readout_delay(preset("B")) < readout_delay(preset("A"))
        assert not preset("D").qfc.enabled

    def test_d_snr(self):
        assert snr_model(preset("D")) == pytest.approx(934.2, rel=1e-9)

    def test_snr_a_b_c(self):
        for label, ref in (("A", 23.7), ("B", 24.9), ("C", 25.7)):
            assert snr_model(preset(label)) == pytest.approx(ref, abs=0.05)

    def test_unknown_label(self):
        with pytest.raises(DomainError):
            uncalibrated_config("E")

    def test_ideal(self):
        v = measured_visibilities(ideal_config())
        assert_allclose(v, 1.0, atol=1e-6)
