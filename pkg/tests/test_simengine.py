import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from qlink.errors import DomainError
from qlink.linkmodel import detection_probability_any, mean_event_time
from qlink.presets import preset
from qlink.qcore import AtomReadoutSetting, Basis, atom_dark_marginal, werner_2x3
from qlink.simengine import (
    BASIS_CODES,
    DEFAULT_ANGLES,
    EventLog,
    RunConfig,
    _tables,
    expected_chsh,
    expected_dark_fractions,
    signal_fraction,
    signal_origin_probability,
    signal_state,
    simulate_run,
)

A = preset("A")


@pytest.fixture(scope="module")
def big_log():
    return simulate_run(RunConfig(A, target_events=200_000, seed=11), threads=4)


def columns_equal(a: EventLog, b: EventLog) -> bool:
    return all(np.array_equal(getattr(a, c), getattr(b, c)) for c in EventLog.COLUMNS)


class TestRunConfig:
    def test_exactly_one_target(self):
        with pytest.raises(DomainError):
            RunConfig(A, target_events=None)
        with pytest.raises(DomainError):
            RunConfig(A, target_events=10, target_duration_s=5.0)

    def test_validation(self):
        with pytest.raises(DomainError):
            RunConfig(A, target_events=0)
        with pytest.raises(DomainError):
            RunConfig(A, atom_angles=())
        with pytest.raises(DomainError):
            RunConfig(A, photon_bases=("RL",))
        with pytest.raises(DomainError):
            RunConfig(A, angle_weights=(1, 2))
        with pytest.raises(DomainError):
            RunConfig(A, seed=-1)

    def test_schedule(self):
        s = RunConfig(A).schedule()
        assert len(s) == 16
        assert s[:2] == [(Basis.HV, 0.0), (Basis.DA, 0.0)]
        w = RunConfig(A, atom_angles=(0.0, 45.0), angle_weights=(2, 1)).schedule()
        assert [a for _, a in w] == [0.0] * 4 + [45.0] * 2


class TestDeterminism:
    def test_threads(self):
        cfg = RunConfig(A, target_events=5000, seed=3, block_size=300)
        a = simulate_run(cfg, threads=1)
        b = simulate_run(cfg, threads=8)
        assert columns_equal(a, b)
        assert a.summary == b.summary

    def test_seed_changes_output(self):
        a = simulate_run(RunConfig(A, target_events=500, seed=1))
        b = simulate_run(RunConfig(A, target_events=500, seed=2))
        assert not columns_equal(a, b)

    def test_prefix_stable(self):
        # blocks depend only on (seed, block index)
        a = simulate_run(RunConfig(A, target_events=1000, seed=5, block_size=250))
        b = simulate_run(RunConfig(A, target_events=2000, seed=5, block_size=250))
        assert columns_equal(a, b.select(np.arange(len(b)) < 1000))


class TestEventStream:
    def test_counts_and_order(self):
        log = simulate_run(RunConfig(A, target_events=3000, seed=9, block_size=700))
        assert len(log) == 3000
        assert np.all(np.diff(log.sim_time) > 0)
        assert np.all(np.diff(log.attempt_index) > 0)
        assert log.summary["attempts"] == log.attempt_index[-1] + 1
        assert set(np.unique(log.detector)) <= {1, 2}
        assert np.array_equal(log.detector, log.photon_outcome + 1)
        assert np.allclose(log.readout_delay, 102e-6)
        assert set(np.unique(log.atom_alpha)) == set(DEFAULT_ANGLES)

    def test_round_robin_cells(self):
        log = simulate_run(RunConfig(A, target_events=32, seed=0))
        cells = list(zip(log.photon_basis, log.atom_alpha))
        assert cells[:16] == cells[16:]
        assert cells[0] == (0, 0.0) and cells[1] == (1, 0.0)

    def test_records_round_trip(self):
        log = simulate_run(RunConfig(A, target_events=50, seed=0))
        back = EventLog.from_records(list(log.records), log.header, log.summary)
        assert columns_equal(log, back)
        r = log.record(0)
        assert r.photon_basis in ("HV", "DA") and r.origin in ("signal", "qfc_noise", "dark_count")

    def test_header(self):
        log = simulate_run(RunConfig(A, configuration_label="A", target_events=10, seed=4))
        h = log.header
        assert h["seed"] == 4 and h["configuration_label"] == "A"
        assert h["detection_wavelength_nm"] == 1522
        d = simulate_run(RunConfig(preset("D"), target_events=10, seed=4)).header
        assert d["detection_wavelength_nm"] == 780


class TestStatistics:
    def test_event_rate(self, big_log):
        expected = 60 / mean_event_time(A)
        assert big_log.summary["event_rate_per_min"] == pytest.approx(expected, rel=0.01)

    def test_attempts_per_event(self, big_log):
        n = len(big_log)
        mean = big_log.summary["attempts"] / n
        p = float(detection_probability_any(A))
        se = math.sqrt(1 - p) / p / math.sqrt(n)
        assert abs(mean - 1 / p) < 5 * se

    def test_origin_fraction(self, big_log):
        n = len(big_log)
        w = signal_origin_probability(A)
        k = big_log.summary["origin_counts"]["signal"]
        assert abs(k / n - w) < 5 * math.sqrt(w * (1 - w) / n)
        qfc = big_log.summary["origin_counts"]["qfc_noise"]
        dark = big_log.summary["origin_counts"]["dark_count"]
        assert qfc / (qfc + dark) == pytest.approx(128 / 146, abs=0.03)

    def test_loading_cycles(self, big_log):
        n = len(big_log)
        assert abs(big_log.summary["loading_cycles"] / n - 0.5) < 5 * math.sqrt(0.25 / n)

    def test_cell_distributions(self, big_log):
        # chi-square of (photon outcome, atom outcome) counts in every cell
        # against the state-model probabilities mixed with the noise marginal
        cfg = RunConfig(A)
        tabs = _tables(cfg)
        w = signal_origin_probability(A)
        cells = cfg.schedule()
        chi2 = 0.0
        dof = 0
        for i, (basis, angle) in enumerate(cells):
            m = (big_log.photon_basis == BASIS_CODES.index(basis)) & (big_log.atom_alpha == angle)
            obs = np.bincount(2 * big_log.photon_outcome[m] + big_log.atom_outcome[m], minlength=4)
            nd = tabs.noise_dark[i]
            noise = 0.5 * np.array([nd, 1 - nd, nd, 1 - nd])
            exp = m.sum() * (w * tabs.joint[i] + (1 - w) * noise)
            chi2 += float(((obs - exp) ** 2 / exp).sum())
            dof += 3
        assert stats.chi2.sf(chi2, dof) > 1e-4

    def test_noise_atom_marginal(self, big_log):
        noise = big_log.origin != 0
        rho = signal_state(A)
        for angle in (0.0, 45.0, 90.0, 135.0):
            m = noise & (big_log.atom_alpha == angle)
            n = int(m.sum())
            p = atom_dark_marginal(rho, AtomReadoutSetting(angle))
            frac = np.count_nonzero(big_log.atom_outcome[m] == 0) / n
            assert abs(frac - p) < 5 * math.sqrt(p * (1 - p) / n)

    def test_noise_photon_unpolarized(self, big_log):
        noise = big_log.origin != 0
        n = int(noise.sum())
        first = np.count_nonzero(big_log.photon_outcome[noise] == 0) / n
        assert abs(first - 0.5) < 5 * math.sqrt(0.25 / n)

    def test_expected_fractions_match(self, big_log):
        exp = expected_dark_fractions(RunConfig(A))
        states = {"H": (0, 0), "V": (0, 1), "D": (1, 0), "A": (1, 1)}
        for state, (angles, p) in exp.items():
            b, o = states[state]
            for a, pa in zip(angles, p):
                m = (big_log.photon_basis == b) & (big_log.photon_outcome == o) & (big_log.atom_alpha == a)
                n = int(m.sum())
                frac = np.count_nonzero(big_log.atom_outcome[m] == 0) / n
                assert abs(frac - pa) < 5 * math.sqrt(pa * (1 - pa) / n)


class TestNoiseInvariant:
    def test_isotropic_noise_marginal_flat(self):
        # with equal per-outcome visibilities the state's atom marginal is flat
        dec = replace(A.decoherence, v0_per_state=(0.9,) * 4,
                      dephasing_time_insensitive_s=A.decoherence.dephasing_time_sensitive_s)
        link = replace(A, decoherence=dec)
        log = simulate_run(RunConfig(link, target_events=200_000, seed=21))
        noise = log.origin != 0
        n = int(noise.sum())
        frac = np.count_nonzero(log.atom_outcome[noise] == 0) / n
        assert abs(frac - 0.5) < 5 * math.sqrt(0.25 / n)

    def test_werner_marginal(self):
        rho = werner_2x3(0.7)
        for a in DEFAULT_ANGLES:
            assert atom_dark_marginal(rho, AtomReadoutSetting(a)) == pytest.approx(0.7 / 2 + 0.3 / 3, abs=1e-12)


class TestTermination:
    def test_duration_target(self):
        log = simulate_run(RunConfig(A, target_events=None, target_duration_s=600.0, seed=2))
        assert log.summary["simulated_duration_s"] == 600.0
        assert not log.summary["truncated"]
        assert np.all(log.sim_time < 600.0)
        assert log.summary["events"] == len(log)
        assert 200 < len(log) < 450

    def test_truncation(self):
        log = simulate_run(RunConfig(A, target_events=100_000, max_duration_s=300.0, seed=2))
        assert log.summary["truncated"]
        assert len(log) < 100_000
        assert log.summary["simulated_duration_s"] == 300.0

    def test_noise_free_link(self):
        link = replace(A, qfc=replace(A.qfc, alpha_asr_cps_per_w_m=0.0),
                       detectors=replace(A.detectors, dark_rate_cps=0.0))
        log = simulate_run(RunConfig(link, target_events=500, seed=0))
        assert np.all(log.origin == 0)
        assert signal_fraction(log) == math.inf
        assert signal_origin_probability(link) == 1.0

    def test_signal_fraction_empty(self):
        log = simulate_run(RunConfig(A, target_events=10, seed=0)).select(np.zeros(10, dtype=bool))
        with pytest.raises(DomainError):
            signal_fraction(log)


class TestOracles:
    def test_expected_chsh(self):
        assert expected_chsh(A) == pytest.approx(2.1434, abs=1e-3)

    def test_signal_probability(self):
        assert signal_origin_probability(A) == pytest.approx(0.9595, abs=1e-3)

    def test_expected_mean_visibility(self):
        # sinusoid contrast of the exact dark fractions
        exp = expected_dark_fractions(RunConfig(A))
        vis = {}
        for state, (angles, p) in exp.items():
            c = np.fft.rfft(p) / len(p)
            vis[state] = 2 * abs(c[1]) / c[0].real
        v_bar = ((vis["H"] + vis["V"]) / 2 + vis["D"] + vis["A"]) / 3
        assert v_bar == pytest.approx(0.742, abs=0.003)
