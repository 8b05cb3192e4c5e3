import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlink.errors import DomainError
from qlink.forecast import (
    CSV_COLUMNS,
    EfficiencyUpgrades,
    TrapModel,
    atom_atom_fidelity_at,
    atom_atom_rate_at,
    atom_atom_visibility,
    atom_photon_fidelity_at,
    current_trap,
    distance_grid,
    forecast_point,
    forecast_sweep,
    half_link_visibility_at,
    improved_trap,
    sweep_rows,
)
from qlink.linkmodel import DecoherenceParams, attempt_period
from qlink.presets import preset
from qlink.qcore import atom_atom_fidelity, fidelity_lower_bound

A = preset("A")
CUR = current_trap(A)
IMP = improved_trap(A)


class TestAtomPhoton:
    def test_reproduces_a_at_20_km(self):
        assert atom_photon_fidelity_at(20.0, CUR, A) == pytest.approx(0.785, abs=1e-3)

    def test_short_distance_plateau(self):
        assert atom_photon_fidelity_at(0.1, CUR, A) == pytest.approx(0.886, abs=2e-3)
        assert 0.87 < atom_photon_fidelity_at(0.0, CUR, A) < 0.91

    def test_anchor_points(self):
        assert atom_photon_fidelity_at(10.0, CUR, A) == pytest.approx(0.834, abs=2e-3)

    def test_asymptote(self):
        assert atom_photon_fidelity_at(1000.0, CUR, A) == pytest.approx(1 / 6, abs=1e-6)
        assert atom_photon_fidelity_at(1000.0, IMP, A) == pytest.approx(1 / 6, abs=1e-3)

    def test_monotone(self):
        d = np.linspace(0, 400, 401)
        for trap in (CUR, IMP):
            f = [atom_photon_fidelity_at(x, trap, A) for x in d]
            assert np.all(np.diff(f) <= 1e-12)

    def test_improved_better(self):
        for d in (1.0, 20.0, 100.0):
            assert atom_photon_fidelity_at(d, IMP, A) > atom_photon_fidelity_at(d, CUR, A)

    def test_negative_distance(self):
        with pytest.raises(DomainError):
            atom_photon_fidelity_at(-1.0, CUR, A)


class TestAtomAtom:
    def test_current_20_km(self):
        assert atom_atom_fidelity_at(20.0, CUR, A) == pytest.approx(0.65, abs=0.03)

    def test_improved_20_km(self):
        assert atom_atom_fidelity_at(20.0, IMP, A) == pytest.approx(0.81, abs=0.03)

    def test_improved_100_km(self):
        assert atom_atom_fidelity_at(100.0, IMP, A) > 0.80

    def test_formula(self):
        v = half_link_visibility_at(20.0, CUR, A)
        assert atom_atom_fidelity_at(20.0, CUR, A) == pytest.approx(1 / 9 + 8 / 9 * v * v * 0.94, abs=1e-12)
        assert atom_atom_fidelity(atom_atom_visibility(1.0, 1.0)) == pytest.approx(1.0)

    def test_contrast_domain(self):
        with pytest.raises(DomainError):
            atom_atom_visibility(0.9, 1.2)

    def test_monotone_and_bounded(self):
        d = np.geomspace(0.1, 1000, 200)
        for trap in (CUR, IMP):
            f = np.array([atom_atom_fidelity_at(x, trap, A) for x in d])
            assert np.all(np.diff(f) <= 1e-12)
            assert np.all(f >= 1 / 9 - 1e-12)
            assert f[-1] == pytest.approx(1 / 9, abs=1e-3)

    def test_below_atom_photon_same_distance(self):
        # within the plotted range no atom-atom curve rises above atom-photon
        # at the same total distance
        for d in np.geomspace(0.1, 100, 60):
            for trap in (CUR, IMP):
                assert atom_atom_fidelity_at(d, trap, A) <= atom_photon_fidelity_at(d, trap, A) + 1e-12

    def test_below_matched_half_link(self):
        # entanglement swapping cannot improve on the arm it is built from
        for d in np.geomspace(0.1, 1000, 80):
            for trap in (CUR, IMP):
                v = half_link_visibility_at(d, trap, A)
                if v >= 0.5:
                    assert atom_atom_fidelity_at(d, trap, A) <= fidelity_lower_bound(v) + 1e-12


class TestRate:
    def test_20_km_with_upgrades(self):
        r = atom_atom_rate_at(20.0, CUR, A)
        assert 0.5 <= r <= 2.0
        assert r == pytest.approx(0.753, abs=0.01)

    def test_without_upgrades_slower(self):
        plain = TrapModel("current", A.decoherence, EfficiencyUpgrades(None, False))
        assert atom_atom_rate_at(20.0, plain, A) < atom_atom_rate_at(20.0, CUR, A) / 10

    def test_decade_per_attenuation_length(self):
        # once search time dominates, a decade of rate per 10/att km beyond
        # the growth of the attempt period
        step = 10 / A.fiber.attenuation_db_per_km
        d = 300.0
        r1, r2 = atom_atom_rate_at(d, CUR, A), atom_atom_rate_at(d + step, CUR, A)
        periods = attempt_period(A.with_fiber_length(d + step)) / attempt_period(A.with_fiber_length(d))
        assert r1 / r2 / periods == pytest.approx(10.0, rel=1e-3)

    def test_monotone(self):
        r = [atom_atom_rate_at(d, CUR, A) for d in np.linspace(0, 300, 61)]
        assert np.all(np.diff(r) < 0)


class TestSweep:
    def test_grid(self):
        g = distance_grid(0.1, 200, 50)
        assert len(g) == 50 and g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(200)
        for bad in ((0, 10, 5), (10, 1, 5), (1, 10, 1)):
            with pytest.raises(DomainError):
                distance_grid(*bad)

    def test_rows(self):
        pts = forecast_sweep(1, 100, 5, [CUR, IMP], A)
        rows = sweep_rows(pts)
        assert len(rows) == 5 and len(rows[0]) == len(CSV_COLUMNS)
        p = forecast_point(rows[0][0], IMP, A)
        assert rows[0][4] == pytest.approx(p.f_atom_atom)
        with pytest.raises(DomainError):
            sweep_rows(forecast_sweep(1, 100, 5, [CUR], A))

    def test_improved_trap_params(self):
        assert IMP.decoherence.dephasing_time_sensitive_s == pytest.approx(100 * A.decoherence.dephasing_time_sensitive_s)
        assert IMP.decoherence.dephasing_time_insensitive_s >= IMP.decoherence.dephasing_time_sensitive_s
        with pytest.raises(DomainError):
            improved_trap(A, 0.5)
        with pytest.raises(DomainError):
            TrapModel("x", DecoherenceParams())


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0))
def test_fidelity_monotone_property(d1, d2):
    lo, hi = sorted((d1, d2))
    for trap in (CUR, IMP):
        assert atom_photon_fidelity_at(hi, trap, A) <= atom_photon_fidelity_at(lo, trap, A) + 1e-12
        assert atom_atom_fidelity_at(hi, trap, A) <= atom_atom_fidelity_at(lo, trap, A) + 1e-12
