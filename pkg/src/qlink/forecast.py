"""Deterministic distance forecasts of atom-photon and atom-atom fidelity
and of the atom-atom event rate.

Atom-photon at distance ``d``: the measured link stretched to ``d`` km, with
today's detectors and switch unless the trap is flagged as future hardware
(``upgraded_atom_photon``). Decoherence acts over latency(d) plus
processing time, the signal is attenuated while the noise at the detectors
changes only through its own fiber loss, and the drift penalty stays.

Atom-atom at distance ``d``: two atom-photon links of ``d/2`` meeting at a
middle station. Photon loss and SNR are those of a ``d/2`` link, but the
atoms must wait for the heralding signal to come back, so the readout
delay equals that of a single ``d``-km link. The visibility is the squared
atom-photon visibility times the two-photon interference contrast. Drift
is not carried over since it is a property of the current setup, not of
the architecture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DomainError
from .linkmodel import (
    DecoherenceParams,
    LinkConfig,
    decohered_visibilities,
    effective_visibility,
    excitation_rate,
    link_latency,
    overall_detection_probability,
    snr_model,
)
from .qcore import atom_atom_fidelity, average_visibility, fidelity_lower_bound

TWO_PHOTON_CONTRAST = 0.94
BSM_SUCCESS = 0.5
IMPROVED_SUPPRESSION = 100.0
CSV_COLUMNS = ("distance_km", "f_ap_current", "f_ap_improved", "f_aa_current", "f_aa_improved", "rate_aa_per_min")


@dataclass(frozen=True)
class EfficiencyUpgrades:
    detector_efficiency: float | None = 0.85
    no_mems_switch: bool = True

    def apply(self, config: LinkConfig) -> LinkConfig:
        out = config
        if self.detector_efficiency is not None:
            e = self.detector_efficiency
            out = replace(out, detectors=replace(out.detectors, efficiency_1=e, efficiency_2=e))
        if self.no_mems_switch:
            out = replace(out, switch_transmission=1.0)
        return out


@dataclass(frozen=True)
class TrapModel:
    label: str
    decoherence: DecoherenceParams
    efficiency_upgrades: EfficiencyUpgrades = field(default_factory=EfficiencyUpgrades)
    link_drift_penalty: float = 1.0
    upgraded_atom_photon: bool = False

    def __post_init__(self):
        if not self.decoherence.calibrated:
            raise DomainError("trap model needs calibrated decoherence parameters")
        if not 0.0 < self.link_drift_penalty <= 1.0:
            raise DomainError("link_drift_penalty outside (0, 1]")


def current_trap(config: LinkConfig) -> TrapModel:
    return TrapModel("current", config.decoherence)


def improved_trap(config: LinkConfig, suppression: float = IMPROVED_SUPPRESSION) -> TrapModel:
    """Trap with the position-dependent dephasing rate divided by ``suppression``.

    The insensitive time is raised to the new sensitive time if needed so the
    model keeps its ordering.
    """
    if suppression < 1.0:
        raise DomainError("suppression factor must be >= 1")
    dec = config.decoherence
    ts = dec.dephasing_time_sensitive_s * suppression
    ti = max(dec.dephasing_time_insensitive_s, ts)
    return TrapModel("improved", replace(dec, dephasing_time_sensitive_s=ts, dephasing_time_insensitive_s=ti),
                     upgraded_atom_photon=True)


@dataclass(frozen=True)
class ForecastPoint:
    distance_km: float
    trap: str
    f_atom_photon: float
    f_atom_atom: float
    rate_atom_atom: float  # per minute


def _check_distance(d: float) -> float:
    d = float(d)
    if d < 0 or math.isnan(d):
        raise DomainError("distance must be non-negative")
    return d


def _base(config: LinkConfig) -> LinkConfig:
    # forecasts use the plain link: no applied extra readout delay
    return replace(config, timing=replace(config.timing, readout_extra_delay_s=0.0))


def _vbar(dec: DecoherenceParams, delay: float, snr: float) -> float:
    vis = [effective_visibility(v, snr) if snr > 0 else 0.0 for v in decohered_visibilities(dec, delay)]
    return average_visibility(*vis)


def atom_photon_visibility_at(d: float, trap: TrapModel, config: LinkConfig) -> float:
    d = _check_distance(d)
    cfg = _base(config)
    if trap.upgraded_atom_photon:
        cfg = trap.efficiency_upgrades.apply(cfg)
    cfg = cfg.with_fiber_length(d)
    delay = link_latency(cfg.fiber) + cfg.timing.processing_delay_s
    return _vbar(trap.decoherence, delay, snr_model(cfg))


def atom_photon_fidelity_at(d: float, trap: TrapModel, config: LinkConfig) -> float:
    return fidelity_lower_bound(atom_photon_visibility_at(d, trap, config))


def atom_atom_visibility(v_ap: float, contrast: float = TWO_PHOTON_CONTRAST) -> float:
    for name, v in (("v_ap", v_ap), ("contrast", contrast)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}={v} outside [0, 1]")
    return v_ap * v_ap * contrast


def _half_link(d: float, trap: TrapModel, config: LinkConfig) -> LinkConfig:
    return trap.efficiency_upgrades.apply(_base(config)).with_fiber_length(d / 2.0)


def half_link_visibility_at(d: float, trap: TrapModel, config: LinkConfig) -> float:
    """Atom-photon visibility of one ``d/2`` arm of a ``d``-km atom-atom link."""
    d = _check_distance(d)
    half = _half_link(d, trap, config)
    delay = link_latency(replace(half.fiber, length_km=d)) + half.timing.processing_delay_s
    dec = replace(trap.decoherence, drift_penalty=trap.link_drift_penalty)
    return _vbar(dec, delay, snr_model(half))


def atom_atom_fidelity_at(d: float, trap: TrapModel, config: LinkConfig,
                          contrast: float = TWO_PHOTON_CONTRAST) -> float:
    v_ap = half_link_visibility_at(d, trap, config)
    return atom_atom_fidelity(atom_atom_visibility(v_ap, contrast))


def atom_atom_rate_at(d: float, trap: TrapModel, config: LinkConfig) -> float:
    """Heralded atom-atom events per minute.

    Both nodes fire together and wait for the herald from the middle
    station, one full ``d``-km latency. Per event the nodes also lose the
    per-event overhead and reload when either atom is lost.
    """
    d = _check_distance(d)
    half = _half_link(d, trap, config)
    t = half.timing
    attempt_rate = excitation_rate(half.with_fiber_length(d))
    p = overall_detection_probability(half)
    p_event = BSM_SUCCESS * p * p
    if p_event == 0.0:
        return 0.0
    searching = 1.0 / (attempt_rate * p_event)
    per_event = searching + t.event_overhead_s + (1.0 - t.atom_survival ** 2) * t.loading_time_s
    return 60.0 / per_event


def forecast_point(d: float, trap: TrapModel, config: LinkConfig) -> ForecastPoint:
    return ForecastPoint(
        distance_km=float(d),
        trap=trap.label,
        f_atom_photon=atom_photon_fidelity_at(d, trap, config),
        f_atom_atom=atom_atom_fidelity_at(d, trap, config),
        rate_atom_atom=atom_atom_rate_at(d, trap, config),
    )


def distance_grid(d_min: float, d_max: float, n_points: int) -> np.ndarray:
    if not (0 < d_min < d_max) or n_points < 2:
        raise DomainError("need 0 < d_min < d_max and n_points >= 2")
    return np.geomspace(d_min, d_max, int(n_points))


def forecast_sweep(d_min: float, d_max: float, n_points: int, traps: Sequence[TrapModel],
                   config: LinkConfig) -> list[ForecastPoint]:
    """Points on a log-spaced grid for every trap, grouped by trap."""
    grid = distance_grid(d_min, d_max, n_points)
    return [forecast_point(d, trap, config) for trap in traps for d in grid]


def sweep_rows(points: Sequence[ForecastPoint]) -> list[tuple[float, ...]]:
    """Rows in ``CSV_COLUMNS`` order; needs points for 'current' and 'improved'."""
    by = {}
    for p in points:
        by.setdefault(p.distance_km, {})[p.trap] = p
    rows = []
    for d in sorted(by):
        cur, imp = by[d].get("current"), by[d].get("improved")
        if cur is None or imp is None:
            raise DomainError("sweep rows need both the current and the improved trap")
        rows.append((d, cur.f_atom_photon, imp.f_atom_photon, cur.f_atom_atom, imp.f_atom_atom,
                     cur.rate_atom_atom))
    return rows
