"""Reference measurement configurations A-D and their calibration.

A: 20 km, 1522 nm.  B: 10 km, 1522 nm.  C: 50 m, 1522 nm, 50 us extra
readout delay.  D: 5 m, 780 nm (no converter), 50 us extra delay.

Decoherence constants come from a six-equation solve on configuration A:
the four per-outcome visibilities and the readout (3) and decoherence (11)
items of its loss budget fix the base visibilities, the sensitive dephasing
time and A's drift penalty. The insensitive time is held at
``INSENSITIVE_DEPHASING_TIME_S``; the data carry almost no information on it.
Drift penalties of B-D are then set so each reproduces its mean visibility,
capped at 1 where the drift-free model already falls short (C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import fsolve

from .errors import CalibrationError, DomainError
from .linkmodel import (
    DecoherenceParams,
    DetectorParams,
    LinkConfig,
    decohered_visibilities,
    effective_visibility,
    loss_budget,
    overall_detection_probability,
    readout_delay,
    snr_model,
)
from .qcore import average_visibility

CONFIG_LABELS = ("A", "B", "C", "D")
INSENSITIVE_DEPHASING_TIME_S = 50e-3
DEPHASING_EXPONENT = 1.0
D_SNR = 934.2


@dataclass(frozen=True)
class ReferenceResult:
    fiber_km: float
    extra_delay_s: float
    converter: bool
    v_bar: float
    fidelity: float
    fidelity_se: float
    chsh: float
    chsh_se: float
    snr: float


REFERENCE_RESULTS = {
    "A": ReferenceResult(20.0, 0.0, True, 0.742, 0.785, 0.009, 2.12, 0.05, 25.1),
    "B": ReferenceResult(10.0, 0.0, True, 0.812, 0.843, 0.009, 2.37, 0.04, 23.2),
    "C": ReferenceResult(0.05, 50e-6, True, 0.856, 0.880, 0.008, 2.41, 0.03, 32.3),
    "D": ReferenceResult(0.005, 50e-6, False, 0.874, 0.897, 0.007, 2.49, 0.03, 934.2),
}
# fringe visibilities of A per photon outcome (H, V, D, A)
REFERENCE_VISIBILITIES_A = (0.734, 0.896, 0.725, 0.686)
REFERENCE_BUDGET_A = {"readout": 3.0, "decoherence": 11.0, "snr": 4.0, "drifts": 3.0}


def uncalibrated_config(label: str) -> LinkConfig:
    """Physical chain of one configuration with default (empty) decoherence."""
    try:
        ref = REFERENCE_RESULTS[label]
    except KeyError:
        raise DomainError(f"unknown configuration {label!r}; expected one of {CONFIG_LABELS}") from None
    cfg = LinkConfig()
    cfg = replace(
        cfg,
        fiber=replace(cfg.fiber, length_km=ref.fiber_km),
        timing=replace(cfg.timing, readout_extra_delay_s=ref.extra_delay_s),
    )
    if not ref.converter:
        det = DetectorParams(efficiency_1=0.55, efficiency_2=0.55)
        cfg = replace(cfg, qfc=replace(cfg.qfc, enabled=False), detectors=det)
        # dark rate fixed by the reported SNR of the unconverted path
        dark = overall_detection_probability(cfg) / (2.0 * det.window_s * D_SNR)
        cfg = replace(cfg, detectors=replace(det, dark_rate_cps=dark))
    return cfg


def _solve_reference_decoherence() -> DecoherenceParams:
    cfg = uncalibrated_config("A")
    delay = readout_delay(cfg)
    snr = snr_model(cfg)
    targets = np.array(REFERENCE_VISIBILITIES_A)

    def build(x) -> DecoherenceParams:
        vh, vv, vd, va, ts_us, drift = x
        return DecoherenceParams(
            v0_per_state=tuple(float(np.clip(v, 0.0, 1.0)) for v in (vh, vv, vd, va)),
            dephasing_time_sensitive_s=float(abs(ts_us)) * 1e-6,
            dephasing_time_insensitive_s=INSENSITIVE_DEPHASING_TIME_S,
            dephasing_exponent=DEPHASING_EXPONENT,
            drift_penalty=float(np.clip(drift, 0.0, 1.0)),
        )

    def residual(x):
        vh, vv, vd, va, ts_us, drift = x
        k = DEPHASING_EXPONENT
        ds = math.exp(-(delay / (abs(ts_us) * 1e-6)) ** k)
        di = math.exp(-(delay / INSENSITIVE_DEPHASING_TIME_S) ** k)
        s = snr / (snr + 1.0)
        model = np.array([vh * ds, vv * di, vd * ds, va * ds]) * drift * s
        b = loss_budget(build(x), delay, snr)
        return np.concatenate([model - targets, [(b["readout"] - 3.0) / 100, (b["decoherence"] - 11.0) / 100]])

    x0 = [0.97, 0.97, 0.95, 0.91, 500.0, 0.95]
    x, info, ier, msg = fsolve(residual, x0, full_output=True, xtol=1e-13)
    if ier != 1 or np.max(np.abs(residual(x))) > 1e-9:
        raise CalibrationError(f"decoherence calibration failed: {msg}")
    return build(x)


def _mean_visibility(cfg: LinkConfig, params: DecoherenceParams) -> float:
    snr = snr_model(cfg)
    vis = [effective_visibility(v, snr) for v in decohered_visibilities(params, readout_delay(cfg))]
    return average_visibility(*vis)


@lru_cache(maxsize=None)
def reference_decoherence() -> DecoherenceParams:
    """Calibrated decoherence parameters with configuration A's drift penalty."""
    return _solve_reference_decoherence()


@lru_cache(maxsize=None)
def drift_penalty(label: str) -> float:
    base = reference_decoherence()
    if label == "A":
        return base.drift_penalty
    cfg = uncalibrated_config(label)
    v = _mean_visibility(cfg, replace(base, drift_penalty=1.0))
    penalty = REFERENCE_RESULTS[label].v_bar / v
    if penalty <= 0.0:
        raise CalibrationError(f"configuration {label} needs drift penalty {penalty:.4f}")
    # a target above the drift-free model is left as a shortfall, not a gain
    return min(1.0, penalty)


@lru_cache(maxsize=None)
def preset(label: str) -> LinkConfig:
    """Fully calibrated link configuration ``label`` in {A, B, C, D}."""
    cfg = uncalibrated_config(label)
    dec = replace(reference_decoherence(), drift_penalty=drift_penalty(label))
    return replace(cfg, decoherence=dec)


def ideal_config(base: LinkConfig | None = None) -> LinkConfig:
    """A link with every fidelity-loss mechanism switched off."""
    base = preset("A") if base is None else base
    dec = DecoherenceParams(
        v0_per_state=(1.0, 1.0, 1.0, 1.0),
        dephasing_time_sensitive_s=1e6,
        dephasing_time_insensitive_s=1e6,
        drift_penalty=1.0,
    )
    det = replace(base.detectors, dark_rate_cps=0.0)
    return replace(base, decoherence=dec, detectors=det, qfc=replace(base.qfc, alpha_asr_cps_per_w_m=0.0))
