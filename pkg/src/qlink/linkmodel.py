"""Parametric models of the physical chain: frequency converter, fiber,
detectors, timing, decoherence and the resulting efficiency and SNR budgets.

All quantities are SI except fiber length (km) and attenuation (dB/km).
Defaults describe the 20 km telecom measurement; the scalar fit constants
(attempt overhead, ASR coefficient, insertion-loss slack, per-event
overhead) are solved in closed form from the reference figures below.
Decoherence constants need a numerical fit and live in
:mod:`qlink.presets`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, DomainError
from .qcore import average_visibility, fidelity_lower_bound

SPEED_OF_LIGHT = 299_792_458.0
PHOTON_STATE_ORDER = ("H", "V", "D", "A")

# reference figures of the 20 km measurement used to pin fit constants
REFERENCE_FIBER_KM = 20.0
REFERENCE_EXCITATION_RATE = 7.3e3          # attempts/s
REFERENCE_DETECTION_PROBABILITY = 0.173e-3  # per attempt
REFERENCE_PUMP_NOISE_CPS = 128.0            # both detectors
REFERENCE_DARK_CPS = 18.0                   # both detectors
REFERENCE_READOUT_DELAY = 102e-6
REFERENCE_EVENTS = 11335
REFERENCE_DURATION = 360 * 60.0


def _peak_eta_nor(length_m: float, power_w: float) -> float:
    # first efficiency maximum: sqrt(eta_nor P) L = pi/2
    return (math.pi / (2.0 * length_m)) ** 2 / power_w


@dataclass(frozen=True)
class PassiveLosses:
    optics: float = 0.826
    fiber_coupling: float = 0.878
    waveguide_coupling: float = 0.90
    filtering: float = 0.907

    def product(self) -> float:
        return self.optics * self.fiber_coupling * self.waveguide_coupling * self.filtering


_L_WG = 0.040
_P_ARM_P = 0.175
_P_ARM_S = 0.189
_ETA_INT_MAX = 0.965


def _reference_asr_coefficient() -> float:
    p = _P_ARM_P + _P_ARM_S
    t_fiber = 10 ** (-0.21 * REFERENCE_FIBER_KM / 10)
    return REFERENCE_PUMP_NOISE_CPS / (p * _L_WG * (1.0 - _ETA_INT_MAX / 2.0) * t_fiber)


@dataclass(frozen=True)
class QfcParams:
    """Polarization-preserving converter.

    External efficiency curves are per interferometer arm versus arm pump
    power; the internal-efficiency and noise curves are versus total pump
    power. ``alpha_asr`` is referred to the converter output as seen by
    detectors of mean efficiency ``alpha_asr_reference_efficiency``.
    """

    enabled: bool = True
    eta_int_max: float = _ETA_INT_MAX
    eta_ext_operating: float = 0.57
    waveguide_length_m: float = _L_WG
    pump_power_p_arm_w: float = _P_ARM_P
    pump_power_s_arm_w: float = _P_ARM_S
    eta_nor_p_arm_per_w_m2: float = _peak_eta_nor(_L_WG, _P_ARM_P)
    eta_nor_s_arm_per_w_m2: float = _peak_eta_nor(_L_WG, _P_ARM_S)
    eta_nor_total_per_w_m2: float = _peak_eta_nor(_L_WG, _P_ARM_P + _P_ARM_S)
    alpha_asr_cps_per_w_m: float = field(default_factory=_reference_asr_coefficient)
    alpha_asr_reference_efficiency: float = 0.17
    passive_losses: PassiveLosses = field(default_factory=PassiveLosses)

    def __post_init__(self):
        for name in ("eta_int_max", "eta_ext_operating"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name}={v} outside (0, 1]")
        if self.pump_power_p_arm_w < 0 or self.pump_power_s_arm_w < 0:
            raise DomainError("pump powers must be non-negative")
        if self.passive_losses.product() * self.eta_int_max < self.eta_ext_operating - 0.02:
            raise DomainError("passive losses and internal efficiency cannot reach the external efficiency")

    @property
    def total_pump_power_w(self) -> float:
        return self.pump_power_p_arm_w + self.pump_power_s_arm_w


@dataclass(frozen=True)
class DetectorParams:
    efficiency_1: float = 0.16
    efficiency_2: float = 0.18
    dark_rate_cps: float = REFERENCE_DARK_CPS / 2.0  # per detector
    window_s: float = 50e-9
    window_acceptance: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("efficiency_1", "efficiency_2", "window_acceptance"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name}={v} outside (0, 1]")
        if self.window_s <= 0:
            raise DomainError("acceptance window must be positive")
        if self.dark_rate_cps < 0:
            raise DomainError("dark rate must be non-negative")

    @property
    def mean_efficiency(self) -> float:
        return 0.5 * (self.efficiency_1 + self.efficiency_2)


@dataclass(frozen=True)
class FiberParams:
    length_km: float = REFERENCE_FIBER_KM
    attenuation_db_per_km: float = 0.21
    group_index: float = 1.468

    def __post_init__(self):
        if self.length_km < 0:
            raise DomainError("fiber length must be non-negative")
        if self.attenuation_db_per_km <= 0:
            raise DomainError("attenuation must be positive")


def _reference_attempt_overhead() -> float:
    latency = 1.468 * REFERENCE_FIBER_KM * 1e3 / SPEED_OF_LIGHT
    return 1.0 / REFERENCE_EXCITATION_RATE - latency - 350e-6 / 40


def _reference_processing_delay() -> float:
    return REFERENCE_READOUT_DELAY - 1.468 * REFERENCE_FIBER_KM * 1e3 / SPEED_OF_LIGHT


def _reference_event_overhead() -> float:
    # mean time per event = attempts + overhead + lost fraction * loading
    per_event = REFERENCE_DURATION / REFERENCE_EVENTS
    mu = (REFERENCE_PUMP_NOISE_CPS + REFERENCE_DARK_CPS) * 50e-9
    p_any = 1.0 - (1.0 - REFERENCE_DETECTION_PROBABILITY) * math.exp(-mu)
    attempts = 1.0 / (REFERENCE_EXCITATION_RATE * p_any)
    return per_event - attempts - 0.5 * 1.0


@dataclass(frozen=True)
class TimingParams:
    attempt_overhead_s: float = field(default_factory=_reference_attempt_overhead)
    cooling_duration_s: float = 350e-6
    cooling_every: int = 40
    loading_time_s: float = 1.0
    atom_survival: float = 0.5
    readout_extra_delay_s: float = 0.0
    processing_delay_s: float = field(default_factory=_reference_processing_delay)
    event_overhead_s: float = field(default_factory=_reference_event_overhead)

    def __post_init__(self):
        for name in ("attempt_overhead_s", "cooling_duration_s", "loading_time_s",
                     "readout_extra_delay_s", "processing_delay_s", "event_overhead_s"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if not 0.0 <= self.atom_survival <= 1.0:
            raise DomainError("atom_survival outside [0, 1]")
        if self.cooling_every < 1:
            raise DomainError("cooling_every must be at least 1")


@dataclass(frozen=True)
class DecoherenceParams:
    """Per-outcome base visibilities and stretched-exponential dephasing.

    ``v0_per_state`` is ordered (H, V, D, A). The V outcome leaves the atom in
    the state insensitive to position-dependent dephasing and decays with
    ``dephasing_time_insensitive_s``; the other three use the sensitive time.
    ``None`` fields mean uncalibrated.
    """

    v0_per_state: tuple[float, float, float, float] | None = None
    dephasing_time_sensitive_s: float | None = None
    dephasing_time_insensitive_s: float | None = None
    dephasing_exponent: float = 1.0
    drift_penalty: float = 1.0

    def __post_init__(self):
        if self.v0_per_state is not None:
            v0 = tuple(float(v) for v in self.v0_per_state)
            if len(v0) != 4 or not all(0.0 <= v <= 1.0 for v in v0):
                raise DomainError(f"v0_per_state must be four visibilities in [0, 1], got {v0}")
            object.__setattr__(self, "v0_per_state", v0)
        ts, ti = self.dephasing_time_sensitive_s, self.dephasing_time_insensitive_s
        for t in (ts, ti):
            if t is not None and t <= 0:
                raise DomainError("dephasing times must be positive")
        if ts is not None and ti is not None and ti < ts:
            raise DomainError("insensitive dephasing time shorter than sensitive one")
        if not 0.0 <= self.drift_penalty <= 1.0:
            raise DomainError("drift_penalty outside [0, 1]")
        if self.dephasing_exponent <= 0:
            raise DomainError("dephasing exponent must be positive")

    @property
    def calibrated(self) -> bool:
        return (self.v0_per_state is not None and self.dephasing_time_sensitive_s is not None
                and self.dephasing_time_insensitive_s is not None)


def _reference_slack() -> float:
    cfg = LinkConfig(insertion_loss_slack=1.0)
    return REFERENCE_DETECTION_PROBABILITY / overall_detection_probability(cfg)


@dataclass(frozen=True)
class LinkConfig:
    qfc: QfcParams = field(default_factory=QfcParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)
    fiber: FiberParams = field(default_factory=FiberParams)
    timing: TimingParams = field(default_factory=TimingParams)
    decoherence: DecoherenceParams = field(default_factory=DecoherenceParams)
    source_collection: float = 7.5e-3 / 0.55
    switch_transmission: float = 0.75
    analyzer_transmission: float = 0.922
    insertion_loss_slack: float | None = None

    def __post_init__(self):
        for name in ("source_collection", "switch_transmission", "analyzer_transmission"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name}={v} outside (0, 1]")
        if self.insertion_loss_slack is None:
            object.__setattr__(self, "insertion_loss_slack", _reference_slack())
        elif not 0.0 < self.insertion_loss_slack <= 1.0:
            raise DomainError("insertion_loss_slack outside (0, 1]")

    def with_fiber_length(self, length_km: float) -> "LinkConfig":
        return replace(self, fiber=replace(self.fiber, length_km=length_km))


# --------------------------------------------------------------------------
# frequency converter

def _check_power(p: float) -> float:
    p = float(p)
    if p < 0 or math.isnan(p):
        raise DomainError(f"pump power {p!r} must be non-negative")
    return p


def conversion_efficiency(p: float, params: QfcParams, external: bool = True, arm: str = "s") -> float:
    """``eta_max sin^2(sqrt(eta_nor p) L)``.

    ``external=True`` uses the external device ceiling and the per-arm
    normalized efficiency (``p`` is that arm's pump power); otherwise the
    internal ceiling with the total-power constant.
    """
    p = _check_power(p)
    if external:
        eta_max = params.eta_ext_operating
        eta_nor = {"s": params.eta_nor_s_arm_per_w_m2, "p": params.eta_nor_p_arm_per_w_m2}[arm]
    else:
        eta_max, eta_nor = params.eta_int_max, params.eta_nor_total_per_w_m2
    return eta_max * math.sin(math.sqrt(eta_nor * p) * params.waveguide_length_m) ** 2


def first_maximum_power(eta_nor: float, length_m: float) -> float:
    return _peak_eta_nor(length_m, 1.0) / eta_nor


def _one_minus_sinc(x: float) -> float:
    # 1 - sin(x)/x without cancellation at small x
    if abs(x) < 1e-3:
        x2 = x * x
        return x2 / 6.0 - x2 * x2 / 120.0 + x2 ** 3 / 5040.0
    return 1.0 - math.sin(x) / x


def asr_noise_rate(p: float, params: QfcParams) -> float:
    """Pump-induced anti-Stokes Raman count rate including back-conversion,
    ``alpha p int_0^L (1 - eta_int sin^2((L-x) k)) dx`` with ``k = sqrt(eta_nor p)``."""
    p = _check_power(p)
    L = params.waveguide_length_m
    k = math.sqrt(params.eta_nor_total_per_w_m2 * p)
    # int_0^L sin^2(u k) du = L/2 (1 - sinc(2kL))
    sin2_integral = 0.5 * L * _one_minus_sinc(2.0 * k * L)
    return params.alpha_asr_cps_per_w_m * p * (L - params.eta_int_max * sin2_integral)


def qfc_noise_rate(p: float, params: QfcParams, n_dc: float) -> float:
    return float(n_dc) + asr_noise_rate(p, params)


# --------------------------------------------------------------------------
# fiber, timing

def fiber_transmission(fiber: FiberParams) -> float:
    return 10.0 ** (-fiber.attenuation_db_per_km * fiber.length_km / 10.0)


def link_latency(fiber: FiberParams) -> float:
    return fiber.group_index * fiber.length_km * 1e3 / SPEED_OF_LIGHT


def attempt_period(config: LinkConfig) -> float:
    """Mean time per excitation attempt, cooling included."""
    t = config.timing
    return t.attempt_overhead_s + link_latency(config.fiber) + t.cooling_duration_s / t.cooling_every


def excitation_rate(config: LinkConfig) -> float:
    return 1.0 / attempt_period(config)


def readout_delay(config: LinkConfig) -> float:
    t = config.timing
    return link_latency(config.fiber) + t.processing_delay_s + t.readout_extra_delay_s


# --------------------------------------------------------------------------
# efficiency and noise budget

def qfc_external_efficiency(config: LinkConfig) -> float:
    q = config.qfc
    if not q.enabled:
        return 1.0
    return conversion_efficiency(q.pump_power_s_arm_w, q, external=True, arm="s")


def efficiency_factors(config: LinkConfig) -> dict[str, float]:
    """Every multiplicative factor of the per-attempt detection probability."""
    return {
        "source_collection": config.source_collection,
        "switch_transmission": config.switch_transmission,
        "qfc_external_efficiency": qfc_external_efficiency(config),
        "fiber_transmission": fiber_transmission(config.fiber),
        "window_acceptance": config.detectors.window_acceptance,
        "analyzer_transmission": config.analyzer_transmission,
        "detector_efficiency": config.detectors.mean_efficiency,
        "insertion_loss_slack": config.insertion_loss_slack,
    }


def overall_detection_probability(config: LinkConfig) -> float:
    return math.prod(efficiency_factors(config).values())


def noise_rates(config: LinkConfig) -> dict[str, float]:
    """Detected noise rates (cps, both detectors) split by origin."""
    q = config.qfc
    dark = 2.0 * config.detectors.dark_rate_cps
    if not q.enabled:
        return {"qfc_noise": 0.0, "dark_count": dark}
    pump = (asr_noise_rate(q.total_pump_power_w, q) * fiber_transmission(config.fiber)
            * config.detectors.mean_efficiency / q.alpha_asr_reference_efficiency)
    return {"qfc_noise": pump, "dark_count": dark}


def total_noise_rate(config: LinkConfig) -> float:
    return sum(noise_rates(config).values())


def snr_model(config: LinkConfig) -> float:
    """Signal probability per window over expected noise counts per window.

    Returns ``math.inf`` when the noise rate is zero.
    """
    noise = total_noise_rate(config) * config.detectors.window_s
    if noise <= 0.0:
        return math.inf
    return overall_detection_probability(config) / noise


# --------------------------------------------------------------------------
# visibility models

def decohered_visibilities(params: DecoherenceParams, delay: float) -> tuple[float, float, float, float]:
    """Per-outcome (H, V, D, A) visibilities after ``delay`` seconds, drift included."""
    if delay < 0:
        raise DomainError("delay must be non-negative")
    if not params.calibrated:
        raise CalibrationError("decoherence parameters are not calibrated")
    k = params.dephasing_exponent
    ds = math.exp(-(delay / params.dephasing_time_sensitive_s) ** k)
    di = math.exp(-(delay / params.dephasing_time_insensitive_s) ** k)
    decay = (ds, di, ds, ds)
    return tuple(v * d * params.drift_penalty for v, d in zip(params.v0_per_state, decay))


def effective_visibility(v_true: float, snr: float) -> float:
    """Contrast after mixing in unpolarized, uncorrelated noise events."""
    if snr <= 0:
        raise DomainError("snr must be positive")
    if math.isinf(snr):
        return float(v_true)
    return float(v_true) * snr / (snr + 1.0)


def measured_visibilities(config: LinkConfig) -> tuple[float, float, float, float]:
    """Visibilities a blind analysis of this link is expected to report."""
    snr = snr_model(config)
    return tuple(effective_visibility(v, snr)
                 for v in decohered_visibilities(config.decoherence, readout_delay(config)))


def mean_event_time(config: LinkConfig) -> float:
    """Expected simulated seconds per accepted event."""
    p_any = detection_probability_any(config)
    t = config.timing
    return (attempt_period(config) / p_any + t.readout_extra_delay_s + t.event_overhead_s
            + (1.0 - t.atom_survival) * t.loading_time_s)


def detection_probability_any(config: LinkConfig) -> float:
    """Probability that an attempt yields at least one accepted click."""
    p_s = overall_detection_probability(config)
    mu = total_noise_rate(config) * config.detectors.window_s
    return 1.0 - (1.0 - p_s) * np.exp(-mu)


BUDGET_ITEMS = ("readout", "decoherence", "snr", "drifts")


def loss_budget(params: DecoherenceParams, delay: float, snr: float) -> dict[str, float]:
    """Fidelity-loss items in percentage points by sequential ablation.

    Mechanisms are switched off in the order of ``BUDGET_ITEMS`` and each item
    is the fidelity gained by removing it given the earlier ones are gone.
    ``achieved`` is the model fidelity with every mechanism on.
    """
    if not params.calibrated:
        raise CalibrationError("decoherence parameters are not calibrated")

    def fid(v0, decay: bool, dilute: bool, drift: bool) -> float:
        p = replace(params, v0_per_state=tuple(v0), drift_penalty=params.drift_penalty if drift else 1.0)
        vis = decohered_visibilities(p, delay if decay else 0.0)
        if dilute:
            vis = [effective_visibility(v, snr) for v in vis]
        return fidelity_lower_bound(average_visibility(*vis))

    ones = (1.0,) * 4
    f = [
        fid(params.v0_per_state, True, True, True),
        fid(ones, True, True, True),
        fid(ones, False, True, True),
        fid(ones, False, False, True),
        fid(ones, False, False, False),
    ]
    out = {name: 100.0 * (f[i + 1] - f[i]) for i, name in enumerate(BUDGET_ITEMS)}
    out["achieved"] = 100.0 * f[0]
    return out


def config_loss_budget(config: LinkConfig) -> dict[str, float]:
    return loss_budget(config.decoherence, readout_delay(config), snr_model(config))
