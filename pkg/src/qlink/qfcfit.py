"""Fits of converter characterization data.

Input is a table of ``(curve, pump_power_w, value)`` rows. Curves are
``arm_p``/``arm_s`` (external efficiency of one interferometer arm versus
that arm's pump power), ``internal`` (total internal efficiency versus total
power) and ``noise`` (dark-input count rate in cps versus total power).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar

from .errors import DomainError, FitError
from .linkmodel import QfcParams, _one_minus_sinc

CURVES = ("arm_p", "arm_s", "internal", "noise")
MIN_POINTS = 4


@dataclass(frozen=True)
class EfficiencyFit:
    eta_max: float
    eta_max_se: float
    eta_nor: float
    eta_nor_se: float
    peak_power_w: float

    def __call__(self, p, length_m: float) -> np.ndarray:
        return efficiency_curve(p, self.eta_max, self.eta_nor, length_m)


@dataclass(frozen=True)
class NoiseFit:
    n_dc: float
    n_dc_se: float
    alpha_asr: float
    alpha_asr_se: float
    reduction_at_peak: float  # ASR term with back-conversion over the linear term


@dataclass(frozen=True)
class QfcFitResult:
    waveguide_length_m: float
    arms: dict[str, EfficiencyFit]
    internal: EfficiencyFit | None
    noise: NoiseFit | None
    operating_power_p_w: float | None
    operating_power_s_w: float | None
    operating_efficiency: float | None
    snr_optimal_power_w: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def efficiency_curve(p, eta_max: float, eta_nor: float, length_m: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return eta_max * np.sin(np.sqrt(eta_nor * np.clip(p, 0, None)) * length_m) ** 2


def noise_curve(p, n_dc: float, alpha: float, eta_int_max: float, eta_nor: float, length_m: float) -> np.ndarray:
    return n_dc + alpha * _asr_shape(p, eta_int_max, eta_nor, length_m)


def _asr_shape(p, eta_int_max, eta_nor, length_m) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.empty_like(p)
    for i, pi in enumerate(p):
        k = math.sqrt(eta_nor * pi)
        out[i] = pi * (length_m - eta_int_max * 0.5 * length_m * _one_minus_sinc(2 * k * length_m))
    return out


def read_table(path: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(raw for raw in fh if raw.strip() and not raw.lstrip().startswith("#"))
        need = {"curve", "pump_power_w", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DomainError(f"{path}: header must contain {sorted(need)}")
        data: dict[str, list[tuple[float, float]]] = {}
        for line, row in enumerate(reader, start=2):
            curve = row["curve"].strip()
            if curve not in CURVES:
                raise DomainError(f"{path}:{line}: unknown curve {curve!r}; expected one of {CURVES}")
            try:
                p, v = float(row["pump_power_w"]), float(row["value"])
            except (TypeError, ValueError):
                raise DomainError(f"{path}:{line}: non-numeric value") from None
            if p < 0:
                raise DomainError(f"{path}:{line}: negative pump power")
            data.setdefault(curve, []).append((p, v))
    return {k: (np.array([a for a, _ in v]), np.array([b for _, b in v])) for k, v in data.items()}


def write_table(path: str | Path, data: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "pump_power_w", "value"])
        for curve in CURVES:
            if curve in data:
                for p, v in zip(*data[curve]):
                    w.writerow([curve, repr(float(p)), repr(float(v))])


def _covariance_se(res) -> np.ndarray:
    jac = res.jac
    dof = max(1, jac.shape[0] - jac.shape[1])
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return np.full(jac.shape[1], math.inf)
    return np.sqrt(np.diag(cov))


def fit_efficiency(p: np.ndarray, eta: np.ndarray, length_m: float) -> EfficiencyFit:
    """Least-squares fit of ``eta_max sin^2(sqrt(eta_nor P) L)``."""
    if len(p) < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {len(p)}", {"points": len(p)})
    i = int(np.argmax(eta))
    p_peak0 = p[i] if p[i] > 0 else np.max(p)
    nor0 = (math.pi / (2 * length_m)) ** 2 / p_peak0
    scale = np.array([1.0, nor0])

    def resid(x):
        return efficiency_curve(p, x[0], x[1] * nor0, length_m) - eta

    res = least_squares(resid, [max(eta[i], 1e-3), 1.0], bounds=([0, 1e-6], [1.5, 1e3]), x_scale="jac")
    if not res.success:
        raise FitError("efficiency fit failed", {"message": res.message})
    se = _covariance_se(res) * scale
    eta_max, eta_nor = res.x[0], res.x[1] * nor0
    return EfficiencyFit(float(eta_max), float(se[0]), float(eta_nor), float(se[1]),
                         float((math.pi / (2 * length_m)) ** 2 / eta_nor))


def fit_noise(p: np.ndarray, n: np.ndarray, eta_int_max: float, eta_nor: float, length_m: float) -> NoiseFit:
    """Linear fit of ``N_dc`` and ``alpha_ASR`` with the conversion shape held fixed."""
    if len(p) < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {len(p)}", {"points": len(p)})
    design = np.column_stack([np.ones_like(p), _asr_shape(p, eta_int_max, eta_nor, length_m)])
    coef, *_ = np.linalg.lstsq(design, n, rcond=None)
    r = n - design @ coef
    dof = max(1, len(p) - 2)
    cov = np.linalg.inv(design.T @ design) * float(r @ r) / dof
    p_peak = (math.pi / (2 * length_m)) ** 2 / eta_nor
    reduction = float(_asr_shape([p_peak], eta_int_max, eta_nor, length_m)[0] / (p_peak * length_m))
    return NoiseFit(float(coef[0]), float(math.sqrt(cov[0, 0])), float(coef[1]), float(math.sqrt(cov[1, 1])),
                    reduction)


def operating_point(fit_p: EfficiencyFit, fit_s: EfficiencyFit, length_m: float) -> tuple[float, float, float]:
    """Arm powers with equal efficiencies, the weaker arm at its maximum."""
    if fit_p.eta_max <= fit_s.eta_max:
        weak, strong, weak_is_p = fit_p, fit_s, True
    else:
        weak, strong, weak_is_p = fit_s, fit_p, False
    target = weak.eta_max
    if target >= strong.eta_max:
        p_strong = strong.peak_power_w
    else:
        p_strong = brentq(lambda x: float(strong(x, length_m)) - target, 0.0, strong.peak_power_w)
    p_weak = weak.peak_power_w
    pp, ps = (p_weak, p_strong) if weak_is_p else (p_strong, p_weak)
    return pp, ps, target


def snr_optimal_power(internal: EfficiencyFit, noise: NoiseFit, length_m: float) -> float:
    """Total pump power maximizing converted signal over noise counts."""
    def neg(p):
        sig = float(internal(p, length_m))
        return -sig / float(noise_curve([p], noise.n_dc, noise.alpha_asr, internal.eta_max, internal.eta_nor,
                                        length_m)[0])

    res = minimize_scalar(neg, bounds=(1e-9, internal.peak_power_w * 1.5), method="bounded",
                          options={"xatol": 1e-9 * internal.peak_power_w})
    return float(res.x)


def fit_qfc(data: dict[str, tuple[np.ndarray, np.ndarray]], length_m: float = 0.040,
            defaults: QfcParams | None = None) -> QfcFitResult:
    """Fit every curve present in ``data``.

    The noise fit needs the internal-efficiency shape; without an
    ``internal`` curve the values of ``defaults`` are used.
    """
    defaults = defaults or QfcParams()
    if not data:
        raise FitError("no data points", {})
    for k, (p, _) in data.items():
        if len(p) < MIN_POINTS:
            raise FitError(f"curve {k!r} has {len(p)} points; need at least {MIN_POINTS}", {"curve": k})
    arms = {k: fit_efficiency(*data[k], length_m) for k in ("arm_p", "arm_s") if k in data}
    internal = fit_efficiency(*data["internal"], length_m) if "internal" in data else None
    noise = None
    if "noise" in data:
        eta_int = internal.eta_max if internal else defaults.eta_int_max
        eta_nor = internal.eta_nor if internal else defaults.eta_nor_total_per_w_m2
        noise = fit_noise(*data["noise"], eta_int, eta_nor, length_m)
    pp = ps = eff = None
    if len(arms) == 2:
        pp, ps, eff = operating_point(arms["arm_p"], arms["arm_s"], length_m)
    p_snr = None
    if noise is not None:
        shape = internal or EfficiencyFit(defaults.eta_int_max, 0.0, defaults.eta_nor_total_per_w_m2, 0.0,
                                          defaults.total_pump_power_w)
        p_snr = snr_optimal_power(shape, noise, length_m)
    return QfcFitResult(length_m, arms, internal, noise, pp, ps, eff, p_snr)


def synthetic_data(params: QfcParams | None = None, n_points: int = 16, rel_noise: float = 0.01,
                   seed: int = 0, n_dc: float = 123.0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Characterization curves drawn from ``params`` with multiplicative noise."""
    q = params or QfcParams()
    L = q.waveguide_length_m
    rng = np.random.default_rng(seed)
    out = {}
    for curve, eta_max, eta_nor in (("arm_p", q.eta_ext_operating, q.eta_nor_p_arm_per_w_m2),
                                    ("arm_s", q.eta_ext_operating, q.eta_nor_s_arm_per_w_m2),
                                    ("internal", q.eta_int_max, q.eta_nor_total_per_w_m2)):
        p_peak = (math.pi / (2 * L)) ** 2 / eta_nor
        p = np.linspace(0.05, 1.6, n_points) * p_peak
        y = efficiency_curve(p, eta_max, eta_nor, L)
        out[curve] = (p, y * (1 + rel_noise * rng.standard_normal(n_points)))
    p_peak = (math.pi / (2 * L)) ** 2 / q.eta_nor_total_per_w_m2
    p = np.linspace(0.0, 1.6, n_points) * p_peak
    y = noise_curve(p, n_dc, q.alpha_asr_cps_per_w_m, q.eta_int_max, q.eta_nor_total_per_w_m2, L)
    out["noise"] = (p, y * (1 + rel_noise * rng.standard_normal(n_points)))
    return out
