"""Blind estimation from event logs: fringe fits, visibilities, fidelity
bounds, CHSH values and the itemized fidelity-loss budget.

Nothing here reads the ground-truth origin column except
:func:`FidelityReport.snr_measured`, which is the generator-side SNR.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import CalibrationError, DomainError, FitError
from .linkmodel import BUDGET_ITEMS, LinkConfig, loss_budget, readout_delay, snr_model
from .qcore import average_visibility, fidelity_lower_bound
from .simengine import BASIS_CODES, EventLog, signal_fraction

__all__ = [
    "CorrelationCurve", "FringeFit", "VisibilityReport", "FidelityReport",
    "bin_events", "fit_fringe", "average_visibility", "average_visibility_se",
    "fidelity_lower_bound", "chsh_from_counts", "visibility_report", "analyze",
    "bootstrap", "fidelity_budget", "format_results_table", "fringe_rows",
]

PHOTON_STATE_ORDER = ("H", "V", "D", "A")
_STATE_OF = {(0, 0): "H", (0, 1): "V", (1, 0): "D", (1, 1): "A"}  # (basis code, outcome)
CHSH_PAIRS = ((22.5, 67.5), (157.5, 112.5))
MAX_ITER = 200
REL_TOL = 1e-10
MAX_REWEIGHT = 50


@dataclass(frozen=True)
class CorrelationCurve:
    photon_state: str
    alpha: np.ndarray
    n_dark: np.ndarray
    n_total: np.ndarray

    def __post_init__(self):
        if self.photon_state not in PHOTON_STATE_ORDER:
            raise DomainError(f"unknown photon state {self.photon_state!r}")
        a = np.asarray(self.alpha, dtype=float)
        k = np.asarray(self.n_dark, dtype=np.int64)
        n = np.asarray(self.n_total, dtype=np.int64)
        if not (a.shape == k.shape == n.shape) or a.ndim != 1:
            raise DomainError("alpha, n_dark and n_total must be 1-d arrays of equal length")
        if np.any(k < 0) or np.any(k > n):
            raise DomainError("need 0 <= n_dark <= n_total at every point")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "n_dark", k)
        object.__setattr__(self, "n_total", n)

    @property
    def points(self) -> list[tuple[float, int, int]]:
        return [(float(a), int(k), int(n)) for a, k, n in zip(self.alpha, self.n_dark, self.n_total)]

    @property
    def dark_fraction(self) -> np.ndarray:
        return self.n_dark / np.maximum(self.n_total, 1)


def bin_events(log: EventLog) -> list[CorrelationCurve]:
    """Partition events into one correlation curve per detected photon state."""
    if len(log) == 0:
        return []
    curves = []
    for (basis, outcome), state in _STATE_OF.items():
        sel = (log.photon_basis == basis) & (log.photon_outcome == outcome)
        if not np.any(sel):
            continue
        alpha = np.mod(log.atom_alpha[sel], 180.0)
        grid, inv = np.unique(alpha, return_inverse=True)
        n_total = np.bincount(inv, minlength=len(grid))
        n_dark = np.bincount(inv, weights=(log.atom_outcome[sel] == 0), minlength=len(grid))
        curves.append(CorrelationCurve(state, grid, n_dark.astype(np.int64), n_total))
    curves.sort(key=lambda c: PHOTON_STATE_ORDER.index(c.photon_state))
    return curves


# --------------------------------------------------------------------------
# fringe fit

@dataclass(frozen=True)
class FringeFit:
    visibility: float
    visibility_se: float
    mean: float
    mean_se: float
    alpha0: float
    alpha0_se: float
    iterations: int
    chi2: float
    dof: int


def _model(theta, x):
    m, v, a0 = theta
    c = np.cos(2.0 * (x - a0))
    s = np.sin(2.0 * (x - a0))
    f = m * (1.0 + v * c)
    jac = np.column_stack([1.0 + v * c, m * c, 2.0 * m * v * s])
    return f, jac


def _fourier_init(x, y, w):
    design = np.column_stack([np.ones_like(x), np.cos(2 * x), np.sin(2 * x)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    a, b, c = coef
    cov = np.linalg.pinv(design.T @ (design * w[:, None]))
    return a, b, c, cov


def _levenberg_marquardt(theta, x, y, w):
    """Minimize ``sum w (y - f)^2``; returns (theta, chi2, iterations)."""

    def cost(th):
        f, _ = _model(th, x)
        return float(np.sum(w * (y - f) ** 2))

    lam = 1e-3
    chi2 = cost(theta)
    for it in range(1, MAX_ITER + 1):
        f, jac = _model(theta, x)
        jtw = jac.T * w
        hess = jtw @ jac
        grad = jtw @ (y - f)
        damp = np.diag(np.maximum(np.diag(hess), 1e-300))
        try:
            step = np.linalg.solve(hess + lam * damp, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess + lam * damp, grad, rcond=None)[0]
        trial = theta + step
        c_trial = cost(trial)
        if c_trial <= chi2:
            # relative on mean and visibility, absolute (radians) on the phase
            rel = max(float(np.max(np.abs(step[:2]) / np.maximum(np.abs(theta[:2]), 1e-12))), abs(step[2]))
            theta, chi2 = trial, c_trial
            lam = max(lam / 10.0, 1e-12)
            if rel < REL_TOL:
                return theta, chi2, it
        else:
            lam *= 10.0
            if lam > 1e15:
                # no downhill step left: already at the minimum within precision
                return theta, chi2, it
    raise FitError("fringe fit did not converge", {"iterations": MAX_ITER, "theta": theta.tolist(), "lambda": lam})


def _binomial_weights(f, n):
    # model variances, kept away from 0 and 1 by half a count
    p = np.clip(f, 0.5 / (n + 1.0), 1.0 - 0.5 / (n + 1.0))
    return n / (p * (1.0 - p))


def fit_fringe(curve: CorrelationCurve) -> FringeFit:
    """Binomial maximum-likelihood fit of ``m (1 + V cos(2(alpha - alpha0)))``
    to dark fractions.

    Solved as iteratively reweighted least squares: weights are inverse
    binomial variances of the current model, so the fixed point satisfies
    the likelihood score equations. Weights from observed fractions would
    favour cells that fluctuate toward 0 or 1 and bias V upward at low
    counts. Standard errors come from the inverse Fisher information.
    """
    if len(np.unique(curve.alpha)) < 4:
        raise FitError("need at least 4 distinct angles", {"angles": curve.alpha.tolist()})
    n_all = int(curve.n_total.sum())
    if n_all < 40:
        raise FitError("need at least 40 events per curve", {"events": n_all})
    keep = curve.n_total > 0
    x = np.deg2rad(curve.alpha[keep])
    n = curve.n_total[keep].astype(float)
    y = curve.n_dark[keep] / n
    p_reg = (curve.n_dark[keep] + 0.5) / (n + 1.0)
    w = n / (p_reg * (1.0 - p_reg))

    a, b, c, _ = _fourier_init(x, y, w)
    if a <= 0:
        raise FitError("non-positive fringe mean", {"mean": float(a)})
    theta = np.array([a, math.hypot(b, c) / a, 0.5 * math.atan2(c, b)])

    it = 0
    for _ in range(MAX_REWEIGHT):
        w = _binomial_weights(_model(theta, x)[0], n)
        new, chi2, k = _levenberg_marquardt(theta, x, y, w)
        it += k
        step = new - theta
        theta = new
        if max(float(np.max(np.abs(step[:2]) / np.maximum(np.abs(theta[:2]), 1e-12))), abs(step[2])) < 1e-9:
            break
    else:
        raise FitError("fringe fit reweighting did not converge", {"iterations": it, "theta": theta.tolist()})
    w = _binomial_weights(_model(theta, x)[0], n)
    lin_cov = _fourier_init(x, y, w)[3]

    m, v, a0 = theta
    if v < 0:
        v, a0 = -v, a0 + math.pi / 2
    a0 = math.fmod(a0, math.pi)
    if a0 < 0:
        a0 += math.pi

    _, jac = _model(np.array([m, v, a0]), x)
    hess = (jac.T * w) @ jac
    if v > 1e-6 and np.linalg.cond(hess) < 1e12:
        cov = np.linalg.inv(hess)
        v_se, a0_se = math.sqrt(cov[1, 1]), math.sqrt(cov[2, 2])
        m_se = math.sqrt(cov[0, 0])
    else:
        # phase undefined: take the amplitude error from the linear fit
        m_se = math.sqrt(lin_cov[0, 0])
        v_se = math.sqrt(0.5 * (lin_cov[1, 1] + lin_cov[2, 2])) / m
        a0_se = math.inf
    return FringeFit(
        visibility=float(v),
        visibility_se=float(v_se),
        mean=float(m),
        mean_se=float(m_se),
        alpha0=float(np.rad2deg(a0)),
        alpha0_se=float(np.rad2deg(a0_se)),
        iterations=it,
        chi2=float(chi2),
        dof=int(x.size - 3),
    )


# --------------------------------------------------------------------------
# reports

def average_visibility_se(se_h: float, se_v: float, se_d: float, se_a: float) -> float:
    return math.sqrt((se_h ** 2 + se_v ** 2) / 36.0 + (se_d ** 2 + se_a ** 2) / 9.0)


@dataclass(frozen=True)
class VisibilityReport:
    """Per-state visibilities clipped to [0, 1]; ``raw`` keeps the fit values."""

    values: dict[str, float]
    errors: dict[str, float]
    raw: dict[str, float]
    phase_offsets: dict[str, float]
    v_bar: float
    v_bar_se: float

    @property
    def v_h(self) -> float:
        return self.values["H"]

    @property
    def v_v(self) -> float:
        return self.values["V"]

    @property
    def v_d(self) -> float:
        return self.values["D"]

    @property
    def v_a(self) -> float:
        return self.values["A"]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FidelityReport:
    configuration_label: str
    fidelity_lower_bound: float
    fidelity_se: float
    chsh_s: float
    chsh_se: float
    snr_measured: float
    events: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["snr_measured"]):
            d["snr_measured"] = None
        return d


def visibility_report(fits: dict[str, FringeFit]) -> VisibilityReport:
    missing = [s for s in PHOTON_STATE_ORDER if s not in fits]
    if missing:
        raise DomainError(f"missing correlation curves for photon states {missing}")
    raw = {s: fits[s].visibility for s in PHOTON_STATE_ORDER}
    values = {s: float(np.clip(v, 0.0, 1.0)) for s, v in raw.items()}
    errors = {s: fits[s].visibility_se for s in PHOTON_STATE_ORDER}
    v_bar = average_visibility(*(values[s] for s in PHOTON_STATE_ORDER))
    v_bar_se = average_visibility_se(*(errors[s] for s in PHOTON_STATE_ORDER))
    return VisibilityReport(values, errors, raw, {s: fits[s].alpha0 for s in PHOTON_STATE_ORDER},
                            v_bar, v_bar_se)


def _cell_counts(log: EventLog, basis: int, alpha: float) -> tuple[int, int]:
    sel = (log.photon_basis == basis) & np.isclose(np.mod(log.atom_alpha, 180.0), alpha)
    same = (log.photon_outcome == log.atom_outcome) & sel  # (first, dark) or (second, ionized)
    n = int(np.count_nonzero(sel))
    return int(np.count_nonzero(same)), n


def _chsh_pair(log: EventLog, b: float, b2: float):
    cells = {}
    missing = []
    for basis in (0, 1):
        for alpha in (b, b2):
            same, n = _cell_counts(log, basis, alpha)
            if n == 0:
                missing.append(f"{BASIS_CODES[basis].value}@{alpha:g}")
            cells[(basis, alpha)] = (same, n)
    if missing:
        return None, missing
    e = {}
    var = 0.0
    for key, (same, n) in cells.items():
        e[key] = (2.0 * same - n) / n
        var += (1.0 - e[key] ** 2) / n
    s = abs(e[(0, b)] - e[(0, b2)]) + abs(e[(1, b)] + e[(1, b2)])
    return (s, math.sqrt(var)), []


def chsh_from_counts(log: EventLog, pairs: Sequence[tuple[float, float]] = CHSH_PAIRS) -> tuple[float, float]:
    """CHSH value and standard error from the four setting combinations.

    Each atom-angle pair (b, b') in ``pairs`` that is fully populated gives
    one estimate; several are combined with inverse-variance weights.
    """
    estimates = []
    first_missing = None
    for b, b2 in pairs:
        est, missing = _chsh_pair(log, b, b2)
        if est is None:
            first_missing = first_missing or missing
            continue
        estimates.append(est)
    if not estimates:
        raise DomainError(f"CHSH setting combination missing: {', '.join(first_missing)}")
    if len(estimates) == 1:
        return estimates[0]
    vals = np.array([s for s, _ in estimates])
    se = np.array([e for _, e in estimates])
    if np.any(se == 0):
        return float(vals[np.argmin(se)]), 0.0
    w = 1.0 / se ** 2
    return float(np.sum(w * vals) / np.sum(w)), float(1.0 / math.sqrt(np.sum(w)))


def analyze(log: EventLog, label: str | None = None) -> tuple[VisibilityReport, FidelityReport, list[CorrelationCurve]]:
    """Full blind analysis of one log."""
    if len(log) == 0:
        raise DomainError("empty log")
    curves = bin_events(log)
    fits = {c.photon_state: fit_fringe(c) for c in curves}
    vis = visibility_report(fits)
    s, s_se = chsh_from_counts(log)
    try:
        snr = signal_fraction(log)
    except DomainError:
        snr = math.nan
    fid = FidelityReport(
        configuration_label=label or str(log.header.get("configuration_label", "?")),
        fidelity_lower_bound=fidelity_lower_bound(vis.v_bar),
        fidelity_se=5.0 / 6.0 * vis.v_bar_se,
        chsh_s=s,
        chsh_se=s_se,
        snr_measured=snr,
        events=len(log),
    )
    return vis, fid, curves


def bootstrap(log: EventLog, resamples: int = 1000, seed: int = 0) -> dict[str, float]:
    """Bootstrap standard errors of the visibilities, mean visibility and S.

    Events are resampled with replacement; this is done as one multinomial
    draw over (photon state, angle, atom outcome) cells per resample.
    """
    if len(log) == 0:
        raise DomainError("empty log")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xB007], dtype=np.uint64)))
    alpha = np.mod(log.atom_alpha, 180.0)
    grid, a_idx = np.unique(alpha, return_inverse=True)
    state_idx = log.photon_basis.astype(np.int64) * 2 + log.photon_outcome
    code = (state_idx * len(grid) + a_idx) * 2 + log.atom_outcome
    ncat = 4 * len(grid) * 2
    counts = np.bincount(code, minlength=ncat)
    probs = counts / counts.sum()

    samples = {s: [] for s in (*PHOTON_STATE_ORDER, "v_bar", "chsh_s")}
    chsh_cells = {}
    for b, b2 in CHSH_PAIRS:
        if all(np.any(np.isclose(grid, a)) for a in (b, b2)):
            chsh_cells[(b, b2)] = [int(np.argmin(np.abs(grid - a))) for a in (b, b2)]
    for _ in range(resamples):
        c = rng.multinomial(len(log), probs).reshape(4, len(grid), 2)
        fits = {}
        try:
            for i, st in enumerate(PHOTON_STATE_ORDER):
                curve = CorrelationCurve(st, grid, c[i, :, 0], c[i].sum(axis=1))
                fits[st] = fit_fringe(curve)
        except FitError:
            continue
        v = {st: float(np.clip(fits[st].visibility, 0, 1)) for st in PHOTON_STATE_ORDER}
        for st in PHOTON_STATE_ORDER:
            samples[st].append(v[st])
        samples["v_bar"].append(average_visibility(*(v[s] for s in PHOTON_STATE_ORDER)))
        s_vals = []
        for (ib, ib2) in chsh_cells.values():
            e = {}
            for basis in (0, 1):
                for j in (ib, ib2):
                    # same = (first, dark) + (second, ionized)
                    same = c[2 * basis, j, 0] + c[2 * basis + 1, j, 1]
                    n = c[2 * basis, j].sum() + c[2 * basis + 1, j].sum()
                    e[(basis, j)] = (2.0 * same - n) / max(n, 1)
            s_vals.append(abs(e[(0, ib)] - e[(0, ib2)]) + abs(e[(1, ib)] + e[(1, ib2)]))
        if s_vals:
            samples["chsh_s"].append(float(np.mean(s_vals)))
    return {k: (float(np.std(v, ddof=1)) if len(v) > 1 else math.nan) for k, v in samples.items()}


# --------------------------------------------------------------------------
# budget and tables

def fidelity_budget(config: LinkConfig, report: FidelityReport | None = None) -> dict[str, float]:
    """Itemized fidelity loss in percentage points.

    Items come from sequential ablation of the model. ``achieved`` is the
    measured fidelity when a report is given, otherwise the model value;
    ``residual`` is what the items plus ``achieved`` leave unexplained
    relative to 100.
    """
    if not config.decoherence.calibrated:
        raise CalibrationError("fidelity budget needs calibrated decoherence parameters")
    items = loss_budget(config.decoherence, readout_delay(config), snr_model(config))
    model_achieved = items.pop("achieved")
    achieved = 100.0 * report.fidelity_lower_bound if report is not None else model_achieved
    out = {k: items[k] for k in BUDGET_ITEMS}
    out["achieved"] = achieved
    out["model_achieved"] = model_achieved
    out["residual"] = 100.0 - achieved - sum(items[k] for k in BUDGET_ITEMS)
    return out


@dataclass
class TableColumn:
    label: str
    fiber_length_km: float
    wavelength_nm: int
    readout_delay_s: float
    fidelity: FidelityReport
    extra: dict = field(default_factory=dict)


def _fmt_length(km: float) -> str:
    if km >= 1.0:
        return f"{km:g} km"
    return f"{km * 1e3:g} m"


def format_results_table(columns: Sequence[TableColumn]) -> str:
    """Plain-text table with one column per configuration."""
    rows = [
        ("", [f"({c.label})" for c in columns]),
        ("fiber length", [_fmt_length(c.fiber_length_km) for c in columns]),
        ("wavelength", [f"{c.wavelength_nm} nm" for c in columns]),
        ("readout delay", [f"{c.readout_delay_s * 1e6:.0f} us" for c in columns]),
        ("fidelity (%)", [f"{100 * c.fidelity.fidelity_lower_bound:.1f}+-{100 * c.fidelity.fidelity_se:.1f}"
                          for c in columns]),
        ("S (CHSH)", [f"{c.fidelity.chsh_s:.2f}+-{c.fidelity.chsh_se:.2f}" for c in columns]),
        ("SNR", [f"{c.fidelity.snr_measured:.1f}" for c in columns]),
    ]
    w0 = max(len(r[0]) for r in rows)
    widths = [max(len(r[1][j]) for r in rows) for j in range(len(columns))]
    lines = []
    for i, (name, cells) in enumerate(rows):
        lines.append(" | ".join([name.ljust(w0)] + [c.center(w) for c, w in zip(cells, widths)]))
        if i in (0, 3):
            lines.append("-+-".join(["-" * w0] + ["-" * w for w in widths]))
    return "\n".join(lines)


def table_column(log: EventLog, fidelity: FidelityReport) -> TableColumn:
    h = log.header
    return TableColumn(
        label=fidelity.configuration_label,
        fiber_length_km=float(h.get("fiber_length_km", math.nan)),
        wavelength_nm=int(h.get("detection_wavelength_nm", 0)),
        readout_delay_s=float(h.get("readout_delay_s", math.nan)),
        fidelity=fidelity,
    )


def fringe_rows(curves: Sequence[CorrelationCurve]) -> list[tuple[str, float, float, float, int]]:
    """(photon_state, alpha, dark_fraction, se, n_total) rows for plotting."""
    rows = []
    for c in curves:
        for a, k, n in c.points:
            p = k / n if n else math.nan
            se = math.sqrt(p * (1 - p) / n) if n else math.nan
            rows.append((c.photon_state, a, p, se, n))
    return rows
