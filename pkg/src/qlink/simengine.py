"""Monte-Carlo generator of detection-event logs.

Every accepted event is drawn directly instead of looping over attempts.
The number of attempts until a click is geometric with the per-attempt
probability of any click. Given a click, the photon was present with
probability ``p_s / p_any``. The photon arrives uniformly inside the
window and competes with the first noise click, which is exponential with
the window's mean noise count. Only the earliest click is kept.

Events are produced in fixed-size blocks. Block ``b`` draws from a Philox
stream keyed by ``(seed, b)`` and uses a fixed number of variates per
event, so the log does not depend on how many worker threads run the
blocks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from .errors import DomainError
from .linkmodel import (
    LinkConfig,
    decohered_visibilities,
    link_latency,
    noise_rates,
    overall_detection_probability,
    readout_delay,
)
from .qcore import (
    AtomReadoutSetting,
    Basis,
    DensityMatrix,
    atom_dark_marginal,
    chsh_s,
    dephased_state,
    joint_distribution,
)

DEFAULT_ANGLES = tuple(22.5 * k for k in range(8))
DEFAULT_BASES = (Basis.HV, Basis.DA)
ORIGINS = ("signal", "qfc_noise", "dark_count")
BASIS_CODES = (Basis.HV, Basis.DA)
OUTCOMES = ("first", "second")
ATOM_OUTCOMES = ("dark", "ionized")


def default_threads() -> int:
    env = os.environ.get("QLINK_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise DomainError(f"QLINK_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class RunConfig:
    """One simulated acquisition.

    Exactly one of ``target_events`` and ``target_duration_s`` is set.
    ``angle_weights`` are positive integers giving how many schedule slots
    each angle takes per round.
    """

    link: LinkConfig
    configuration_label: str = "A"
    target_events: int | None = 11335
    target_duration_s: float | None = None
    atom_angles: tuple[float, ...] = DEFAULT_ANGLES
    angle_weights: tuple[int, ...] | None = None
    photon_bases: tuple[Basis, ...] = DEFAULT_BASES
    seed: int = 0
    block_size: int = 2048
    max_duration_s: float | None = None

    def __post_init__(self):
        if (self.target_events is None) == (self.target_duration_s is None):
            raise DomainError("set exactly one of target_events and target_duration_s")
        if self.target_events is not None and self.target_events <= 0:
            raise DomainError("target_events must be positive")
        if self.target_duration_s is not None and not self.target_duration_s > 0:
            raise DomainError("target_duration_s must be positive")
        if len(self.atom_angles) == 0:
            raise DomainError("atom_angles must not be empty")
        object.__setattr__(self, "atom_angles", tuple(float(a) for a in self.atom_angles))
        bases = tuple(Basis(b) for b in self.photon_bases)
        if not bases or any(b not in BASIS_CODES for b in bases):
            raise DomainError("photon_bases must be a non-empty subset of {HV, DA}")
        object.__setattr__(self, "photon_bases", bases)
        if self.angle_weights is not None:
            w = tuple(int(x) for x in self.angle_weights)
            if len(w) != len(self.atom_angles) or any(x < 1 for x in w):
                raise DomainError("angle_weights must be positive integers, one per angle")
            object.__setattr__(self, "angle_weights", w)
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must fit in 64 unsigned bits")
        if self.block_size < 1:
            raise DomainError("block_size must be positive")
        if self.max_duration_s is not None and not self.max_duration_s > 0:
            raise DomainError("max_duration_s must be positive")

    def schedule(self) -> list[tuple[Basis, float]]:
        """Round-robin sequence of (photon basis, atom angle) cells."""
        weights = self.angle_weights or (1,) * len(self.atom_angles)
        cells = []
        for angle, w in zip(self.atom_angles, weights):
            for basis in self.photon_bases:
                cells.extend([(basis, angle)] * w)
        return cells


@dataclass(frozen=True)
class EventRecord:
    attempt_index: int
    sim_time: float
    detector: int
    photon_basis: str
    photon_outcome: str
    atom_alpha: float
    atom_outcome: str
    origin: str
    readout_delay: float


@dataclass
class EventLog:
    """Columnar store of accepted events.

    Categorical columns hold small integer codes: ``photon_basis`` indexes
    ``BASIS_CODES``, ``photon_outcome`` indexes ``OUTCOMES``,
    ``atom_outcome`` indexes ``ATOM_OUTCOMES`` and ``origin`` indexes
    ``ORIGINS``.
    """

    attempt_index: np.ndarray
    sim_time: np.ndarray
    detector: np.ndarray
    photon_basis: np.ndarray
    photon_outcome: np.ndarray
    atom_alpha: np.ndarray
    atom_outcome: np.ndarray
    origin: np.ndarray
    readout_delay: np.ndarray
    header: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    COLUMNS = ("attempt_index", "sim_time", "detector", "photon_basis", "photon_outcome",
               "atom_alpha", "atom_outcome", "origin", "readout_delay")

    def __len__(self) -> int:
        return int(self.sim_time.shape[0])

    def record(self, i: int) -> EventRecord:
        return EventRecord(
            attempt_index=int(self.attempt_index[i]),
            sim_time=float(self.sim_time[i]),
            detector=int(self.detector[i]),
            photon_basis=BASIS_CODES[self.photon_basis[i]].value,
            photon_outcome=OUTCOMES[self.photon_outcome[i]],
            atom_alpha=float(self.atom_alpha[i]),
            atom_outcome=ATOM_OUTCOMES[self.atom_outcome[i]],
            origin=ORIGINS[self.origin[i]],
            readout_delay=float(self.readout_delay[i]),
        )

    @property
    def records(self) -> Iterator[EventRecord]:
        return (self.record(i) for i in range(len(self)))

    def select(self, mask: np.ndarray) -> "EventLog":
        cols = {c: getattr(self, c)[mask] for c in self.COLUMNS}
        return EventLog(**cols, header=dict(self.header), summary=dict(self.summary))

    @classmethod
    def from_records(cls, records: Sequence[EventRecord], header: dict | None = None,
                     summary: dict | None = None) -> "EventLog":
        basis_idx = {b.value: i for i, b in enumerate(BASIS_CODES)}
        r = list(records)
        return cls(
            attempt_index=np.array([x.attempt_index for x in r], dtype=np.int64),
            sim_time=np.array([x.sim_time for x in r], dtype=float),
            detector=np.array([x.detector for x in r], dtype=np.int8),
            photon_basis=np.array([basis_idx[x.photon_basis] for x in r], dtype=np.int8),
            photon_outcome=np.array([OUTCOMES.index(x.photon_outcome) for x in r], dtype=np.int8),
            atom_alpha=np.array([x.atom_alpha for x in r], dtype=float),
            atom_outcome=np.array([ATOM_OUTCOMES.index(x.atom_outcome) for x in r], dtype=np.int8),
            origin=np.array([ORIGINS.index(x.origin) for x in r], dtype=np.int8),
            readout_delay=np.array([x.readout_delay for x in r], dtype=float),
            header=header or {},
            summary=summary or {},
        )


# --------------------------------------------------------------------------
# model tables

@dataclass(frozen=True)
class _Tables:
    state: DensityMatrix
    joint: np.ndarray      # (cells, 4): (first,dark), (first,ion), (second,dark), (second,ion)
    noise_dark: np.ndarray  # (cells,) atom dark probability for uncorrelated events
    p_signal: float
    mu_qfc: float
    mu_dark: float
    delay: float


def signal_state(link: LinkConfig) -> DensityMatrix:
    """Atom-photon state at readout, before noise dilution."""
    return dephased_state(*decohered_visibilities(link.decoherence, readout_delay(link)))


def _tables(config: RunConfig) -> _Tables:
    link = config.link
    rho = signal_state(link)
    cells = config.schedule()
    uniq = {}
    for basis, angle in cells:
        key = (basis, angle)
        if key not in uniq:
            setting = AtomReadoutSetting(angle)
            uniq[key] = (joint_distribution(rho, basis, setting).ravel(), atom_dark_marginal(rho, setting))
    joint = np.clip(np.array([uniq[c][0] for c in cells]), 0.0, None)
    joint /= joint.sum(axis=1, keepdims=True)
    noise = noise_rates(link)
    w = link.detectors.window_s
    return _Tables(
        state=rho,
        joint=joint,
        noise_dark=np.array([uniq[c][1] for c in cells]),
        p_signal=overall_detection_probability(link),
        mu_qfc=noise["qfc_noise"] * w,
        mu_dark=noise["dark_count"] * w,
        delay=readout_delay(link),
    )


def detection_any_probability(p_signal: float, mu: float) -> float:
    return -math.expm1(math.log1p(-p_signal) - mu)


def signal_origin_probability(link: LinkConfig) -> float:
    """Probability that an accepted event is a real photon detection."""
    p = overall_detection_probability(link)
    noise = noise_rates(link)
    mu = sum(noise.values()) * link.detectors.window_s
    if mu == 0.0:
        return 1.0
    # photon present and first noise click (if any) later than the photon:
    # E_tau[exp(-mu tau)] = (1 - exp(-mu))/mu
    return p * (-math.expm1(-mu) / mu) / detection_any_probability(p, mu)


def expected_chsh(link: LinkConfig) -> float:
    """CHSH value expected from blind analysis of long logs."""
    return chsh_s(signal_state(link)) * signal_origin_probability(link)


# --------------------------------------------------------------------------
# block generation

@dataclass
class _Block:
    attempts: np.ndarray   # int64, attempts used up to and including the click
    detect_time: np.ndarray  # seconds from block start
    duration: float
    total_attempts: int
    cell: np.ndarray
    detector: np.ndarray
    outcome: np.ndarray
    atom: np.ndarray
    origin: np.ndarray
    lost: np.ndarray


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


def _simulate_block(config: RunConfig, tabs: _Tables, block: int, n: int) -> _Block:
    link = config.link
    t = link.timing
    rng = _rng(config.seed, block)
    mu = tabs.mu_qfc + tabs.mu_dark
    p_any = detection_any_probability(tabs.p_signal, mu)

    n_att = rng.geometric(p_any, n).astype(np.int64)
    u_signal = rng.random(n)
    tau = rng.random(n)
    e_noise = rng.standard_exponential(n)
    u_origin = rng.random(n)
    u_joint = rng.random(n)
    u_noise_det = rng.random(n)
    u_noise_atom = rng.random(n)
    u_lost = rng.random(n)

    photon = u_signal < tabs.p_signal / p_any
    if mu > 0:
        noise_first = e_noise < mu * tau
    else:
        noise_first = np.zeros(n, dtype=bool)
    is_signal = photon & ~noise_first
    qfc = u_origin * mu < tabs.mu_qfc
    origin = np.where(is_signal, 0, np.where(qfc, 1, 2)).astype(np.int8)

    first = block * config.block_size
    ncell = tabs.joint.shape[0]
    cell = ((first + np.arange(n)) % ncell).astype(np.int64)

    cum = np.cumsum(tabs.joint[cell], axis=1)
    k = (u_joint[:, None] >= cum[:, :3]).sum(axis=1)
    sig_outcome = k // 2
    sig_atom = k % 2
    noise_outcome = (u_noise_det >= 0.5).astype(np.int64)
    noise_atom = (u_noise_atom >= tabs.noise_dark[cell]).astype(np.int64)
    outcome = np.where(is_signal, sig_outcome, noise_outcome).astype(np.int8)
    atom = np.where(is_signal, sig_atom, noise_atom).astype(np.int8)

    lost = u_lost >= t.atom_survival
    per_attempt = t.attempt_overhead_s + link_latency(link.fiber)
    search = n_att * per_attempt + (n_att // t.cooling_every) * t.cooling_duration_s
    after = t.readout_extra_delay_s + t.event_overhead_s + lost * t.loading_time_s
    ends = np.cumsum(search + after)
    detect = ends - after
    return _Block(
        attempts=np.cumsum(n_att),
        detect_time=detect,
        duration=float(ends[-1]) if n else 0.0,
        total_attempts=int(n_att.sum()),
        cell=cell,
        detector=(outcome + 1).astype(np.int8),
        outcome=outcome,
        atom=atom,
        origin=origin,
        lost=lost,
    )


def _run_blocks(config: RunConfig, tabs: _Tables, blocks: Sequence[tuple[int, int]], threads: int) -> list[_Block]:
    if threads <= 1 or len(blocks) <= 1:
        return [_simulate_block(config, tabs, b, n) for b, n in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bn: _simulate_block(config, tabs, *bn), blocks))


def simulate_run(config: RunConfig, threads: int | None = None) -> EventLog:
    """Generate the event log of one acquisition.

    The run stops at ``target_events`` accepted events or once the simulated
    clock passes ``target_duration_s``. ``max_duration_s`` truncates a run
    that would take longer; ``summary["truncated"]`` is then true.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    tabs = _tables(config)
    B = config.block_size
    limit = config.max_duration_s
    if config.target_duration_s is not None:
        limit = config.target_duration_s if limit is None else min(limit, config.target_duration_s)

    out: list[_Block] = []
    clock = 0.0
    next_block = 0
    remaining = config.target_events
    done = False
    while not done:
        batch = []
        for _ in range(max(threads, 1)):
            if remaining is not None:
                if remaining <= 0:
                    break
                n = min(B, remaining)
                remaining -= n
            else:
                n = B
            batch.append((next_block, n))
            next_block += 1
        if not batch:
            break
        for blk in _run_blocks(config, tabs, batch, threads):
            out.append(blk)
            clock += blk.duration
            if limit is not None and clock >= limit:
                done = True
                break
        if remaining is not None and remaining <= 0:
            done = True

    cells = config.schedule()
    alphas = np.array([a for _, a in cells])
    bases = np.array([BASIS_CODES.index(b) for b, _ in cells], dtype=np.int8)

    t_off, a_off = 0.0, 0
    parts = {c: [] for c in EventLog.COLUMNS}
    lost_parts = []
    attempts_total = 0
    for blk in out:
        parts["attempt_index"].append(a_off + blk.attempts - 1)
        parts["sim_time"].append(t_off + blk.detect_time)
        parts["detector"].append(blk.detector)
        parts["photon_basis"].append(bases[blk.cell])
        parts["photon_outcome"].append(blk.outcome)
        parts["atom_alpha"].append(alphas[blk.cell])
        parts["atom_outcome"].append(blk.atom)
        parts["origin"].append(blk.origin)
        parts["readout_delay"].append(np.full(len(blk.cell), tabs.delay))
        lost_parts.append(blk.lost)
        attempts_total += blk.total_attempts
        t_off += blk.duration
        a_off += blk.total_attempts
    dtypes = {"attempt_index": np.int64, "detector": np.int8, "photon_basis": np.int8,
              "photon_outcome": np.int8, "atom_outcome": np.int8, "origin": np.int8}
    cols = {c: (np.concatenate(v) if v else np.zeros(0, dtype=dtypes.get(c, float))) for c, v in parts.items()}

    lost = np.concatenate(lost_parts) if lost_parts else np.zeros(0, dtype=bool)

    truncated = False
    duration = t_off
    if limit is not None and duration >= limit:
        keep = cols["sim_time"] < limit
        cols = {c: v[keep] for c, v in cols.items()}
        lost = lost[keep]
        duration = limit
        truncated = config.target_events is not None
        if len(cols["attempt_index"]):
            attempts_total = int(cols["attempt_index"][-1]) + 1
    n_events = len(cols["sim_time"])
    counts = np.bincount(cols["origin"], minlength=3) if n_events else np.zeros(3, dtype=int)

    summary = {
        "attempts": int(attempts_total),
        "events": int(n_events),
        "loading_cycles": int(lost.sum()),
        "simulated_duration_s": float(duration),
        "event_rate_per_min": 60.0 * n_events / duration if duration > 0 else 0.0,
        "origin_counts": {o: int(c) for o, c in zip(ORIGINS, counts)},
        "truncated": bool(truncated),
        "blocks": len(out),
    }
    link = config.link
    header = {
        "configuration_label": config.configuration_label,
        "seed": int(config.seed),
        "code_version": __version__,
        "block_size": B,
        "fiber_length_km": link.fiber.length_km,
        "detection_wavelength_nm": 1522 if link.qfc.enabled else 780,
        "readout_delay_s": tabs.delay,
    }
    return EventLog(**cols, header=header, summary=summary)


def signal_fraction(log: EventLog) -> float:
    """Signal-to-noise event ratio from ground-truth origin tags (inf if noise-free)."""
    if len(log) == 0:
        raise DomainError("empty log")
    n_signal = int(np.count_nonzero(log.origin == 0))
    n_noise = len(log) - n_signal
    if n_noise == 0:
        return math.inf
    return n_signal / n_noise


def expected_dark_fractions(config: RunConfig) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Exact dark-outcome probability per photon state over the schedule angles.

    Mixes the signal conditionals from the state model with the noise-event
    marginal at the accepted-event signal fraction. Returns
    ``{state: (angles, p_dark)}``.
    """
    link = config.link
    rho = signal_state(link)
    w = signal_origin_probability(link)
    angles = np.unique(np.mod(np.array(config.atom_angles), 180.0))
    out = {}
    for b_code, basis in enumerate(BASIS_CODES):
        if basis not in config.photon_bases:
            continue
        for o_code in (0, 1):
            state = {(0, 0): "H", (0, 1): "V", (1, 0): "D", (1, 1): "A"}[(b_code, o_code)]
            p = []
            for a in angles:
                s = AtomReadoutSetting(a)
                joint = joint_distribution(rho, basis, s)
                # photon marginal of a signal event in this basis
                p_photon = joint[o_code].sum()
                p_sig = w * p_photon
                p_noise = (1.0 - w) * 0.5
                p.append((p_sig * joint[o_code, 0] / p_photon + p_noise * atom_dark_marginal(rho, s))
                         / (p_sig + p_noise))
            out[state] = (angles, np.array(p))
    return out
