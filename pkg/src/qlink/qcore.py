"""Finite-dimensional state algebra for the photon (qubit) x atom (spin-1) system.

Conventions
-----------
* Tensor order is photon (x) atom.
* Photon computational basis is (H, V). Circular states are
  ``L = (H + iV)/sqrt2`` and ``R = (H - iV)/sqrt2``, which is the same as
  ``H = (L + R)/sqrt2`` and ``V = -i(L - R)/sqrt2``. With this choice both
  forms of the atom-photon Bell state hold with no extra phase.
* Atom basis is ordered (m_F = -1, 0, +1); ``down_z = m_F -1``, ``up_z = m_F +1``.
  The x-basis qubit states are ``up_x = (down_z + up_z)/sqrt2`` and
  ``down_x = i(down_z - up_z)/sqrt2``.
* CHSH pairing: photon bases (a, a') = (HV, DA), atom angles (b, b') =
  (22.5, 67.5) deg, ``S = |E(a,b) - E(a,b')| + |E(a',b) + E(a',b')|``.
  This reaches 2*sqrt2 on the ideal state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

ATOL = 1e-12
PSD_TOL = -1e-10
PHOTON_DIM = 2
ATOM_DIM = 3

SQRT2 = math.sqrt(2.0)


class Basis(str, Enum):
    HV = "HV"
    DA = "DA"
    RL = "RL"


class Outcome(str, Enum):
    FIRST = "first"
    SECOND = "second"


class AtomOutcome(str, Enum):
    DARK = "dark"
    IONIZED = "ionized"


# photon state label -> (basis, outcome)
PHOTON_STATES = {
    "H": (Basis.HV, Outcome.FIRST),
    "V": (Basis.HV, Outcome.SECOND),
    "D": (Basis.DA, Outcome.FIRST),
    "A": (Basis.DA, Outcome.SECOND),
    "R": (Basis.RL, Outcome.FIRST),
    "L": (Basis.RL, Outcome.SECOND),
}


def photon_state_label(basis: Basis | str, outcome: Outcome | str) -> str:
    key = (Basis(basis), Outcome(outcome))
    for label, value in PHOTON_STATES.items():
        if value == key:
            return label
    raise DomainError(f"no photon state for {key}")


# --------------------------------------------------------------------------
# kets

KET_H = np.array([1.0, 0.0], dtype=complex)
KET_V = np.array([0.0, 1.0], dtype=complex)
KET_L = (KET_H + 1j * KET_V) / SQRT2
KET_R = (KET_H - 1j * KET_V) / SQRT2
KET_D = (KET_H + KET_V) / SQRT2
KET_A = (KET_H - KET_V) / SQRT2

KET_DOWN_Z = np.array([1.0, 0.0, 0.0], dtype=complex)
KET_ZERO = np.array([0.0, 1.0, 0.0], dtype=complex)
KET_UP_Z = np.array([0.0, 0.0, 1.0], dtype=complex)
KET_UP_X = (KET_DOWN_Z + KET_UP_Z) / SQRT2
KET_DOWN_X = 1j * (KET_DOWN_Z - KET_UP_Z) / SQRT2

_PHOTON_KETS = {
    (Basis.HV, Outcome.FIRST): KET_H,
    (Basis.HV, Outcome.SECOND): KET_V,
    (Basis.DA, Outcome.FIRST): KET_D,
    (Basis.DA, Outcome.SECOND): KET_A,
    (Basis.RL, Outcome.FIRST): KET_R,
    (Basis.RL, Outcome.SECOND): KET_L,
}


def allclose(a, b, atol: float = ATOL) -> bool:
    """Entry-wise comparison of complex arrays with an absolute tolerance."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= atol))


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    dims: tuple[int, ...] = (PHOTON_DIM, ATOM_DIM)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != int(np.prod(self.dims)):
            raise DomainError(f"{amps.size} amplitudes do not match dims {self.dims}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > ATOL:
            raise DomainError(f"state norm {norm!r} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def density_matrix(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), dims=self.dims)


@dataclass(frozen=True)
class DensityMatrix:
    """Unit-trace Hermitian positive-semidefinite matrix with a declared
    tensor factorization ``dims`` (``None`` for an undeclared one)."""

    matrix: np.ndarray
    dims: tuple[int, ...] | None = (PHOTON_DIM, ATOM_DIM)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError(f"density matrix must be square, got shape {m.shape}")
        if self.dims is not None and int(np.prod(self.dims)) != m.shape[0]:
            raise DomainError(f"dims {self.dims} do not match matrix size {m.shape[0]}")
        if not allclose(m, m.conj().T):
            raise DomainError("density matrix is not Hermitian")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > ATOL:
            raise DomainError(f"trace {tr!r} differs from 1")
        herm = 0.5 * (m + m.conj().T)
        if float(np.linalg.eigvalsh(herm).min()) < PSD_TOL:
            raise DomainError("density matrix is not positive semidefinite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))


# --------------------------------------------------------------------------
# states

def bell_state_atom_photon() -> PureState:
    """``(|L>|down_z> + |R>|up_z>)/sqrt2`` in photon (x) atom order."""
    amps = (np.kron(KET_L, KET_DOWN_Z) + np.kron(KET_R, KET_UP_Z)) / SQRT2
    return PureState(amps)


def bell_state_atom_atom() -> PureState:
    """``(|down,down> + |up,up>)/sqrt2`` inside the m_F = +-1 subspaces."""
    amps = (np.kron(KET_DOWN_Z, KET_DOWN_Z) + np.kron(KET_UP_Z, KET_UP_Z)) / SQRT2
    return PureState(amps, dims=(ATOM_DIM, ATOM_DIM))


def _check_visibility(v: float) -> float:
    v = float(v)
    if not 0.0 <= v <= 1.0 or math.isnan(v):
        raise DomainError(f"visibility {v!r} outside [0, 1]")
    return v


def werner_2x3(v: float) -> DensityMatrix:
    v = _check_visibility(v)
    psi = bell_state_atom_photon().amplitudes
    rho = v * np.outer(psi, psi.conj()) + (1.0 - v) * np.eye(6) / 6.0
    return DensityMatrix(rho)


def werner_atom_atom(v: float) -> DensityMatrix:
    v = _check_visibility(v)
    phi = bell_state_atom_atom().amplitudes
    rho = v * np.outer(phi, phi.conj()) + (1.0 - v) * np.eye(9) / 9.0
    return DensityMatrix(rho, dims=(ATOM_DIM, ATOM_DIM))


def fidelity_to_target(rho: DensityMatrix, target: PureState) -> float:
    if rho.dim != target.dim:
        raise DomainError(f"dimension mismatch: rho {rho.dim}, target {target.dim}")
    a = target.amplitudes
    f = complex(np.vdot(a, rho.matrix @ a))
    if abs(f.imag) > 1e-10:
        raise DomainError(f"fidelity has imaginary part {f.imag!r}")
    return float(min(1.0, max(0.0, f.real)))


def average_visibility(v_h: float, v_v: float, v_d: float, v_a: float) -> float:
    """Three-basis mean with the unmeasured circular basis set equal to D/A."""
    return ((v_h + v_v) / 2.0 + (v_d + v_a)) / 3.0


def fidelity_lower_bound(v_bar: float) -> float:
    """Fidelity of the 2x3 Werner state with visibility ``v_bar``."""
    return 1.0 / 6.0 + 5.0 / 6.0 * v_bar


def atom_atom_fidelity(v: float) -> float:
    return 1.0 / 9.0 + 8.0 / 9.0 * v


# --------------------------------------------------------------------------
# measurement settings and projectors

@dataclass(frozen=True)
class PhotonSetting:
    basis: Basis
    outcome: Outcome

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        object.__setattr__(self, "outcome", Outcome(self.outcome))

    @classmethod
    def from_label(cls, label: str) -> "PhotonSetting":
        basis, outcome = PHOTON_STATES[label]
        return cls(basis, outcome)


@dataclass(frozen=True)
class AtomReadoutSetting:
    """Readout polarization angle ``alpha`` (deg, 0 = vertical) and phase ``phi`` (rad)."""

    alpha: float
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha) % 180.0)
        object.__setattr__(self, "phi", float(self.phi))


def photon_projector(setting: PhotonSetting) -> np.ndarray:
    ket = _PHOTON_KETS[(setting.basis, setting.outcome)]
    return np.outer(ket, ket.conj())


def dark_state(setting: AtomReadoutSetting) -> np.ndarray:
    """Atom state left unexcited by the readout pulse."""
    a = math.radians(setting.alpha)
    phase = complex(math.cos(setting.phi), math.sin(setting.phi))
    return (math.sin(a) * (KET_DOWN_Z - KET_UP_Z) / SQRT2
            + math.cos(a) * phase * 1j * (KET_DOWN_Z + KET_UP_Z) / SQRT2)


def bright_state(setting: AtomReadoutSetting) -> np.ndarray:
    a = math.radians(setting.alpha)
    phase = complex(math.cos(setting.phi), math.sin(setting.phi))
    return (-math.cos(a) * (KET_DOWN_Z - KET_UP_Z) / SQRT2
            + math.sin(a) * phase * 1j * (KET_DOWN_Z + KET_UP_Z) / SQRT2)


def dark_state_projector(setting: AtomReadoutSetting) -> np.ndarray:
    ket = dark_state(setting)
    return np.outer(ket, ket.conj())


def _require_atom_photon(rho: DensityMatrix) -> None:
    if rho.dim != PHOTON_DIM * ATOM_DIM:
        raise DomainError(f"expected a 6-dimensional atom-photon state, got dim {rho.dim}")


def joint_probability(rho: DensityMatrix, ps: PhotonSetting, as_: AtomReadoutSetting,
                      atom_outcome: AtomOutcome | str) -> float:
    _require_atom_photon(rho)
    p_dark = dark_state_projector(as_)
    p_atom = p_dark if AtomOutcome(atom_outcome) is AtomOutcome.DARK else np.eye(ATOM_DIM) - p_dark
    op = np.kron(photon_projector(ps), p_atom)
    p = float(np.trace(rho.matrix @ op).real)
    return min(1.0, max(0.0, p))


def joint_distribution(rho: DensityMatrix, basis: Basis | str, as_: AtomReadoutSetting) -> np.ndarray:
    """2x2 array ``[photon outcome (first, second)][atom outcome (dark, ionized)]``."""
    basis = Basis(basis)
    out = np.empty((2, 2))
    for i, o in enumerate((Outcome.FIRST, Outcome.SECOND)):
        for j, a in enumerate((AtomOutcome.DARK, AtomOutcome.IONIZED)):
            out[i, j] = joint_probability(rho, PhotonSetting(basis, o), as_, a)
    return out


def dark_probability_given_photon(rho: DensityMatrix, ps: PhotonSetting, as_: AtomReadoutSetting) -> float:
    dark = joint_probability(rho, ps, as_, AtomOutcome.DARK)
    ion = joint_probability(rho, ps, as_, AtomOutcome.IONIZED)
    return dark / (dark + ion)


def atom_dark_marginal(rho: DensityMatrix, as_: AtomReadoutSetting) -> float:
    """Dark-state probability of the atom with the photon traced out."""
    atom = partial_trace(rho, keep="atom")
    return float(np.trace(atom.matrix @ dark_state_projector(as_)).real)


def correlator(rho: DensityMatrix, basis: Basis | str, as_: AtomReadoutSetting) -> float:
    """``p(same) - p(different)`` with same = (first, dark) or (second, ionized)."""
    d = joint_distribution(rho, basis, as_)
    return float(d[0, 0] + d[1, 1] - d[0, 1] - d[1, 0])


def chsh_s(rho: DensityMatrix, photon_bases: Sequence[Basis | str] = (Basis.HV, Basis.DA),
           atom_angles: Sequence[AtomReadoutSetting | float] = (22.5, 67.5)) -> float:
    _require_atom_photon(rho)
    a, a2 = (Basis(b) for b in photon_bases)
    b, b2 = (s if isinstance(s, AtomReadoutSetting) else AtomReadoutSetting(s) for s in atom_angles)
    return (abs(correlator(rho, a, b) - correlator(rho, a, b2))
            + abs(correlator(rho, a2, b) + correlator(rho, a2, b2)))


def partial_trace(rho: DensityMatrix, keep: str) -> DensityMatrix:
    """Reduced state of the ``photon`` or ``atom`` factor (first or second for 3x3)."""
    if rho.dims is None or len(rho.dims) != 2:
        raise DomainError("partial trace needs a declared two-factor tensor structure")
    d1, d2 = rho.dims
    t = rho.matrix.reshape(d1, d2, d1, d2)
    if keep in ("photon", "first"):
        red, dims = np.einsum("ijkj->ik", t), (d1,)
    elif keep in ("atom", "second"):
        red, dims = np.einsum("ijil->jl", t), (d2,)
    else:
        raise DomainError(f"unknown factor {keep!r}")
    return DensityMatrix(red, dims=dims)


# --------------------------------------------------------------------------
# anisotropically dephased atom-photon state

@dataclass(frozen=True)
class QubitChannel:
    """Affine Bloch map ``r -> diag(mx, my, mz) r + (tx, 0, tz)`` acting on the
    atomic qubit written in the (up_x, down_x) basis; m_F = 0 is untouched."""

    mx: float = 1.0
    my: float = 1.0
    mz: float = 1.0
    tx: float = 0.0
    tz: float = 0.0

    def apply(self, op: np.ndarray) -> np.ndarray:
        """Apply to a 2x2 operator in the (up_x, down_x) basis."""
        op = np.asarray(op, dtype=complex)
        tr = op[0, 0] + op[1, 1]
        x = op[0, 1] + op[1, 0]
        y = 1j * (op[0, 1] - op[1, 0])
        z = op[0, 0] - op[1, 1]
        x, y, z = self.mx * x + self.tx * tr, self.my * y, self.mz * z + self.tz * tr
        return 0.5 * np.array([[tr + z, x - 1j * y], [x + 1j * y, tr - z]])

    def choi(self) -> np.ndarray:
        c = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            for j in range(2):
                e = np.zeros((2, 2), dtype=complex)
                e[i, j] = 1.0
                c[2 * i:2 * i + 2, 2 * j:2 * j + 2] = self.apply(e)
        return c

    def is_completely_positive(self, tol: float = 1e-12) -> bool:
        return float(np.linalg.eigvalsh(self.choi()).min()) >= -tol


# columns: up_x, down_x expressed in the (m=-1, 0, +1) basis
_X_FRAME = np.column_stack([KET_UP_X, KET_DOWN_X])


def channel_for_visibilities(v_h: float, v_v: float, v_d: float, v_a: float,
                             iterations: int = 200) -> QubitChannel:
    """Qubit channel whose photon-conditioned dark-state fringes have the given
    contrasts ``(max - min)/(max + min)`` for the H, V, D and A outcomes.

    The H/V conditional Bloch vectors are ``+-mz z + t`` and the D/A ones
    ``+-mx x + t``; fringe contrast is the length of the vector. The y
    contraction is chosen as large as complete positivity allows.
    """
    for v in (v_h, v_v, v_d, v_a):
        _check_visibility(v)
    tau2 = 0.0
    mx = mz = tx = tz = 0.0
    for _ in range(iterations):
        mz2 = 0.5 * (v_h ** 2 + v_v ** 2) - tau2
        mx2 = 0.5 * (v_d ** 2 + v_a ** 2) - tau2
        if mz2 <= 0.0 or mx2 <= 0.0:
            raise DomainError("visibility set cannot be realized by a qubit channel")
        mz, mx = math.sqrt(mz2), math.sqrt(mx2)
        tz = (v_h ** 2 - v_v ** 2) / (4.0 * mz)
        tx = (v_d ** 2 - v_a ** 2) / (4.0 * mx)
        new = tx * tx + tz * tz
        if abs(new - tau2) < 1e-16:
            break
        tau2 = new
    grid = np.linspace(-1.0, 1.0, 401)
    ok = [g for g in grid if QubitChannel(mx, g, mz, tx, tz).is_completely_positive()]
    if not ok:
        raise DomainError("visibility set is not reachable by a completely positive channel")
    lo = float(max(ok))
    hi = min(1.0, lo + float(grid[1] - grid[0]))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if QubitChannel(mx, mid, mz, tx, tz).is_completely_positive():
            lo = mid
        else:
            hi = mid
    return QubitChannel(mx, lo, mz, tx, tz)


def apply_atom_channel(rho: DensityMatrix, channel: QubitChannel) -> DensityMatrix:
    _require_atom_photon(rho)
    blocks = rho.matrix.reshape(PHOTON_DIM, ATOM_DIM, PHOTON_DIM, ATOM_DIM)
    out = np.zeros_like(blocks)
    u = _X_FRAME
    proj_q = u @ u.conj().T
    for i in range(PHOTON_DIM):
        for j in range(PHOTON_DIM):
            a = blocks[i, :, j, :]
            new_q = channel.apply(u.conj().T @ a @ u)
            # anything touching m_F = 0 passes through unchanged
            rest = a - proj_q @ a @ proj_q
            out[i, :, j, :] = u @ new_q @ u.conj().T + rest
    m = out.reshape(6, 6)
    m = 0.5 * (m + m.conj().T)
    return DensityMatrix(m)


def dephased_state(v_h: float, v_v: float, v_d: float, v_a: float) -> DensityMatrix:
    """Single valid atom-photon state whose four photon-conditioned fringe
    contrasts equal the given per-state visibilities."""
    channel = channel_for_visibilities(v_h, v_v, v_d, v_a)
    return apply_atom_channel(bell_state_atom_photon().density_matrix(), channel)


def fringe(rho: DensityMatrix, photon_state: str, alphas: Iterable[float]) -> np.ndarray:
    """Conditional dark-state probability versus readout angle for one photon outcome."""
    ps = PhotonSetting.from_label(photon_state)
    return np.array([dark_probability_given_photon(rho, ps, AtomReadoutSetting(a)) for a in alphas])
