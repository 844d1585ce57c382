"""Dressed-state ladder, Hamiltonian and dissipator construction.

The transmon--auxiliary-resonator system is described in the dressed basis
|j,n> (transmon label j in g,e,f,h; photon number n), truncated either to
the four lowest levels {g0, e0, g1, f0} or to the full three-excitation
subspace with ten levels. Levels are ordered by total excitation number,
and within a shell by transmon rank from high to low photon number:

    g0 | e0, g1 | f0, e1, g2 | h0, f1, e2, g3

which makes the four-level basis a prefix of the ten-level one.

The interaction-picture drive Hamiltonian couples e,n <-> f,n at the e-f
Rabi rate and f,n <-> g,n+1 at the f0-g1 Rabi rate (with a sqrt(n+1)
photon enhancement), plus a diagonal correction for residual Stark and
Lamb shifts. Incoherent channels exchange at most one excitation; each
channel is a single collective jump operator summing its transitions
coherently, not a set of per-transition dissipators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.constants import hbar, k as k_B

from .params import (
    LABEL_RANK,
    TRANSMON_LABELS,
    DriveParams,
    SystemParams,
    bose_occupation,
)

__all__ = [
    "DressedLevel",
    "LadderSpec",
    "DensityMatrix",
    "LindbladTerm",
    "build_ladder",
    "bose_occupation",
    "build_drive_hamiltonian",
    "build_dissipators",
    "thermal_state",
    "prepare_initial_state",
    "basis_state",
]

PULSE_PI_GE = "pi_ge"
PULSE_PI_EF = "pi_ef"
_ALLOWED_PULSE_SEQUENCES = ((), (PULSE_PI_GE,), (PULSE_PI_GE, PULSE_PI_EF))

# Hermiticity / trace / positivity tolerances for validated states
_HERM_TOL = 1e-12
_TRACE_TOL = 1e-10
_EIG_TOL = -1e-9


@dataclass(frozen=True)
class DressedLevel:
    """One dressed level |j,n> and its position in the canonical ordering."""

    transmon_label: str
    photon_number: int
    basis_index: int

    def __post_init__(self):
        if self.transmon_label not in TRANSMON_LABELS:
            raise ValueError(f"unknown transmon label {self.transmon_label!r}")
        if self.photon_number < 0:
            raise ValueError("photon_number must be nonnegative")

    @property
    def excitations(self) -> int:
        return LABEL_RANK[self.transmon_label] + self.photon_number

    @property
    def name(self) -> str:
        return f"{self.transmon_label}{self.photon_number}"


def _canonical_levels(truncation: int) -> list[tuple[str, int]]:
    levels = []
    for shell in range(4):
        for label in reversed(TRANSMON_LABELS):
            n = shell - LABEL_RANK[label]
            if n >= 0:
                levels.append((label, n))
    if truncation == 4:
        return levels[:4]
    if truncation == 10:
        return levels
    raise ValueError(f"truncation must be 4 or 10, got {truncation}")


@dataclass(frozen=True)
class LadderSpec:
    """Truncated dressed-state basis with level energies (rad/s)."""

    levels: tuple[DressedLevel, ...]
    energies: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if e.shape != (len(self.levels),):
            raise ValueError("energies must match the number of levels")
        if e[0] != 0.0 or np.any(e < 0.0):
            raise ValueError("energies must be nonnegative with energy(g0) = 0")
        e.flags.writeable = False
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "levels", tuple(self.levels))
        seen = {(lv.transmon_label, lv.photon_number) for lv in self.levels}
        if len(seen) != len(self.levels):
            raise ValueError("duplicate levels in ladder")
        for i, lv in enumerate(self.levels):
            if lv.basis_index != i:
                raise ValueError("basis_index must equal the list position")

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def truncation(self) -> int:
        return self.dim

    def index(self, label: str, photon_number: int) -> int:
        for lv in self.levels:
            if lv.transmon_label == label and lv.photon_number == photon_number:
                return lv.basis_index
        raise KeyError(f"level {label}{photon_number} not in ladder")

    def has(self, label: str, photon_number: int) -> bool:
        return any(lv.transmon_label == label and lv.photon_number == photon_number
                   for lv in self.levels)

    def label_indices(self, label: str) -> list[int]:
        return [lv.basis_index for lv in self.levels if lv.transmon_label == label]

    def names(self) -> list[str]:
        return [lv.name for lv in self.levels]


def build_ladder(truncation, params: SystemParams, qcr_state: str = "off") -> LadderSpec:
    """Canonical dressed ladder with additive level energies.

    Energies are built from the measured transitions, E(j,n) = E_j + n*w_r
    with E_g = 0, so E(f0) - E(g1) comes out at the additive value; the few
    MHz mismatch with the directly measured f0-g1 frequency is not folded
    in here (it is absorbed by DriveParams.deltas where it matters).
    """
    truncation = {"four": 4, "ten": 10}.get(truncation, truncation)
    pairs = _canonical_levels(int(truncation))
    label_energy = {
        "g": 0.0,
        "e": params.omega_ge,
        "f": params.omega_ge + params.omega_ef,
        "h": params.omega_ge + params.omega_ef + params.omega_fh,
    }
    omega_r = params.omega_r.select(qcr_state)
    levels = tuple(
        DressedLevel(label, n, i) for i, (label, n) in enumerate(pairs)
    )
    energies = np.array([label_energy[j] + n * omega_r for j, n in pairs])
    return LadderSpec(levels=levels, energies=energies)


@dataclass(frozen=True)
class DensityMatrix:
    """Validated Hermitian, trace-one, positive-semidefinite state."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.dim, self.dim):
            raise ValueError(f"matrix must be {self.dim}x{self.dim}")
        herm_defect = np.linalg.norm(m - m.conj().T)
        if herm_defect > _HERM_TOL * max(1.0, np.linalg.norm(m)):
            raise ValueError(f"state is not Hermitian (defect {herm_defect:.2e})")
        tr = m.trace().real
        if abs(tr - 1.0) > _TRACE_TOL:
            raise ValueError(f"trace must be 1, got {tr!r}")
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < _EIG_TOL:
            raise ValueError("state has a significantly negative eigenvalue")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_array(cls, matrix: np.ndarray) -> "DensityMatrix":
        matrix = np.asarray(matrix)
        return cls(dim=matrix.shape[0], matrix=matrix)


def basis_state(ladder: LadderSpec, label: str, photon_number: int = 0) -> DensityMatrix:
    """Pure dressed-basis state |j,n><j,n|."""
    m = np.zeros((ladder.dim, ladder.dim), dtype=complex)
    i = ladder.index(label, photon_number)
    m[i, i] = 1.0
    return DensityMatrix.from_array(m)


def build_drive_hamiltonian(ladder: LadderSpec, drive: DriveParams) -> np.ndarray:
    """Two-tone drive Hamiltonian H'/hbar in the dressed basis (rad/s).

    The e-f tone couples (e0,f0) and (e1,f1) at Omega_ef/2; the f0-g1 tone
    couples (g1,f0) and, with a sqrt(2) photon factor, (g2,f1) at
    Omega_f0g1/2. Couplings whose levels fall outside the truncation are
    dropped. The diagonal carries the per-level corrections, so the result
    is Hermitian overall.
    """
    d = ladder.dim
    h = np.zeros((d, d), dtype=complex)
    couplings = [
        (drive.omega_ef / 2.0, ("e", 0), ("f", 0)),
        (drive.omega_ef / 2.0, ("e", 1), ("f", 1)),
        (drive.omega_f0g1 / 2.0, ("g", 1), ("f", 0)),
        (np.sqrt(2.0) * drive.omega_f0g1 / 2.0, ("g", 2), ("f", 1)),
    ]
    for amp, lo, hi in couplings:
        if not (ladder.has(*lo) and ladder.has(*hi)):
            continue
        i, j = ladder.index(*lo), ladder.index(*hi)
        h[i, j] += -1j * amp
        h[j, i] += 1j * amp
    for lv in ladder.levels:
        h[lv.basis_index, lv.basis_index] += drive.delta(
            lv.transmon_label, lv.photon_number)
    return h


class LindbladTerm(NamedTuple):
    """One dissipation channel: rate (1/s) paired with its jump operator."""

    kind: str       # "emission" | "absorption" | "dephasing"
    channel: str    # "eg", "fe", "hf", "resonator"
    rate: float
    operator: np.ndarray


def _collective(ladder: LadderSpec, terms) -> np.ndarray | None:
    """Sum coefficient * |to><from| over the transitions present in the basis."""
    op = np.zeros((ladder.dim, ladder.dim), dtype=complex)
    hit = False
    for coef, to, frm in terms:
        if ladder.has(*to) and ladder.has(*frm):
            op[ladder.index(*to), ladder.index(*frm)] += coef
            hit = True
    return op if hit else None


def build_dissipators(ladder: LadderSpec, params: SystemParams,
                      qcr_state: str) -> list[LindbladTerm]:
    """Collective jump operators for every incoherent channel.

    One term per rate: three transmon emission channels, the resonator
    emission channel with its sqrt(n+1) ladder factors, the four matching
    absorption channels, and three dephasing channels built from projector
    differences carrying an effective rate gamma_phi/2.

    The tabulated relaxation rate of a channel is its total downward rate;
    the upward rate is fixed by detailed balance, rate_up = rate_down *
    nbar/(nbar + 1). Channels whose operator vanishes entirely under the
    truncation are omitted; zero-rate channels with surviving structure
    are kept so rate bookkeeping (e.g. detailed-balance checks) stays
    explicit.
    """
    down = {
        "eg": [(1.0, ("g", n), ("e", n)) for n in range(3)],
        "fe": [(1.0, ("e", n), ("f", n)) for n in range(2)],
        "hf": [(1.0, ("f", 0), ("h", 0))],
        "resonator": [(np.sqrt(n + 1.0), (j, n), (j, n + 1))
                      for j in ("g", "e", "f") for n in range(3)],
    }
    rates_down = {
        "eg": params.gamma_eg.select(qcr_state),
        "fe": params.gamma_fe.select(qcr_state),
        "hf": params.gamma_hf.select(qcr_state),
        "resonator": params.kappa.select(qcr_state),
    }
    occupations = {
        "eg": params.n_eg, "fe": params.n_fe, "hf": params.n_hf,
        "resonator": params.n_r,
    }
    up_channel = {"eg": "ge", "fe": "ef", "hf": "fh", "resonator": "resonator"}

    out: list[LindbladTerm] = []
    for ch, terms in down.items():
        op = _collective(ladder, terms)
        if op is not None:
            out.append(LindbladTerm("emission", ch, rates_down[ch], op))
    for ch, terms in down.items():
        op = _collective(ladder, [(c, frm, to) for c, to, frm in terms])
        if op is not None:
            nbar = occupations[ch]
            rate_up = rates_down[ch] * (nbar / (1.0 + nbar))
            out.append(LindbladTerm("absorption", up_channel[ch], rate_up, op))

    projector_pairs = {
        "eg": ("e", "g"),
        "fe": ("f", "e"),
        "hf": ("h", "f"),
    }
    for ch, (upper, lower) in projector_pairs.items():
        terms = [(1.0, (upper, n), (upper, n)) for n in range(4)]
        terms += [(-1.0, (lower, n), (lower, n)) for n in range(4)]
        op = _collective(ladder, terms)
        if op is not None:
            rate = getattr(params, f"gamma_phi_{ch}").select(qcr_state) / 2.0
            out.append(LindbladTerm("dephasing", ch, rate, op))
    return out


def thermal_state(ladder: LadderSpec, temperature: float) -> DensityMatrix:
    """Thermal state of the undriven ladder, exp(-H0/k_B T)/Z."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    x = hbar * (ladder.energies - ladder.energies.min()) / (k_B * temperature)
    weights = np.exp(-x)
    weights /= weights.sum()
    return DensityMatrix.from_array(np.diag(weights).astype(complex))


def _swap_unitary(ladder: LadderSpec, lower: str, upper: str) -> np.ndarray:
    """sigma_x on each (lower,n) <-> (upper,n) pair; identity elsewhere.

    Pairs whose partner falls outside the truncation (e.g. g3 under a g-e
    swap in the ten-level basis) are left untouched; the population parked
    there is bounded by exp(-3*hbar*w_r/k_B T), about 2e-3 at 110 mK.
    """
    u = np.eye(ladder.dim)
    for lv in ladder.levels:
        if lv.transmon_label != lower:
            continue
        n = lv.photon_number
        if ladder.has(upper, n):
            i, j = lv.basis_index, ladder.index(upper, n)
            u[i, i] = u[j, j] = 0.0
            u[i, j] = u[j, i] = 1.0
    return u


def prepare_initial_state(state: DensityMatrix, pulses: Sequence[str],
                          ladder: LadderSpec) -> DensityMatrix:
    """Apply a pi-pulse preparation sequence to a state.

    Allowed sequences are [], [pi_ge], and [pi_ge, pi_ef], applied in
    order; each pulse is a unitary swap on the matching transmon subspace,
    so trace and spectrum are preserved.
    """
    pulses = tuple(pulses)
    if pulses not in _ALLOWED_PULSE_SEQUENCES:
        raise ValueError(
            f"unsupported pulse sequence {list(pulses)}; allowed: "
            "[], ['pi_ge'], ['pi_ge', 'pi_ef']")
    rho = state.matrix
    for pulse in pulses:
        lower, upper = ("g", "e") if pulse == PULSE_PI_GE else ("e", "f")
        u = _swap_unitary(ladder, lower, upper)
        rho = u @ rho @ u.T
    return DensityMatrix.from_array(rho)
