"""Vectorized Lindblad generator, its spectrum and steady state.

Density matrices are flattened in C (row-major) order, vec(rho)[i*d+j] =
rho[i,j], so vec(A rho B) = kron(A, B.T) vec(rho) and the generator reads

    L = -i (kron(H, 1) - kron(1, H.T))
        + sum_k r_k [ kron(O_k, conj(O_k))
                      - kron(O_k^dag O_k, 1)/2 - kron(1, (O_k^dag O_k).T)/2 ]

Spectra and steady states are computed from the dense non-Hermitian
eigendecomposition; at dimension d <= 10 the d^2 x d^2 matrices are small
enough that sparsity buys nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import DensityMatrix, LadderSpec, LindbladTerm

__all__ = [
    "Superoperator",
    "LiouvillianSpectrum",
    "SpectrumError",
    "DegenerateSteadyStateError",
    "assemble_liouvillian",
    "liouvillian_eigenvalues",
    "spectrum",
    "steady_state",
    "steady_state_pexc",
    "spectrum_report",
    "write_spectrum_json",
    "write_spectrum_csv",
]

# Relative magnitude below which an eigenvalue counts as the zero mode
ZERO_MODE_RTOL = 1e-6


class SpectrumError(RuntimeError):
    """The generator has no stationary eigenvalue: it is not trace preserving."""


class DegenerateSteadyStateError(RuntimeError):
    """More than one eigenvalue sits at zero; the steady state is not unique."""


@dataclass(frozen=True)
class Superoperator:
    """Dense vectorized generator acting on row-major flattened states."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        d2 = self.dim * self.dim
        if m.shape != (d2, d2):
            raise ValueError(f"matrix must be {d2}x{d2} for dim {self.dim}")
        norm = np.linalg.norm(m)
        if norm > 0.0:
            trace_defect = np.linalg.norm(np.eye(self.dim).reshape(-1) @ m)
            if trace_defect > 1e-9 * norm:
                raise ValueError(
                    f"generator is not trace preserving (defect {trace_defect:.2e})")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(rho, dtype=complex).reshape(-1)).reshape(
            self.dim, self.dim)


def _normalize_terms(dissipators: Iterable) -> list[tuple[float, np.ndarray]]:
    pairs = []
    for term in dissipators:
        if isinstance(term, LindbladTerm):
            pairs.append((term.rate, term.operator))
        else:
            rate, op = term
            pairs.append((float(rate), np.asarray(op)))
    return pairs


def assemble_liouvillian(hamiltonian: np.ndarray, dissipators: Iterable) -> Superoperator:
    """Build the generator from H'/hbar and (rate, jump operator) channels."""
    h = np.asarray(hamiltonian, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("hamiltonian must be a square matrix")
    d = h.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, op in _normalize_terms(dissipators):
        if op.shape != (d, d):
            raise ValueError(
                f"jump operator shape {op.shape} does not match dimension {d}")
        if rate == 0.0:
            continue
        if rate < 0.0:
            raise ValueError("dissipator rates must be nonnegative")
        odo = op.conj().T @ op
        lv += rate * (np.kron(op, op.conj())
                      - 0.5 * np.kron(odo, eye)
                      - 0.5 * np.kron(eye, odo.T))
    return Superoperator(dim=d, matrix=lv)


def liouvillian_eigenvalues(sup: Superoperator) -> np.ndarray:
    """All eigenvalues, sorted by ascending |Re| then ascending |Im|."""
    lam = np.linalg.eigvals(sup.matrix)
    order = np.lexsort((np.abs(lam.imag), np.abs(lam.real)))
    return lam[order]


@dataclass(frozen=True)
class LiouvillianSpectrum:
    """Eigenvalues, incoherent rates and the trace-one steady state.

    ``rates`` are the decay rates |Re lambda_j| sorted ascending with the
    zero mode excluded; ``rates_with_zero`` includes it (both conventions
    are exported, since "the n lowest rates" is ambiguous about the
    stationary mode).
    """

    eigenvalues: np.ndarray
    rates: np.ndarray
    steady_state: DensityMatrix

    @property
    def rates_with_zero(self) -> np.ndarray:
        return np.sort(np.abs(self.eigenvalues.real))


def spectrum(sup: Superoperator, rate_scale: float | None = None) -> LiouvillianSpectrum:
    """Full eigendecomposition with steady-state extraction.

    The zero mode is identified as the unique eigenvalue with |lambda| <
    1e-6 * rate_scale (rate_scale defaults to the largest |lambda|).
    Raises SpectrumError when no such eigenvalue exists and
    DegenerateSteadyStateError when several do.
    """
    lam, vecs = np.linalg.eig(sup.matrix)
    scale = float(rate_scale) if rate_scale else float(np.abs(lam).max())
    if scale == 0.0:
        scale = 1.0
    zero_tol = ZERO_MODE_RTOL * scale
    candidates = np.flatnonzero(np.abs(lam) < zero_tol)
    if candidates.size == 0:
        raise SpectrumError(
            f"no eigenvalue within {zero_tol:.3e} of zero; broken generator")
    if candidates.size > 1:
        raise DegenerateSteadyStateError(
            f"{candidates.size} eigenvalues below {zero_tol:.3e}; "
            "steady state is not unique")
    i0 = candidates[0]
    d = sup.dim
    rho = vecs[:, i0].reshape(d, d)
    rho = (rho + rho.conj().T) / 2.0
    trace = rho.trace().real
    if abs(trace) < 1e-12 * np.linalg.norm(rho):
        raise SpectrumError("stationary eigenvector has vanishing trace")
    rho = rho / trace
    # scrub eigenvalue dust from the finite-precision eigenvector
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, 0.0, None)
    rho = (evecs * evals) @ evecs.conj().T
    rho /= rho.trace().real
    order = np.lexsort((np.abs(lam.imag), np.abs(lam.real)))
    lam_sorted = lam[order]
    keep = np.ones(lam.size, dtype=bool)
    keep[np.flatnonzero(order == i0)[0]] = False
    rates = np.sort(np.abs(lam_sorted.real[keep]))
    return LiouvillianSpectrum(
        eigenvalues=lam_sorted,
        rates=rates,
        steady_state=DensityMatrix.from_array(rho),
    )


def steady_state(sup: Superoperator, rate_scale: float | None = None) -> DensityMatrix:
    return spectrum(sup, rate_scale=rate_scale).steady_state


def steady_state_pexc(sup: Superoperator, ladder: LadderSpec,
                      rate_scale: float | None = None) -> float:
    """Asymptotic excitation probability 1 - p_g of the steady state."""
    from .dynamics import populations

    rho = steady_state(sup, rate_scale=rate_scale)
    return 1.0 - populations(rho, ladder)[0]


# --- export ------------------------------------------------------------------

def spectrum_report(spec: LiouvillianSpectrum, ladder: LadderSpec | None = None,
                    n_rates: int = 10) -> dict:
    """JSON-ready summary: eigenvalues, lowest rates (both zero-mode
    conventions) and steady-state populations."""
    report = {
        "eigenvalues": [[float(z.real), float(z.imag)] for z in spec.eigenvalues],
        "rates_nonzero": [float(r) for r in spec.rates[:n_rates]],
        "rates_with_zero_mode": [float(r) for r in spec.rates_with_zero[:n_rates]],
    }
    if ladder is not None:
        from .dynamics import populations

        p = populations(spec.steady_state, ladder)
        report["steady_state_populations"] = {
            label: float(p[i]) for i, label in enumerate(("g", "e", "f", "h"))
        }
        report["steady_state_pexc"] = float(1.0 - p[0])
    return report


def write_spectrum_json(path, spec: LiouvillianSpectrum,
                        ladder: LadderSpec | None = None, **extra) -> None:
    report = spectrum_report(spec, ladder)
    report.update(extra)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_spectrum_csv(path, spec: LiouvillianSpectrum) -> None:
    with open(path, "w") as fh:
        fh.write("re_lambda,im_lambda\n")
        for z in spec.eigenvalues:
            fh.write(f"{z.real:.12e},{z.imag:.12e}\n")
