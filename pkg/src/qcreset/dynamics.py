"""Time evolution of the master equation and excitation-error analysis.

Evolution integrates the linear system d vec(rho)/dt = L vec(rho) with an
adaptive explicit scheme; a matrix-exponential propagator provides an
independent oracle for cross-validation and a fallback when the integrator
gives up. Trajectories report the transmon populations p_j (summed over
photon number), the excitation probability P_exc = 1 - p_g, and the
normalized excitation error Delta P_exc used to define reset completion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .liouvillian import Superoperator
from .model import DensityMatrix, LadderSpec

__all__ = [
    "Trajectory",
    "StiffnessWarning",
    "populations",
    "evolve",
    "evolve_expm_oracle",
    "expm_trajectory",
    "delta_pexc",
    "crossing_time",
    "write_trajectory_csv",
]

POPULATION_LABELS = ("g", "e", "f", "h")


class StiffnessWarning(UserWarning):
    """Adaptive integration failed; result comes from the expm fallback."""


def populations(rho: DensityMatrix | np.ndarray, ladder: LadderSpec) -> np.ndarray:
    """Transmon populations (p_g, p_e, p_f, p_h), each summed over photons."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    diag = np.diag(m).real
    return np.array([diag[ladder.label_indices(label)].sum()
                     for label in POPULATION_LABELS])


def _clean_state(raw: np.ndarray) -> DensityMatrix:
    """Re-Hermitize and clip negative eigenvalue dust below -1e-12."""
    rho = (raw + raw.conj().T) / 2.0
    evals, evecs = np.linalg.eigh(rho)
    if evals.min() < 0.0:
        evals = np.clip(evals, 0.0, None)
        rho = (evecs * evals) @ evecs.conj().T
    return DensityMatrix.from_array(rho / rho.trace().real)


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the master equation.

    ``states`` hold the re-Hermitized, dust-clipped samples used for the
    reported populations; ``raw_states`` keep the integrator output
    untouched. P_exc is 1 - p_g by construction.
    """

    times: np.ndarray
    states: tuple[DensityMatrix, ...]
    raw_states: np.ndarray
    populations: np.ndarray
    pexc: np.ndarray


def _make_trajectory(times: np.ndarray, raws: np.ndarray,
                     ladder: LadderSpec) -> Trajectory:
    states = tuple(_clean_state(r) for r in raws)
    pops = np.array([populations(s, ladder) for s in states])
    return Trajectory(
        times=times,
        states=states,
        raw_states=raws,
        populations=pops,
        pexc=1.0 - pops[:, 0],
    )


def evolve(sup: Superoperator, rho0: DensityMatrix, t_grid: np.ndarray,
           ladder: LadderSpec, rtol: float = 1e-8, atol: float = 1e-12) -> Trajectory:
    """Integrate rho(t) on the given time grid (increasing, starting at 0).

    Uses DOP853 on the vectorized linear system. If the step-size control
    fails (stiffness), a StiffnessWarning is issued and the exact
    matrix-exponential propagator takes over.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or t[0] != 0.0:
        raise ValueError("t_grid must be one-dimensional and start at 0")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("t_grid must be strictly increasing")
    y0 = rho0.matrix.reshape(-1)
    if t.size == 1:
        return _make_trajectory(t, y0.reshape(1, sup.dim, sup.dim), ladder)
    mat = sup.matrix
    sol = solve_ivp(
        lambda _, y: mat @ y,
        t_span=(t[0], t[-1]),
        y0=y0.astype(complex),
        t_eval=t,
        method="DOP853",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        warnings.warn(
            f"adaptive integration failed ({sol.message}); "
            "falling back to the matrix-exponential propagator",
            StiffnessWarning,
        )
        return expm_trajectory(sup, rho0, t, ladder)
    raws = sol.y.T.reshape(-1, sup.dim, sup.dim)
    return _make_trajectory(t, raws, ladder)


def evolve_expm_oracle(sup: Superoperator, rho0: DensityMatrix,
                       t: float) -> DensityMatrix:
    """Exact propagation vec(rho(t)) = expm(L t) vec(rho0)."""
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    propagated = expm(sup.matrix * t) @ rho0.matrix.reshape(-1)
    return _clean_state(propagated.reshape(sup.dim, sup.dim))


def expm_trajectory(sup: Superoperator, rho0: DensityMatrix, t_grid: np.ndarray,
                    ladder: LadderSpec) -> Trajectory:
    """Trajectory from stepwise matrix-exponential propagation.

    One expm per distinct grid spacing; uniform grids cost a single expm
    plus matrix-vector products.
    """
    t = np.asarray(t_grid, dtype=float)
    steps = {}
    y = rho0.matrix.reshape(-1).astype(complex)
    raws = [y.reshape(sup.dim, sup.dim)]
    for dt in np.diff(t):
        # bucket spacings at 12 significant digits so a uniform grid whose
        # diffs differ by float ulps still costs one expm
        key = f"{dt:.12e}"
        if key not in steps:
            steps[key] = expm(sup.matrix * dt)
        y = steps[key] @ y
        raws.append(y.reshape(sup.dim, sup.dim))
    return _make_trajectory(t, np.array(raws), ladder)


def delta_pexc(traj: Trajectory, pexc_ss: float) -> np.ndarray:
    """Normalized excitation error |P_exc(t) - P_ss| / |P_exc(0) - P_ss|."""
    start_gap = abs(traj.pexc[0] - pexc_ss)
    if start_gap < 1e-14:
        raise ValueError(
            "P_exc(0) coincides with the steady-state value; "
            "the normalized error is undefined")
    return np.abs(traj.pexc - pexc_ss) / start_gap


def crossing_time(times: np.ndarray, delta: np.ndarray,
                  threshold: float) -> float | None:
    """First time the normalized error drops below the threshold.

    Log-linear interpolation between the bracketing samples (the tail is
    exponential, so the error decays linearly in log space). Returns None
    if the trajectory never crosses.
    """
    below = np.flatnonzero(delta < threshold)
    if below.size == 0:
        return None
    i = below[0]
    if i == 0:
        return float(times[0])
    d0, d1 = delta[i - 1], delta[i]
    if d0 <= 0.0 or d1 <= 0.0:
        return float(times[i])
    frac = (np.log(d0) - np.log(threshold)) / (np.log(d0) - np.log(d1))
    return float(times[i - 1] + frac * (times[i] - times[i - 1]))


def write_trajectory_csv(path, traj: Trajectory,
                         delta: np.ndarray | None = None) -> None:
    """CSV columns t, p_g, p_e, p_f, p_h, P_exc and, when defined, dP_exc."""
    with open(path, "w") as fh:
        fh.write("t,p_g,p_e,p_f,p_h,P_exc,delta_P_exc\n")
        for i, t in enumerate(traj.times):
            pg, pe, pf, ph = traj.populations[i]
            dp = "" if delta is None else f"{delta[i]:.12e}"
            fh.write(f"{t:.12e},{pg:.12e},{pe:.12e},{pf:.12e},{ph:.12e},"
                     f"{traj.pexc[i]:.12e},{dp}\n")
