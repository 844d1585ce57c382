"""Fitting procedures for drive calibration and thermometry.

Rabi angular frequencies and the auxiliary-resonator decay rate are
extracted from time-domain readout traces by least squares against the
four-level master-equation model, with the readout signal modeled as an
affine map of a single transmon population, s(t) = a * p(t) + b (the
affine parameters absorb SPAM errors). The forward model is an ODE solve,
so the nonlinear part uses a coarse grid seeded by the dominant FFT peak
followed by derivative-free simplex refinement; the affine pair is solved
linearly at every candidate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .dynamics import evolve
from .liouvillian import assemble_liouvillian
from .model import basis_state, build_dissipators, build_drive_hamiltonian, build_ladder
from .params import DriveParams, QcrPair, SystemParams, TWO_PI

__all__ = [
    "SignalTrace",
    "FitResult",
    "RabiVoltageMap",
    "fit_f0g1_trace",
    "fit_ef_trace",
    "fit_exponential",
    "fit_linear_rabi",
    "fit_boltzmann_temperature",
    "readout_decay_error",
    "read_trace_csv",
    "write_trace_csv",
    "write_fit_json",
]

_FLAT_SIGNAL_RTOL = 1e-12


@dataclass(frozen=True)
class SignalTrace:
    """Readout signal amplitude versus time, optionally with per-point sigma."""

    times: np.ndarray
    values: np.ndarray
    noise_sigma: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be matching 1-d arrays")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.noise_sigma is not None:
            s = np.asarray(self.noise_sigma, dtype=float)
            if s.shape != t.shape or np.any(s <= 0.0):
                raise ValueError("noise_sigma must be positive and match times")
            object.__setattr__(self, "noise_sigma", s)


@dataclass(frozen=True)
class FitResult:
    """Named parameters with residual norm, covariance and status flags.

    Unidentifiable parameters are flagged, not raised: the best-so-far
    values are always returned.
    """

    parameters: dict
    residual_norm: float
    covariance: np.ndarray | None
    parameter_names: tuple[str, ...]
    converged: bool
    flags: tuple[str, ...] = ()

    def uncertainty(self, name: str) -> float:
        if self.covariance is None or name not in self.parameter_names:
            return float("nan")
        i = self.parameter_names.index(name)
        var = self.covariance[i, i]
        return float(np.sqrt(var)) if var >= 0.0 else float("nan")


@dataclass(frozen=True)
class RabiVoltageMap:
    """Linear drive-voltage to Rabi-angular-frequency calibration."""

    slope: float        # rad/s per volt
    intercept: float    # rad/s
    qcr_state: str = "off"

    def __post_init__(self):
        if self.slope <= 0.0:
            raise ValueError("slope must be positive")

    def omega_at(self, voltage: float) -> float:
        return self.slope * voltage + self.intercept


# --- forward model -----------------------------------------------------------

def _model_population(times: np.ndarray, params: SystemParams, qcr_state: str,
                      *, omega_ef: float = 0.0, omega_f0g1: float = 0.0,
                      kappa: float | None = None, initial: str,
                      column: int) -> np.ndarray:
    """Four-level population trace p_j(t) for one drive candidate."""
    if kappa is not None:
        params = replace(params, kappa=QcrPair.of(kappa))
    ladder = build_ladder(4, params, qcr_state)
    h = build_drive_hamiltonian(
        ladder, DriveParams(omega_ef=omega_ef, omega_f0g1=omega_f0g1))
    sup = assemble_liouvillian(h, build_dissipators(ladder, params, qcr_state))
    rho0 = basis_state(ladder, initial[0], int(initial[1]))
    t = np.asarray(times, dtype=float)
    prepend = t[0] > 0.0
    grid = np.concatenate(([0.0], t)) if prepend else t
    traj = evolve(sup, rho0, grid, ladder, rtol=1e-8)
    pop = traj.populations[:, column]
    return pop[1:] if prepend else pop


def _affine_fit(model: np.ndarray, values: np.ndarray,
                sigma: np.ndarray | None) -> tuple[float, float, float]:
    """Least-squares (a, b) for values ~ a*model + b; returns (a, b, sse)."""
    design = np.column_stack([model, np.ones_like(model)])
    target = values
    if sigma is not None:
        design = design / sigma[:, None]
        target = values / sigma
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def _fft_omega_seed(trace: SignalTrace) -> float | None:
    """Angular frequency of the dominant oscillation in the detrended trace."""
    v = trace.values - trace.values.mean()
    dt = np.diff(trace.times).mean()
    power = np.abs(np.fft.rfft(v)) ** 2
    freqs = np.fft.rfftfreq(v.size, dt)
    if power.size < 3:
        return None
    peak = 1 + int(np.argmax(power[1:]))
    if power[peak] < 1e-12 * power.sum() or freqs[peak] <= 0.0:
        return None
    return TWO_PI * freqs[peak]


def _numerical_covariance(residual_fn, theta: np.ndarray, n_points: int,
                          sse: float) -> np.ndarray | None:
    """Gauss-Newton covariance sigma^2 (J^T J)^-1 from a numerical Jacobian."""
    n_par = theta.size
    if n_points <= n_par:
        return None
    base = residual_fn(theta)
    jac = np.empty((base.size, n_par))
    for i in range(n_par):
        step = 1e-6 * max(abs(theta[i]), 1e-12)
        up = theta.copy()
        up[i] += step
        jac[:, i] = (residual_fn(up) - base) / step
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj) * sse / (n_points - n_par)
    except np.linalg.LinAlgError:
        return None
    return cov


def _flat_trace_result(trace: SignalTrace, names: tuple[str, ...]) -> FitResult:
    params = {name: 0.0 for name in names}
    params["b"] = float(trace.values.mean())
    return FitResult(
        parameters=params,
        residual_norm=float(np.linalg.norm(trace.values - params["b"])),
        covariance=None,
        parameter_names=names,
        converged=False,
        flags=("amplitude_unidentifiable", "omega_unidentifiable"),
    )


def _fit_damped_trace(trace: SignalTrace, params: SystemParams, qcr_state: str,
                      drive_key: str, initial: str, column: int,
                      fit_kappa: bool) -> FitResult:
    names = ("a", "b", f"omega_{drive_key}") + (("kappa",) if fit_kappa else ())
    span = np.ptp(trace.values)
    if span <= _FLAT_SIGNAL_RTOL * max(1.0, np.abs(trace.values).max()):
        return _flat_trace_result(trace, names)

    kappa_table = params.kappa.select(qcr_state)

    def predict(omega: float, kappa: float | None) -> np.ndarray:
        kwargs = {f"omega_{drive_key}": omega}
        return _model_population(trace.times, params, qcr_state,
                                 kappa=kappa, initial=initial, column=column,
                                 **kwargs)

    def objective(x: np.ndarray) -> float:
        omega = np.exp(x[0])
        kappa = np.exp(x[1]) if fit_kappa else None
        model = predict(omega, kappa)
        return _affine_fit(model, trace.values, trace.noise_sigma)[2]

    seed = _fft_omega_seed(trace)
    omega_grid = (seed * np.array([0.8, 1.0, 1.2]) if seed
                  else TWO_PI * np.geomspace(0.3e6, 4e6, 6))
    kappa_grid = (kappa_table * np.array([0.4, 0.7, 1.0, 1.6, 2.5])
                  if fit_kappa else np.array([kappa_table]))
    best, best_sse = None, np.inf
    for omega in omega_grid:
        for kappa in kappa_grid:
            x = np.log([omega, kappa])
            sse = objective(x)
            if sse < best_sse:
                best, best_sse = x, sse
    n_free = 2 if fit_kappa else 1
    res = minimize(objective, best[:n_free], method="Nelder-Mead",
                   options={"xatol": 1e-7, "fatol": 1e30, "maxiter": 400})
    x = res.x
    omega = float(np.exp(x[0]))
    kappa = float(np.exp(x[1])) if fit_kappa else kappa_table
    model = predict(omega, kappa if fit_kappa else None)
    a, b, sse = _affine_fit(model, trace.values, trace.noise_sigma)

    flags = []
    resid_std = np.sqrt(sse / max(trace.values.size - len(names), 1))
    if abs(a) * np.std(model) < 3.0 * resid_std:
        flags.append("amplitude_unidentifiable")
    # the drive strength is unidentifiable when removing the drive fits as well
    undriven = predict(0.0, kappa if fit_kappa else None)
    sse_undriven = _affine_fit(undriven, trace.values, trace.noise_sigma)[2]
    if sse_undriven <= sse * (1.0 + 1e-3) + 1e-30:
        flags.append("omega_unidentifiable")

    values = {"a": a, "b": b, f"omega_{drive_key}": omega}
    if fit_kappa:
        values["kappa"] = kappa

    def residual_fn(theta: np.ndarray) -> np.ndarray:
        m = predict(theta[2], theta[3] if fit_kappa else None)
        r = trace.values - (theta[0] * m + theta[1])
        return r / trace.noise_sigma if trace.noise_sigma is not None else r

    theta = np.array([values[n] for n in names])
    cov = _numerical_covariance(residual_fn, theta, trace.values.size, sse)
    return FitResult(
        parameters=values,
        residual_norm=float(np.sqrt(sse)),
        covariance=cov,
        parameter_names=names,
        converged=bool(res.success) and not flags,
        flags=tuple(flags),
    )


def fit_f0g1_trace(trace: SignalTrace, params: SystemParams,
                   qcr_state: str) -> FitResult:
    """Extract (a, b, Omega_f0g1, kappa) from an f-state decay trace.

    Model: four levels, initial state f0, no e-f drive; the signal follows
    a * p_f(t) + b. Both the f0-g1 Rabi rate and the auxiliary-resonator
    decay rate are free, everything else is pinned to the given parameter
    set for the requested QCR state.
    """
    return _fit_damped_trace(trace, params, qcr_state, drive_key="f0g1",
                             initial="f0", column=2, fit_kappa=True)


def fit_ef_trace(trace: SignalTrace, params: SystemParams) -> FitResult:
    """Extract (a, b, Omega_ef) from an e-state Rabi trace.

    Model: four levels in the QCR-off state, initial state e0, no f0-g1
    drive; the signal follows a * p_e(t) + b.
    """
    return _fit_damped_trace(trace, params, "off", drive_key="ef",
                             initial="e0", column=1, fit_kappa=False)


def fit_exponential(trace: SignalTrace) -> FitResult:
    """Least squares of A*exp(-t/T_d) + C.

    T_d is searched in log space (negative stabilization times are
    rejected by construction) with the amplitude pair solved linearly, so
    the recovered T_d is invariant under affine rescaling of the signal.
    """
    names = ("A", "T_d", "C")
    if trace.times.size < 4:
        raise ValueError("need at least 4 points for an exponential fit")
    span = np.ptp(trace.values)
    if span <= _FLAT_SIGNAL_RTOL * max(1.0, np.abs(trace.values).max()):
        result = _flat_trace_result(trace, names)
        params = dict(result.parameters)
        params["A"], params["T_d"], params["C"] = 0.0, float("nan"), params.pop("b")
        return FitResult(params, result.residual_norm, None, names, False,
                         ("amplitude_unidentifiable", "t_d_unidentifiable"))

    # affine-invariant internal normalization
    offset, scale = trace.values.mean(), span
    z = (trace.values - offset) / scale
    sigma = trace.noise_sigma / scale if trace.noise_sigma is not None else None
    t = trace.times

    def sse_of(log_td: float) -> float:
        model = np.exp(-t / np.exp(log_td))
        return _affine_fit(model, z, sigma)[2]

    t_span = t[-1] - t[0]
    grid = np.log(np.geomspace(max(t_span * 1e-3, np.diff(t).min() / 3),
                               50.0 * t_span, 80))
    sses = [sse_of(x) for x in grid]
    k = int(np.argmin(sses))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(sse_of, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    t_d = float(np.exp(res.x))
    model = np.exp(-t / t_d)
    a_n, c_n, sse_n = _affine_fit(model, z, sigma)
    a, c = a_n * scale, c_n * scale + offset
    sse = sse_n * scale * scale

    flags = []
    resid_std = np.sqrt(sse / max(t.size - 3, 1))
    if abs(a) < 3.0 * resid_std:
        flags.append("t_d_unidentifiable")

    def residual_fn(theta: np.ndarray) -> np.ndarray:
        r = trace.values - (theta[0] * np.exp(-t / theta[1]) + theta[2])
        return r / trace.noise_sigma if trace.noise_sigma is not None else r

    cov = _numerical_covariance(residual_fn, np.array([a, t_d, c]), t.size, sse)
    return FitResult(
        parameters={"A": a, "T_d": t_d, "C": c},
        residual_norm=float(np.sqrt(sse)),
        covariance=cov,
        parameter_names=names,
        converged=not flags,
        flags=tuple(flags),
    )


def fit_linear_rabi(points: Sequence[tuple[float, float]],
                    qcr_state: str = "off") -> RabiVoltageMap:
    """Ordinary least squares of Rabi angular frequency versus drive voltage."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (voltage, omega) points")
    v, omega = pts[:, 0], pts[:, 1]
    if np.ptp(v) == 0.0:
        raise ValueError("degenerate abscissa: all voltages are equal")
    slope, intercept = np.polyfit(v, omega, 1)
    return RabiVoltageMap(slope=float(slope), intercept=float(intercept),
                          qcr_state=qcr_state)


_T_BOUNDS_K = (1e-4, 100.0)


def fit_boltzmann_temperature(pops: Sequence[float],
                              ladder) -> FitResult:
    """Closest-Boltzmann temperature for a set of transmon populations.

    The model populations at temperature T are the label marginals of the
    ladder's thermal state, so feeding back populations of thermal_state(T)
    recovers T exactly. Boundary solutions are reported as zero- or
    infinite-temperature flags; non-monotone (non-thermal) populations are
    flagged but still get a best-fit value.
    """
    p = np.asarray(pops, dtype=float)
    if p.shape != (4,) or np.any(p < -1e-12):
        raise ValueError("populations must be four nonnegative numbers")
    from scipy.constants import hbar, k as k_B

    energies = ladder.energies
    labels = [ladder.label_indices(lbl) for lbl in ("g", "e", "f", "h")]

    def model(temperature: float) -> np.ndarray:
        x = hbar * (energies - energies.min()) / (k_B * temperature)
        w = np.exp(-np.clip(x, None, 700.0))
        w /= w.sum()
        return np.array([w[idx].sum() for idx in labels])

    def sse_of(log10_t: float) -> float:
        diff = model(10.0 ** log10_t) - p
        return float(diff @ diff)

    lo, hi = np.log10(_T_BOUNDS_K)
    grid = np.linspace(lo, hi, 121)
    sses = [sse_of(x) for x in grid]
    k = int(np.argmin(sses))
    res = minimize_scalar(sse_of, bounds=(grid[max(k - 1, 0)],
                                          grid[min(k + 1, grid.size - 1)]),
                          method="bounded", options={"xatol": 1e-12})
    temperature = float(10.0 ** res.x)

    flags = []
    if res.x <= lo + 0.02 * (hi - lo):
        flags.append("zero_temperature_limit")
    if res.x >= hi - 0.02 * (hi - lo):
        flags.append("infinite_temperature_limit")
    if np.any(np.diff(p) > 1e-9):
        flags.append("non_thermal")
    return FitResult(
        parameters={"temperature": temperature},
        residual_norm=float(np.sqrt(sse_of(res.x))),
        covariance=None,
        parameter_names=("temperature",),
        converged=not flags,
        flags=tuple(flags),
    )


def readout_decay_error(gamma_eg: float, t: float) -> float:
    """Decay-induced readout error 1 - exp(-gamma_eg * t)."""
    if gamma_eg < 0.0 or t < 0.0:
        raise ValueError("gamma_eg and t must be nonnegative")
    return float(-np.expm1(-gamma_eg * t))


# --- io ------------------------------------------------------------------

def read_trace_csv(path) -> SignalTrace:
    """Load a trace from CSV columns t, value[, sigma]; header optional."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(x) for x in row if x != ""])
            except ValueError:
                continue  # header line
    if not rows:
        raise ValueError(f"no numeric rows in {path}")
    data = np.array(rows)
    sigma = data[:, 2] if data.shape[1] > 2 else None
    return SignalTrace(times=data[:, 0], values=data[:, 1], noise_sigma=sigma)


def write_trace_csv(path, trace: SignalTrace) -> None:
    with open(path, "w") as fh:
        header = "t,value" + (",sigma" if trace.noise_sigma is not None else "")
        fh.write(header + "\n")
        for i, t in enumerate(trace.times):
            row = f"{t:.12e},{trace.values[i]:.12e}"
            if trace.noise_sigma is not None:
                row += f",{trace.noise_sigma[i]:.12e}"
            fh.write(row + "\n")


def write_fit_json(path, result: FitResult) -> None:
    payload = {
        "parameters": {k: (None if isinstance(v, float) and np.isnan(v) else v)
                       for k, v in result.parameters.items()},
        "uncertainty": {name: (None if np.isnan(result.uncertainty(name)) else
                               result.uncertainty(name))
                        for name in result.parameter_names},
        "residual_norm": result.residual_norm,
        "converged": result.converged,
        "flags": list(result.flags),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
