"""Batch experiment driver: trajectories, steady-state sweeps, readout runs.

Experiments are described by a single TOML file. Frequencies there are
plain Hz (Rabi rates, level corrections, sweep ranges); the named drive
configurations A-D resolve directly to the calibrated Rabi frequencies
and level corrections rather than through the voltage map, so no
calibration error compounds; the pulse voltage amplitudes are carried as
metadata. Outputs are deterministic data files (CSV/JSON): identical
config and seed give byte-identical bytes, independent of worker count.
"""

from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    crossing_time,
    delta_pexc,
    evolve,
    populations,
    write_trajectory_csv,
)
from .liouvillian import (
    DegenerateSteadyStateError,
    SpectrumError,
    Superoperator,
    assemble_liouvillian,
    spectrum,
    write_spectrum_json,
)
from .model import (
    LadderSpec,
    build_dissipators,
    build_drive_hamiltonian,
    build_ladder,
    prepare_initial_state,
    thermal_state,
)
from .params import (
    ConfigError,
    DriveParams,
    SystemParams,
    TWO_PI,
    system_params_from_dict,
    table1_params,
)
from .readout import (
    GaussianComponent,
    MixtureModel,
    STATE_LABELS,
    classify_and_estimate,
    fit_mixture,
    synthesize_shots,
    write_mixture_json,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "SweepSpec",
    "ReadoutSpec",
    "NAMED_CONFIGS",
    "resolve_named_config",
    "load_experiment",
    "run_trajectory",
    "run_sweep",
    "run_readout_pipeline",
]

# Calibrated reset configurations. Rabi frequencies are the fitted values
# quoted for the single-shot runs; voltages are the pulse amplitudes at
# the sample inputs (microvolts), recorded for provenance only. The level
# corrections compensate residual Stark/Lamb shifts of e0, g1 and f0.
NAMED_CONFIGS = {
    "A": {
        "qcr_state": "off",
        "rabi_hz": {"f0g1": 0.0, "ef": 0.0},
        "deltas_hz": {},
        "voltages_uV": {"V_QCR": 0.0, "V_f0g1": 0.0, "V_ef": 0.0},
    },
    "B": {
        "qcr_state": "off",
        "rabi_hz": {"f0g1": 1.16e6, "ef": 1.43e6},
        "deltas_hz": {"e0": -2.0e6, "g1": 0.8e6, "f0": -1.2e6},
        "voltages_uV": {"V_QCR": 0.0, "V_f0g1": 169.1, "V_ef": 10.6},
    },
    "C": {
        "qcr_state": "on",
        "rabi_hz": {"f0g1": 0.0, "ef": 0.0},
        "deltas_hz": {},
        "voltages_uV": {"V_QCR": 160.0, "V_f0g1": 0.0, "V_ef": 0.0},
    },
    "D": {
        "qcr_state": "on",
        "rabi_hz": {"f0g1": 1.73e6, "ef": 2.29e6},
        "deltas_hz": {"e0": -2.0e6, "g1": 0.8e6, "f0": -1.6e6},
        "voltages_uV": {"V_QCR": 160.0, "V_f0g1": 253.6, "V_ef": 16.9},
    },
}

DELTA_PEXC_THRESHOLDS = (1e-1, 1e-2, 1e-3)


def resolve_named_config(name: str) -> tuple[str, DriveParams, dict]:
    """(qcr_state, DriveParams, voltage metadata) for a named configuration."""
    if name not in NAMED_CONFIGS:
        raise ConfigError(f"experiment.config: unknown configuration {name!r}")
    entry = NAMED_CONFIGS[name]
    drive = DriveParams(
        omega_ef=TWO_PI * entry["rabi_hz"]["ef"],
        omega_f0g1=TWO_PI * entry["rabi_hz"]["f0g1"],
        deltas={k: TWO_PI * v for k, v in entry["deltas_hz"].items()},
    )
    return entry["qcr_state"], drive, dict(entry["voltages_uV"])


@dataclass(frozen=True)
class SweepSpec:
    omega_ef_hz: tuple[float, float]
    omega_f0g1_hz: tuple[float, float]
    shape: tuple[int, int]
    max_cells: int = 10_000

    def __post_init__(self):
        n_ef, n_f0g1 = self.shape
        if n_ef < 1 or n_f0g1 < 1:
            raise ConfigError("sweep.shape: both axes need at least one point")
        if n_ef * n_f0g1 > self.max_cells:
            raise ConfigError(
                f"sweep.shape: {n_ef * n_f0g1} cells exceed the cap "
                f"{self.max_cells}")
        for key, rng in (("omega_ef", self.omega_ef_hz),
                         ("omega_f0g1", self.omega_f0g1_hz)):
            if rng[0] < 0 or rng[1] < rng[0]:
                raise ConfigError(f"sweep.{key}: range must be 0 <= lo <= hi")

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        ef = np.linspace(*self.omega_ef_hz, self.shape[0])
        f0g1 = np.linspace(*self.omega_f0g1_hz, self.shape[1])
        return ef, f0g1


@dataclass(frozen=True)
class ReadoutSpec:
    means: np.ndarray
    covariances: np.ndarray
    shots_per_time: int = 8000
    n_times: int = 9

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float)
        if m.shape != (4, 2):
            raise ConfigError("readout.means: expected four IQ mean pairs")
        c = np.asarray(self.covariances, dtype=float)
        if c.shape == (4,):
            c = np.array([v * np.eye(2) for v in c])
        if c.shape != (4, 2, 2):
            raise ConfigError(
                "readout.covariances: expected four 2x2 matrices or scalars")
        if self.shots_per_time < 1:
            raise ConfigError("readout.shots_per_time: must be at least 1")
        if self.n_times < 1:
            raise ConfigError("readout.n_times: must be at least 1")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)

    def truth_model(self) -> MixtureModel:
        comps = tuple(
            GaussianComponent(weight=0.25, mean=self.means[j],
                              covariance=self.covariances[j])
            for j in range(4)
        )
        return MixtureModel(components=comps)


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    truncation: int = 10
    qcr_state: str = "off"
    drive: DriveParams = field(default_factory=DriveParams)
    config_name: str | None = None
    prepare: tuple[str, ...] = ()
    bath: str = "table1"
    t_max: float = 2e-6
    samples: int = 201
    seed: int = 0
    sweep: SweepSpec | None = None
    readout: ReadoutSpec | None = None
    voltages_uV: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.truncation not in (4, 10):
            raise ConfigError("experiment.truncation: must be 4 or 10")
        if self.qcr_state not in ("off", "on"):
            raise ConfigError("experiment.qcr_state: must be 'off' or 'on'")
        if self.bath not in ("table1", "cold"):
            raise ConfigError("experiment.bath: must be 'table1' or 'cold'")
        if self.t_max <= 0:
            raise ConfigError("time_grid.t_max: must be positive")
        if self.samples < 2:
            raise ConfigError("time_grid.samples: must be at least 2")
        if tuple(self.prepare) not in ((), ("pi_ge",), ("pi_ge", "pi_ef")):
            raise ConfigError(
                "experiment.prepare: must be [], ['pi_ge'] or ['pi_ge','pi_ef']")
        object.__setattr__(self, "prepare", tuple(self.prepare))

    def effective_params(self) -> SystemParams:
        return self.params.with_cold_bath() if self.bath == "cold" else self.params

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.samples)


def _drive_from_dict(section: dict, base: DriveParams) -> DriveParams:
    deltas = {k: TWO_PI * float(v)
              for k, v in section.get("delta", {}).items()}
    merged = dict(base.deltas)
    merged.update(deltas)
    try:
        return DriveParams(
            omega_ef=TWO_PI * float(section.get("omega_ef", base.omega_ef / TWO_PI)),
            omega_f0g1=TWO_PI * float(
                section.get("omega_f0g1", base.omega_f0g1 / TWO_PI)),
            deltas=merged,
        )
    except ValueError as exc:
        raise ConfigError(f"drive: {exc}") from exc


def experiment_from_dict(data: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a parsed TOML mapping."""
    exp = data.get("experiment", {})
    grid = data.get("time_grid", {})

    params = (system_params_from_dict(data["system"]) if "system" in data
              else table1_params())

    name = exp.get("config")
    if name is not None:
        qcr_state, drive, voltages = resolve_named_config(str(name))
    else:
        qcr_state, drive, voltages = exp.get("qcr_state", "off"), DriveParams(), {}
    if "qcr_state" in exp:
        qcr_state = exp["qcr_state"]
    if "drive" in data:
        drive = _drive_from_dict(data["drive"], drive)

    sweep = None
    if "sweep" in data:
        s = data["sweep"]
        try:
            sweep = SweepSpec(
                omega_ef_hz=tuple(float(x) for x in s.get("omega_ef", (0.0, 0.0))),
                omega_f0g1_hz=tuple(float(x) for x in s.get("omega_f0g1", (0.0, 0.0))),
                shape=tuple(int(x) for x in s.get("shape", (1, 1))),
                max_cells=int(s.get("max_cells", 10_000)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sweep: {exc}") from exc

    readout = None
    if "readout" in data:
        r = data["readout"]
        mixture = r.get("mixture", {})
        if "means" not in mixture:
            raise ConfigError("readout.mixture.means: required for readout runs")
        readout = ReadoutSpec(
            means=mixture["means"],
            covariances=mixture.get("covariances", [1.0, 1.0, 1.0, 1.0]),
            shots_per_time=int(r.get("shots_per_time", 8000)),
            n_times=int(r.get("n_times", 9)),
        )

    return ExperimentConfig(
        params=params,
        truncation=int(exp.get("truncation", 10)),
        qcr_state=qcr_state,
        drive=drive,
        config_name=str(name) if name is not None else None,
        prepare=tuple(exp.get("prepare", ())),
        bath=str(exp.get("bath", "table1")),
        t_max=float(grid.get("t_max", 2e-6)),
        samples=int(grid.get("samples", 201)),
        seed=int(exp.get("seed", 0)),
        sweep=sweep,
        readout=readout,
        voltages_uV=voltages,
    )


def load_experiment(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return experiment_from_dict(data)


# --- assembly helpers -------------------------------------------------------

def build_generator(config: ExperimentConfig) -> tuple[LadderSpec, Superoperator]:
    params = config.effective_params()
    ladder = build_ladder(config.truncation, params, config.qcr_state)
    h = build_drive_hamiltonian(ladder, config.drive)
    terms = build_dissipators(ladder, params, config.qcr_state)
    return ladder, assemble_liouvillian(h, terms)


def initial_state(config: ExperimentConfig, ladder: LadderSpec):
    params = config.effective_params()
    # a strictly cold bath has no thermal state; seed preparation at 1 mK
    temperature = params.temperature if config.bath == "table1" else 1e-3
    rho = thermal_state(ladder, temperature)
    return prepare_initial_state(rho, config.prepare, ladder)


# --- runners ------------------------------------------------------------

def run_trajectory(config: ExperimentConfig, outdir) -> dict:
    """Evolve one configuration and write trajectory CSV + spectrum JSON."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ladder, sup = build_generator(config)
    rho0 = initial_state(config, ladder)
    traj = evolve(sup, rho0, config.time_grid(), ladder)
    kappa = config.params.kappa.select(config.qcr_state)
    spec = spectrum(sup, rate_scale=kappa)
    pexc_ss = float(1.0 - populations(spec.steady_state, ladder)[0])

    crossings: dict[str, float | None] = {}
    degenerate = bool(abs(traj.pexc[0] - pexc_ss) < 1e-14)
    if degenerate:
        delta = None
    else:
        delta = delta_pexc(traj, pexc_ss)
        for threshold in DELTA_PEXC_THRESHOLDS:
            crossings[f"{threshold:.0e}"] = crossing_time(
                traj.times, delta, threshold)

    traj_path = outdir / "trajectory.csv"
    spec_path = outdir / "spectrum.json"
    write_trajectory_csv(traj_path, traj, delta)
    write_spectrum_json(
        spec_path, spec, ladder,
        pexc_ss=pexc_ss,
        delta_pexc_crossings=crossings,
        delta_pexc_degenerate_start=degenerate,
        config=_config_echo(config),
    )
    return {"trajectory": traj_path, "spectrum": spec_path}


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "name": config.config_name,
        "truncation": config.truncation,
        "qcr_state": config.qcr_state,
        "bath": config.bath,
        "prepare": list(config.prepare),
        "omega_ef_hz": config.drive.omega_ef / TWO_PI,
        "omega_f0g1_hz": config.drive.omega_f0g1 / TWO_PI,
        "deltas_hz": {k: v / TWO_PI for k, v in sorted(config.drive.deltas.items())},
        "voltages_uV": config.voltages_uV,
        "seed": config.seed,
    }


def _sweep_cell(payload) -> dict:
    """Steady-state solve for one grid cell; exceptions become a record."""
    (params, truncation, qcr_state, deltas, ef_hz, f0g1_hz) = payload
    record = {"omega_ef_hz": ef_hz, "omega_f0g1_hz": f0g1_hz}
    try:
        ladder = build_ladder(truncation, params, qcr_state)
        drive = DriveParams(omega_ef=TWO_PI * ef_hz,
                            omega_f0g1=TWO_PI * f0g1_hz, deltas=deltas)
        h = build_drive_hamiltonian(ladder, drive)
        sup = assemble_liouvillian(h, build_dissipators(ladder, params, qcr_state))
        spec = spectrum(sup, rate_scale=params.kappa.select(qcr_state))
        record["pexc_ss"] = 1.0 - populations(spec.steady_state, ladder)[0]
        record["zero_mode_rate"] = float(spec.rates_with_zero[0])
        record["rates"] = [float(r) for r in spec.rates[:10]]
        record["error"] = ""
    except (SpectrumError, DegenerateSteadyStateError, ValueError) as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def run_sweep(config: ExperimentConfig, outdir, workers: int = 1) -> dict:
    """Steady-state map over the (Omega_ef, Omega_f0g1) grid.

    Cells are independent; failures are recorded in the output row and the
    sweep continues. The output ordering is the row-major grid order no
    matter how many workers run.
    """
    if config.sweep is None:
        raise ConfigError("sweep: section required for sweep runs")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    params = config.effective_params()
    ef_axis, f0g1_axis = config.sweep.axes()
    payloads = [
        (params, config.truncation, config.qcr_state, config.drive.deltas,
         float(ef), float(f0g1))
        for ef in ef_axis for f0g1 in f0g1_axis
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_cell, payloads, chunksize=8))
    else:
        records = [_sweep_cell(p) for p in payloads]

    path = Path(outdir) / "sweep.csv"
    lambda_cols = ",".join(f"Lambda_{k}" for k in range(1, 11))
    with open(path, "w") as fh:
        fh.write(f"omega_ef_hz,omega_f0g1_hz,pexc_ss,zero_mode_rate,{lambda_cols},error\n")
        for rec in records:
            if rec["error"]:
                row = [f"{rec['omega_ef_hz']:.12e}", f"{rec['omega_f0g1_hz']:.12e}",
                       "", ""] + [""] * 10 + [rec["error"].replace(",", ";")]
            else:
                rates = rec["rates"] + [float("nan")] * (10 - len(rec["rates"]))
                row = ([f"{rec['omega_ef_hz']:.12e}", f"{rec['omega_f0g1_hz']:.12e}",
                        f"{rec['pexc_ss']:.12e}", f"{rec['zero_mode_rate']:.12e}"]
                       + [f"{r:.12e}" for r in rates] + [""])
            fh.write(",".join(row) + "\n")
    return {"sweep": path}


def run_readout_pipeline(config: ExperimentConfig, outdir) -> dict:
    """Evolve, synthesize shots per reset time, classify, compare populations.

    The mixture is calibrated on the zero-time shots (component labels
    matched to the configured means) and then reused for every reset time,
    mirroring single-shot analysis practice.
    """
    if config.readout is None:
        raise ConfigError("readout: section required for readout runs")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ladder, sup = build_generator(config)
    rho0 = initial_state(config, ladder)
    times = np.linspace(0.0, config.t_max, config.readout.n_times)
    traj = evolve(sup, rho0, times, ladder)

    truth = config.readout.truth_model()
    n_shots = config.readout.shots_per_time
    children = np.random.SeedSequence(config.seed).spawn(len(times))

    shot_sets = [
        synthesize_shots(truth, traj.populations[i], n_shots, children[i])
        for i in range(len(times))
    ]
    fitted = fit_mixture(shot_sets[0], init_means=config.readout.means)

    shots_path = outdir / "shots.csv"
    with open(shots_path, "w") as fh:
        fh.write("t,I,Q,label\n")
        for i, t in enumerate(times):
            shots = shot_sets[i]
            for k in range(shots.n):
                fh.write(f"{t:.12e},{shots.points[k, 0]:.12e},"
                         f"{shots.points[k, 1]:.12e},"
                         f"{STATE_LABELS[shots.labels[k]]}\n")

    model_path = outdir / "mixture.json"
    write_mixture_json(model_path, fitted)

    pops_path = outdir / "populations.csv"
    with open(pops_path, "w") as fh:
        true_cols = ",".join(f"true_p_{s}" for s in STATE_LABELS)
        est_cols = ",".join(f"est_p_{s}" for s in STATE_LABELS)
        fh.write(f"t,{true_cols},{est_cols},true_pexc,est_pexc,inside_fraction\n")
        for i, t in enumerate(times):
            estimate = classify_and_estimate(shot_sets[i], fitted)
            true_p = traj.populations[i]
            est_p = estimate.populations
            fh.write(
                f"{t:.12e},"
                + ",".join(f"{p:.12e}" for p in true_p) + ","
                + ",".join(f"{p:.12e}" for p in est_p) + ","
                + f"{1.0 - true_p[0]:.12e},{1.0 - est_p[0]:.12e},"
                + f"{estimate.inside_fraction:.12e}\n")
    return {"shots": shots_path, "mixture": model_path, "populations": pops_path}
