"""Desk-scale simulator for QCR-assisted two-tone reset of a transmon.

Builds the dressed transmon--auxiliary-resonator ladder, assembles the
driven-dissipative Lindblad generator, analyzes its spectrum and steady
state, integrates reset trajectories, fits calibration traces, and runs a
synthetic single-shot readout pipeline with a four-component Gaussian
mixture.
"""

from .params import (
    ConfigError,
    DriveParams,
    QcrPair,
    SystemParams,
    bose_occupation,
    load_system_params,
    system_params_from_dict,
    table1_params,
)
from .model import (
    DensityMatrix,
    DressedLevel,
    LadderSpec,
    LindbladTerm,
    basis_state,
    build_dissipators,
    build_drive_hamiltonian,
    build_ladder,
    prepare_initial_state,
    thermal_state,
)
from .liouvillian import (
    DegenerateSteadyStateError,
    LiouvillianSpectrum,
    SpectrumError,
    Superoperator,
    assemble_liouvillian,
    liouvillian_eigenvalues,
    spectrum,
    steady_state,
    steady_state_pexc,
)
from .dynamics import (
    StiffnessWarning,
    Trajectory,
    crossing_time,
    delta_pexc,
    evolve,
    evolve_expm_oracle,
    expm_trajectory,
    populations,
)
from .calibrate import (
    FitResult,
    RabiVoltageMap,
    SignalTrace,
    fit_boltzmann_temperature,
    fit_ef_trace,
    fit_exponential,
    fit_f0g1_trace,
    fit_linear_rabi,
    readout_decay_error,
)
from .readout import (
    CovarianceCollapseError,
    GaussianComponent,
    MixtureModel,
    ReadoutEstimate,
    ShotSet,
    classify_and_estimate,
    fit_mixture,
    pexc_from_shots,
    synthesize_shots,
)
from .experiment import (
    ExperimentConfig,
    NAMED_CONFIGS,
    ReadoutSpec,
    SweepSpec,
    load_experiment,
    resolve_named_config,
    run_readout_pipeline,
    run_sweep,
    run_trajectory,
)

__version__ = "0.1.0"
