"""Experiment configs, batch runners and the command-line interface."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from qcreset import (
    ConfigError,
    NAMED_CONFIGS,
    QcrPair,
    assemble_liouvillian,
    build_dissipators,
    build_drive_hamiltonian,
    build_ladder,
    resolve_named_config,
    run_readout_pipeline,
    run_sweep,
    run_trajectory,
    steady_state_pexc,
    table1_params,
)
from qcreset.cli import main
from qcreset.experiment import ExperimentConfig, ReadoutSpec, SweepSpec, load_experiment

TWO_PI = 2 * np.pi


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestNamedConfigs:
    def test_b_and_d_resolve_to_quoted_rabi_pairs(self):
        _, drive_b, _ = resolve_named_config("B")
        assert drive_b.omega_f0g1 == pytest.approx(TWO_PI * 1.16e6, rel=1e-15)
        assert drive_b.omega_ef == pytest.approx(TWO_PI * 1.43e6, rel=1e-15)
        _, drive_d, _ = resolve_named_config("D")
        assert drive_d.omega_f0g1 == pytest.approx(TWO_PI * 1.73e6, rel=1e-15)
        assert drive_d.omega_ef == pytest.approx(TWO_PI * 2.29e6, rel=1e-15)

    def test_qcr_states_and_voltages(self):
        assert NAMED_CONFIGS["A"]["voltages_uV"] == {
            "V_QCR": 0.0, "V_f0g1": 0.0, "V_ef": 0.0}
        assert NAMED_CONFIGS["D"]["voltages_uV"]["V_f0g1"] == 253.6
        for name, state in (("A", "off"), ("B", "off"), ("C", "on"), ("D", "on")):
            assert resolve_named_config(name)[0] == state

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            resolve_named_config("E")


class TestConfigValidation:
    def test_bad_truncation(self, params):
        with pytest.raises(ConfigError, match="truncation"):
            ExperimentConfig(params=params, truncation=6)

    def test_bad_prepare_sequence(self, params):
        with pytest.raises(ConfigError, match="prepare"):
            ExperimentConfig(params=params, prepare=("pi_ef",))

    def test_sweep_cell_cap(self):
        with pytest.raises(ConfigError, match="sweep.shape"):
            SweepSpec(omega_ef_hz=(0, 1e6), omega_f0g1_hz=(0, 1e6),
                      shape=(200, 200), max_cells=100)

    def test_readout_spec_needs_valid_means(self):
        with pytest.raises(ConfigError, match="readout.means"):
            ReadoutSpec(means=[[0, 0]], covariances=[1, 1, 1, 1])

    def test_readout_spec_shot_count(self):
        with pytest.raises(ConfigError, match="shots_per_time"):
            ReadoutSpec(means=np.zeros((4, 2)), covariances=[1, 1, 1, 1],
                        shots_per_time=0)


class TestTomlLoading:
    def test_full_config_round_trip(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("""
[experiment]
config = "D"
truncation = 10
prepare = ["pi_ge", "pi_ef"]
seed = 7

[time_grid]
t_max = 1.0e-6
samples = 21

[system]
temperature = 0.105
[system.decay_time]
eg_off = 7.0e-6

[sweep]
omega_ef = [0.0, 2.0e6]
omega_f0g1 = [0.0, 2.0e6]
shape = [3, 3]

[readout]
shots_per_time = 500
n_times = 3
[readout.mixture]
means = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]]
covariances = [1.0, 1.0, 1.0, 1.0]
""")
        config = load_experiment(path)
        assert config.config_name == "D"
        assert config.qcr_state == "on"
        assert config.drive.omega_ef == pytest.approx(TWO_PI * 2.29e6)
        assert config.drive.deltas["f0"] == pytest.approx(-TWO_PI * 1.6e6)
        assert config.prepare == ("pi_ge", "pi_ef")
        assert config.params.temperature == 0.105
        assert config.params.gamma_eg.off == pytest.approx(1 / 7.0e-6)
        assert config.params.gamma_eg.on == pytest.approx(1 / 4.9e-6)
        assert config.sweep.shape == (3, 3)
        assert config.readout.shots_per_time == 500
        assert config.seed == 7

    def test_drive_override_of_named_config(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("""
[experiment]
config = "D"
[drive]
omega_f0g1 = 2.0e6
[drive.delta]
f0 = -1.0e6
""")
        config = load_experiment(path)
        assert config.drive.omega_f0g1 == pytest.approx(TWO_PI * 2.0e6)
        assert config.drive.omega_ef == pytest.approx(TWO_PI * 2.29e6)
        assert config.drive.deltas["f0"] == pytest.approx(-TWO_PI * 1.0e6)
        assert config.drive.deltas["e0"] == pytest.approx(-TWO_PI * 2.0e6)

    def test_invalid_value_reports_field_path(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[experiment]\nbath = \"warm\"\n")
        with pytest.raises(ConfigError, match="experiment.bath"):
            load_experiment(path)


class TestRunTrajectory:
    def test_config_a_thermal_is_flat(self, params, tmp_path):
        config = ExperimentConfig(params=params, config_name="A",
                                  qcr_state="off", t_max=2e-6, samples=51)
        paths = run_trajectory(config, tmp_path)
        rows = read_csv_rows(paths["trajectory"])
        pexc = np.array([float(r["P_exc"]) for r in rows])
        assert np.abs(pexc - pexc[0]).max() < 1e-3
        report = json.loads(paths["spectrum"].read_text())
        assert abs(report["pexc_ss"] - pexc[0]) < 1e-3

    def test_deterministic_output_bytes(self, params, tmp_path):
        _, drive, volts = resolve_named_config("D")
        config = ExperimentConfig(params=params, config_name="D", qcr_state="on",
                                  drive=drive, prepare=("pi_ge",),
                                  t_max=1e-6, samples=21, voltages_uV=volts)
        a = run_trajectory(config, tmp_path / "a")
        b = run_trajectory(config, tmp_path / "b")
        for key in ("trajectory", "spectrum"):
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_crossings_written_for_prepared_state(self, params, tmp_path):
        _, drive, _ = resolve_named_config("D")
        config = ExperimentConfig(params=params, qcr_state="on", drive=drive,
                                  prepare=("pi_ge", "pi_ef"),
                                  t_max=4e-6, samples=161)
        paths = run_trajectory(config, tmp_path)
        report = json.loads(paths["spectrum"].read_text())
        crossings = report["delta_pexc_crossings"]
        assert crossings["1e-01"] is not None
        assert 0.0 < crossings["1e-01"] < 4e-6


class TestRunSweep:
    def test_single_cell_at_zero_drive_matches_undriven(self, params, tmp_path):
        config = ExperimentConfig(
            params=params, qcr_state="on",
            sweep=SweepSpec(omega_ef_hz=(0.0, 0.0), omega_f0g1_hz=(0.0, 0.0),
                            shape=(1, 1)))
        paths = run_sweep(config, tmp_path)
        rows = read_csv_rows(paths["sweep"])
        assert len(rows) == 1
        ladder = build_ladder(10, params, "on")
        sup = assemble_liouvillian(
            build_drive_hamiltonian(ladder, config.drive),
            build_dissipators(ladder, params, "on"))
        expected = steady_state_pexc(sup, ladder, rate_scale=params.kappa.on)
        assert float(rows[0]["pexc_ss"]) == pytest.approx(expected, abs=1e-10)

    def test_hot_bath_driving_raises_pexc_over_grid_bulk(self, params, tmp_path):
        _, drive_d, _ = resolve_named_config("D")
        config = ExperimentConfig(
            params=params, qcr_state="on", drive=drive_d,
            sweep=SweepSpec(omega_ef_hz=(0.0, 2.5e6), omega_f0g1_hz=(0.0, 2.5e6),
                            shape=(3, 3)))
        rows = read_csv_rows(run_sweep(config, tmp_path)["sweep"])
        values = {(float(r["omega_ef_hz"]), float(r["omega_f0g1_hz"])):
                  float(r["pexc_ss"]) for r in rows}
        undriven = values[(0.0, 0.0)]
        driven = [v for k, v in values.items() if k != (0.0, 0.0)]
        assert sum(v > undriven for v in driven) >= 0.7 * len(driven)
        assert max(driven) > undriven + 0.01

    def test_parallel_matches_serial_bytes(self, params, tmp_path):
        config = ExperimentConfig(
            params=params, qcr_state="on", truncation=4,
            sweep=SweepSpec(omega_ef_hz=(0.0, 2e6), omega_f0g1_hz=(0.0, 2e6),
                            shape=(2, 3)))
        serial = run_sweep(config, tmp_path / "serial", workers=1)
        parallel = run_sweep(config, tmp_path / "parallel", workers=2)
        assert serial["sweep"].read_bytes() == parallel["sweep"].read_bytes()

    def test_cell_failures_recorded_and_sweep_continues(self, params, tmp_path):
        dead = replace(
            params.with_cold_bath(),
            gamma_eg=QcrPair(0, 0), gamma_fe=QcrPair(0, 0), gamma_hf=QcrPair(0, 0),
            kappa=QcrPair(0, 0), gamma_phi_eg=QcrPair(0, 0),
            gamma_phi_fe=QcrPair(0, 0), gamma_phi_hf=QcrPair(0, 0))
        config = ExperimentConfig(
            params=dead, qcr_state="on", truncation=4,
            sweep=SweepSpec(omega_ef_hz=(1e6, 1e6), omega_f0g1_hz=(0.0, 1e6),
                            shape=(1, 2)))
        rows = read_csv_rows(run_sweep(config, tmp_path)["sweep"])
        assert len(rows) == 2
        assert all("DegenerateSteadyStateError" in r["error"] for r in rows)

    def test_missing_sweep_section_rejected(self, params, tmp_path):
        config = ExperimentConfig(params=params)
        with pytest.raises(ConfigError, match="sweep"):
            run_sweep(config, tmp_path)


class TestRunReadoutPipeline:
    def test_estimates_track_truth_at_8000_shots(self, params, tmp_path):
        _, drive, _ = resolve_named_config("D")
        spec = ReadoutSpec(
            means=np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]]),
            covariances=[1.0, 1.0, 1.0, 1.0],
            shots_per_time=8000, n_times=5)
        config = ExperimentConfig(params=params, qcr_state="on", drive=drive,
                                  prepare=("pi_ge", "pi_ef"), t_max=2e-6,
                                  readout=spec, seed=3)
        paths = run_readout_pipeline(config, tmp_path)
        rows = read_csv_rows(paths["populations"])
        assert len(rows) == 5
        for row in rows:
            assert abs(float(row["est_pexc"]) - float(row["true_pexc"])) < 0.03
        model = json.loads(paths["mixture"].read_text())
        assert model["labels"] == ["g", "e", "f", "h"]
        with open(paths["shots"]) as fh:
            assert sum(1 for _ in fh) == 5 * 8000 + 1

    def test_separated_clouds_track_within_one_percent(self, params, tmp_path):
        _, drive, _ = resolve_named_config("D")
        spec = ReadoutSpec(
            means=np.array([[0.0, 0.0], [12.0, 0.0], [0.0, 12.0], [12.0, 12.0]]),
            covariances=[1.0, 1.0, 1.0, 1.0],
            shots_per_time=100_000, n_times=3)
        config = ExperimentConfig(params=params, qcr_state="on", drive=drive,
                                  prepare=("pi_ge",), t_max=2e-6,
                                  readout=spec, seed=8)
        rows = read_csv_rows(run_readout_pipeline(config, tmp_path)["populations"])
        for row in rows:
            assert abs(float(row["est_pexc"]) - float(row["true_pexc"])) < 0.01

    def test_deterministic(self, params, tmp_path):
        spec = ReadoutSpec(
            means=np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]]),
            covariances=[1.0, 1.0, 1.0, 1.0], shots_per_time=300, n_times=3)
        config = ExperimentConfig(params=params, qcr_state="off",
                                  prepare=("pi_ge",), t_max=1e-6,
                                  readout=spec, seed=5)
        a = run_readout_pipeline(config, tmp_path / "a")
        b = run_readout_pipeline(config, tmp_path / "b")
        for key in ("shots", "mixture", "populations"):
            assert a[key].read_bytes() == b[key].read_bytes()


class TestCli:
    def config_file(self, tmp_path, body):
        path = tmp_path / "exp.toml"
        path.write_text(body)
        return str(path)

    def test_trajectory_verb(self, tmp_path, capsys):
        cfg = self.config_file(tmp_path, """
[experiment]
config = "A"
[time_grid]
t_max = 5.0e-7
samples = 11
""")
        code = main(["trajectory", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "trajectory.csv").exists()
        assert (tmp_path / "out" / "spectrum.json").exists()

    def test_sweep_verb(self, tmp_path):
        cfg = self.config_file(tmp_path, """
[experiment]
qcr_state = "on"
truncation = 4
[sweep]
omega_ef = [0.0, 1.0e6]
omega_f0g1 = [0.0, 1.0e6]
shape = [2, 2]
""")
        code = main(["sweep", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 0
        rows = read_csv_rows(tmp_path / "out" / "sweep.csv")
        assert len(rows) == 4

    def test_spectrum_verb(self, tmp_path):
        cfg = self.config_file(tmp_path, "[experiment]\nconfig = \"C\"\n")
        code = main(["spectrum", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 0
        report = json.loads((tmp_path / "out" / "spectrum.json").read_text())
        assert "rates_nonzero" in report and "rates_with_zero_mode" in report

    def test_readout_verb(self, tmp_path):
        cfg = self.config_file(tmp_path, """
[experiment]
config = "D"
prepare = ["pi_ge"]
[time_grid]
t_max = 1.0e-6
[readout]
shots_per_time = 200
n_times = 2
[readout.mixture]
means = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]]
""")
        code = main(["readout", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "populations.csv").exists()

    def test_calibrate_verb(self, tmp_path):
        t = np.linspace(0, 20e-6, 81)
        values = 0.8 * np.exp(-t / 6.6e-6) + 0.1
        trace_path = tmp_path / "trace.csv"
        with open(trace_path, "w") as fh:
            fh.write("t,value\n")
            for ti, vi in zip(t, values):
                fh.write(f"{ti},{vi}\n")
        out = tmp_path / "fit.json"
        code = main(["calibrate", "--trace", str(trace_path),
                     "--kind", "exponential", "-o", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["parameters"]["T_d"] == pytest.approx(6.6e-6, rel=1e-3)

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        cfg = self.config_file(tmp_path, "[experiment]\ntruncation = 7\n")
        code = main(["trajectory", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_solver_failure_exits_nonzero(self, tmp_path, capsys):
        # all channels switched off: no unique steady state to report
        cfg = self.config_file(tmp_path, """
[experiment]
qcr_state = "on"
[system.decay_time]
eg = inf
fe = inf
hf = inf
aux_resonator = inf
[system.dephasing_time]
eg = inf
fe = inf
hf = inf
""")
        code = main(["spectrum", "-c", cfg, "-o", str(tmp_path / "out")])
        assert code == 1
        assert "error" in capsys.readouterr().err
