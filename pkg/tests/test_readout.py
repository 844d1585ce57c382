"""Shot synthesis, mixture fitting and 1-sigma ellipse classification."""

import numpy as np
import pytest

from qcreset import (
    CovarianceCollapseError,
    GaussianComponent,
    MixtureModel,
    ShotSet,
    classify_and_estimate,
    fit_mixture,
    pexc_from_shots,
    synthesize_shots,
)
from qcreset.readout import (
    mixture_from_json,
    mixture_to_json,
    read_shots_csv,
    write_shots_csv,
)


def square_model(separation=6.0, sigma=1.0):
    """Four unit clouds on the corners of a square in the IQ plane."""
    means = np.array([[0.0, 0.0], [separation, 0.0],
                      [0.0, separation], [separation, separation]])
    comps = tuple(
        GaussianComponent(weight=0.25, mean=m, covariance=sigma ** 2 * np.eye(2))
        for m in means)
    return MixtureModel(components=comps), means


class TestSynthesis:
    def test_all_ground_population(self):
        model, _ = square_model()
        shots = synthesize_shots(model, [1.0, 0.0, 0.0, 0.0], 1000, seed=0)
        assert np.all(shots.labels == 0)

    def test_uniform_label_frequencies_within_binomial(self):
        model, _ = square_model()
        n = 100_000
        shots = synthesize_shots(model, [0.25] * 4, n, seed=1)
        sigma = np.sqrt(0.25 * 0.75 / n)
        for j in range(4):
            freq = np.mean(shots.labels == j)
            assert abs(freq - 0.25) < 3 * sigma

    def test_deterministic_under_fixed_seed(self):
        model, _ = square_model()
        a = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 5000, seed=42)
        b = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 5000, seed=42)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_thermal_populations_make_four_clusters(self):
        model, means = square_model(separation=8.0)
        shots = synthesize_shots(model, [0.70, 0.20, 0.07, 0.03], 8000, seed=2)
        for j in range(4):
            cloud = shots.points[shots.labels == j]
            assert cloud.shape[0] > 0
            assert np.linalg.norm(cloud.mean(axis=0) - means[j]) < 0.5

    def test_input_validation(self):
        model, _ = square_model()
        with pytest.raises(ValueError):
            synthesize_shots(model, [0.5, 0.5, 0.5, -0.5], 10, seed=0)
        with pytest.raises(ValueError):
            synthesize_shots(model, [0.25] * 4, 0, seed=0)


class TestMixtureFit:
    def test_recovers_synthetic_model(self):
        model, means = square_model()
        shots = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 10_000, seed=1)
        fit = fit_mixture(shots, init_means=means)
        assert np.abs(fit.means - means).max() < 0.05  # 0.05 of the cloud sigma
        np.testing.assert_allclose(fit.weights, [0.4, 0.3, 0.2, 0.1], atol=0.02)

    def test_em_likelihood_monotone(self):
        model, means = square_model(separation=3.0)
        shots = synthesize_shots(model, [0.3, 0.3, 0.2, 0.2], 2000, seed=3)
        fit = fit_mixture(shots, init_means=means)
        hist = np.array(fit.fit_info["loglik_history"])
        assert np.all(np.diff(hist) >= -1e-12 * np.abs(hist[1:]))

    def test_identical_points_collapse(self):
        shots = ShotSet(points=np.zeros((100, 2)))
        with pytest.raises(CovarianceCollapseError):
            fit_mixture(shots)

    def test_two_clusters_drain_extra_components(self):
        rng = np.random.default_rng(7)
        pts = np.vstack([rng.standard_normal((600, 2)),
                         rng.standard_normal((600, 2)) + [10.0, 0.0]])
        init = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 3.0], [5.0, -3.0]])
        fit = fit_mixture(ShotSet(points=pts), init_means=init)
        drained = sorted(fit.weights)[:2]
        assert all(w < 0.05 for w in drained)
        assert len(fit.fit_info["flags"]) == 2

    def test_label_assignment_matches_init_means(self):
        model, means = square_model()
        shots = synthesize_shots(model, [0.25] * 4, 4000, seed=4)
        # scrambled init order must not scramble state labels
        fit = fit_mixture(shots, init_means=means)
        for j, comp in enumerate(fit.components):
            assert np.linalg.norm(comp.mean - means[j]) < 0.2

    def test_weight_order_fallback_without_init(self):
        model, _ = square_model()
        shots = synthesize_shots(model, [0.6, 0.25, 0.1, 0.05], 8000, seed=5)
        fit = fit_mixture(shots, seed=12)
        assert np.all(np.diff(fit.weights) <= 1e-12)

    def test_deterministic_given_seed_and_init(self):
        model, means = square_model()
        shots = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 3000, seed=6)
        a = fit_mixture(shots, init_means=means)
        b = fit_mixture(shots, init_means=means)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            fit_mixture(ShotSet(points=np.random.default_rng(0).standard_normal((8, 2))))


class TestClassification:
    def test_matched_cloud_one_sigma_fraction(self):
        model, _ = square_model(separation=50.0)
        shots = synthesize_shots(model, [1.0, 0.0, 0.0, 0.0], 100_000, seed=8)
        est = classify_and_estimate(shots, model)
        assert est.inside_fraction == pytest.approx(1 - np.exp(-0.5), abs=0.01)

    def test_all_shots_at_component_mean(self):
        model, means = square_model()
        shots = ShotSet(points=np.tile(means[2], (50, 1)))
        est = classify_and_estimate(shots, model)
        assert est.counts[2] == 50
        assert est.populations[2] == 1.0

    def test_separated_population_estimate(self):
        model, _ = square_model(separation=6.0)
        truth = np.array([0.7, 0.2, 0.08, 0.02])
        shots = synthesize_shots(model, truth, 100_000, seed=9)
        est = classify_and_estimate(shots, model)
        assert np.abs(est.populations - truth).max() < 0.02

    def test_end_to_end_bias_at_4_sigma_separation(self):
        model, means = square_model(separation=4.0)
        truth = np.array([0.55, 0.25, 0.15, 0.05])
        shots = synthesize_shots(model, truth, 100_000, seed=10)
        fit = fit_mixture(shots, init_means=means)
        est = classify_and_estimate(shots, fit)
        assert np.abs(est.populations - truth).max() <= 0.01

    def test_population_normalization_exact(self):
        model, _ = square_model()
        shots = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 5000, seed=11)
        est = classify_and_estimate(shots, model)
        assert est.populations.sum() == 1.0

    def test_no_shot_inside_any_ellipse(self):
        model, _ = square_model(separation=6.0)
        far = ShotSet(points=np.full((10, 2), 1e3))
        with pytest.raises(ValueError):
            classify_and_estimate(far, model)


class TestPexcFromShots:
    def test_pure_ground(self):
        assert pexc_from_shots([1.0, 0.0, 0.0, 0.0]) == 0.0

    def test_arithmetic(self):
        assert pexc_from_shots([0.4, 0.3, 0.2, 0.1]) == pytest.approx(0.6, abs=1e-15)

    def test_consistency_enforced(self):
        with pytest.raises(ValueError):
            pexc_from_shots([0.5, 0.3, 0.2, 0.1])

    def test_matches_thermal_pipeline(self, ladder10, params):
        from qcreset import populations, thermal_state

        truth = populations(thermal_state(ladder10, params.temperature), ladder10)
        model, means = square_model(separation=8.0)
        shots = synthesize_shots(model, truth, 100_000, seed=12)
        fit = fit_mixture(shots, init_means=means)
        est = classify_and_estimate(shots, fit)
        assert abs(pexc_from_shots(est.populations)
                   - pexc_from_shots(truth)) < 0.02


class TestReadoutIO:
    def test_shots_csv_round_trip(self, tmp_path):
        model, _ = square_model()
        shots = synthesize_shots(model, [0.4, 0.3, 0.2, 0.1], 200, seed=13)
        path = tmp_path / "shots.csv"
        write_shots_csv(path, shots)
        back = read_shots_csv(path)
        np.testing.assert_allclose(back.points, shots.points, rtol=1e-10)
        np.testing.assert_array_equal(back.labels, shots.labels)

    def test_mixture_json_round_trip(self):
        model, _ = square_model()
        back = mixture_from_json(mixture_to_json(model))
        np.testing.assert_array_equal(back.means, model.means)
        np.testing.assert_array_equal(back.weights, model.weights)
