"""Unit tests for the random Fourier features service."""
import json
import logging

import numpy as np
import pytest

from gkpd import filtration_service
from gkpd.kernel_service import KernelConfig, WeightedPointCloud, kernel_distance_sq
from gkpd.rff_service import (
    RffMap,
    TargetDimensionRequest,
    WeightedImageCloud,
    apply_rff,
    distortion_report,
    embed_cloud,
    image_squared_distances,
    load_rff_map,
    recompute_weights,
    sample_rff,
    save_rff_map,
    target_dimension,
)
from gkpd.services import InputError
from tests.fixtures.point_cloud_data import RFF_PAIRS, SMALL_CLOUD

UNIT = KernelConfig(sigma=1.0)


@pytest.fixture(scope="module")
def distortion_runs():
    """Twenty maps at t = 616 on 100 Gaussian points in R^20, with their reports."""
    rng = np.random.default_rng(2024)
    cloud = WeightedPointCloud.from_points(rng.normal(size=(100, 20)), UNIT)
    t = target_dimension(TargetDimensionRequest(n=100, epsilon=0.3, delta=0.1, constant=8.0))
    runs = []
    for seed in range(20):
        rff_map = sample_rff(20, t, UNIT, seed=seed)
        runs.append((rff_map, distortion_report(cloud, rff_map, epsilon=0.3)))
    return cloud, runs


class TestTargetDimension:
    """Test the target-dimension bound."""

    def test_point_count_mode(self):
        """C = 8, n = 100, delta = 0.1, eps = 0.3 gives 616."""
        request = TargetDimensionRequest(n=100, epsilon=0.3, delta=0.1, constant=8.0)
        assert target_dimension(request) == 616

    def test_diameter_mode(self):
        """C eps^-2 D ln(r D / (eps delta)), rounded up to even."""
        request = TargetDimensionRequest(
            mode="diameter", diameter_ratio=2.0, dimension=3, epsilon=0.5, delta=0.1
        )
        assert target_dimension(request) == 460

    def test_result_is_even(self):
        """Any request yields an even t >= 2."""
        t = target_dimension(TargetDimensionRequest(n=2, epsilon=1.0, delta=0.9, constant=0.01))
        assert t >= 2 and t % 2 == 0

    def test_missing_mode_parameters(self):
        """Each mode requires its own parameters."""
        with pytest.raises(ValueError):
            TargetDimensionRequest(epsilon=0.3, delta=0.1)
        with pytest.raises(ValueError):
            TargetDimensionRequest(mode="diameter", diameter_ratio=2.0, epsilon=0.3, delta=0.1)

    def test_out_of_range_epsilon(self):
        """epsilon must lie in (0, 1]."""
        with pytest.raises(ValueError):
            TargetDimensionRequest(n=10, epsilon=1.5, delta=0.1)

    def test_dimension_is_logged(self, caplog):
        """The computation is written to the audit log."""
        with caplog.at_level(logging.INFO, logger="gkpd.rff_service"):
            target_dimension(TargetDimensionRequest(n=100, epsilon=0.3, delta=0.1))
        assert "TARGET_DIMENSION | MODE: point-count | C: 8.0" in caplog.text
        assert "T: 616" in caplog.text


class TestSampling:
    """Test map sampling and application."""

    def test_same_seed_same_map(self):
        """Maps are reproducible from the seed."""
        first = sample_rff(3, 10, UNIT, seed=5)
        second = sample_rff(3, 10, UNIT, seed=5)
        np.testing.assert_array_equal(first.omega, second.omega)
        assert first.omega.shape == (5, 3)
        assert first.scale == pytest.approx(np.sqrt(2.0 / 10))

    def test_different_seed_different_map(self):
        """Distinct seeds give distinct frequencies."""
        assert not np.array_equal(sample_rff(3, 10, UNIT, 1).omega, sample_rff(3, 10, UNIT, 2).omega)

    def test_bandwidth_scales_frequencies(self):
        """Frequencies scale as 1 / sigma for a fixed seed."""
        narrow = sample_rff(2, 8, KernelConfig(sigma=0.5), seed=9)
        wide = sample_rff(2, 8, KernelConfig(sigma=2.0), seed=9)
        np.testing.assert_allclose(narrow.omega, 4.0 * wide.omega, rtol=1e-15)

    def test_frequency_moments(self):
        """Frequency entries have mean 0 and variance sigma^-2 over t * D = 10^5 draws."""
        sigma = 2.0
        omega = sample_rff(100, 2000, KernelConfig(sigma=sigma), seed=7).omega
        count = omega.size
        assert count >= 100_000
        variance = 1.0 / sigma ** 2
        assert abs(omega.mean()) <= 5.0 * np.sqrt(variance / count)
        assert abs(omega.var() - variance) <= 5.0 * variance * np.sqrt(2.0 / count)

    def test_odd_target_rejected(self):
        """t must be even."""
        with pytest.raises(InputError, match="even"):
            sample_rff(3, 7, UNIT, seed=0)

    def test_images_have_unit_norm(self):
        """Every image lies on the unit sphere."""
        images = apply_rff(sample_rff(3, 40, UNIT, seed=1), SMALL_CLOUD)
        assert images.shape == (SMALL_CLOUD.shape[0], 40)
        np.testing.assert_allclose(np.sum(images ** 2, axis=1), 1.0, atol=1e-14)

    def test_single_point(self):
        """A 1-D input gives a 1-D image."""
        rff_map = sample_rff(3, 6, UNIT, seed=1)
        image = apply_rff(rff_map, SMALL_CLOUD[0])
        assert image.shape == (6,)
        np.testing.assert_array_equal(image, apply_rff(rff_map, SMALL_CLOUD[:1])[0])

    def test_dimension_mismatch(self):
        """Input dimension must match the map."""
        with pytest.raises(InputError, match="dimension mismatch"):
            apply_rff(sample_rff(2, 6, UNIT, seed=1), SMALL_CLOUD)

    def test_unbiased_squared_distances(self):
        """Mean of ||f(x) - f(y)||^2 over 200 seeds matches D_K^2 within standard errors."""
        points = np.vstack([np.vstack(pair) for pair in RFF_PAIRS])
        estimates = []
        for seed in range(200):
            images = apply_rff(sample_rff(3, 8, UNIT, seed=seed), points)
            estimates.append(np.sum((images[0::2] - images[1::2]) ** 2, axis=1))
        estimates = np.array(estimates)
        mean = estimates.mean(axis=0)
        standard_error = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
        exact = np.array([kernel_distance_sq(x, y, UNIT) for x, y in RFF_PAIRS])
        deviation = np.abs(mean - exact)
        assert np.sum(deviation <= 3.0 * standard_error) >= 19
        assert np.all(deviation <= 4.0 * standard_error)


class TestRecomputedWeights:
    """Test weights recomputed in the image space."""

    def test_formula_on_euclidean_distances(self):
        """Weights are minus the squared distance to the image mean."""
        images = apply_rff(sample_rff(3, 30, UNIT, seed=4), SMALL_CLOUD)
        expected = -np.sum((images - images.mean(axis=0)) ** 2, axis=1)
        np.testing.assert_allclose(recompute_weights(images), expected, atol=1e-14)

    def test_image_cloud_from_images(self):
        """from_images pairs points with their recomputed weights."""
        images = apply_rff(sample_rff(3, 30, UNIT, seed=4), SMALL_CLOUD)
        cloud = WeightedImageCloud.from_images(images)
        np.testing.assert_array_equal(cloud.weights, recompute_weights(images))
        assert cloud.n == SMALL_CLOUD.shape[0]

    def test_weight_count_mismatch(self):
        """One weight per image point."""
        with pytest.raises(InputError):
            WeightedImageCloud(np.zeros((3, 2)), np.zeros(2))

    def test_embed_cloud(self):
        """embed_cloud applies the map and recomputes weights."""
        cloud = WeightedPointCloud.from_points(SMALL_CLOUD, UNIT)
        rff_map = sample_rff(3, 30, UNIT, seed=4)
        image = embed_cloud(cloud, rff_map)
        np.testing.assert_array_equal(image.points, apply_rff(rff_map, SMALL_CLOUD))
        np.testing.assert_allclose(
            image_squared_distances(image.points)[0, 1],
            np.sum((image.points[0] - image.points[1]) ** 2),
            atol=1e-15,
        )


class TestDistortion:
    """Test the distortion audit."""

    def test_epsilon_distortion_most_maps(self, distortion_runs):
        """At least 18 of 20 maps at t = 616 keep every pair within eps = 0.3."""
        _, runs = distortion_runs
        assert runs[0][0].t == 616
        passing = [report for _, report in runs if report.max_rel_error < 0.3]
        assert len(passing) >= 18

    def test_weight_distortion_inherited(self, distortion_runs):
        """On maps that pass, every recomputed weight is within eps |w| of the original."""
        cloud, runs = distortion_runs
        for rff_map, report in runs:
            if not report.distance_certified:
                continue
            image = embed_cloud(cloud, rff_map)
            assert np.all(np.abs(image.weights - cloud.weights) <= 0.3 * np.abs(cloud.weights))
            assert report.max_weight_rel_error < 0.3

    def test_simplex_distortion(self, distortion_runs):
        """Filtration values on a 12-point subsample stay within (1 +- eps) where powers are certified."""
        cloud, runs = distortion_runs
        subsample = WeightedPointCloud.from_points(cloud.points[:12], UNIT)
        reference = filtration_service.build_filtration(subsample, d_max=2)
        certified = 0
        for rff_map, _ in runs:
            if not distortion_report(subsample, rff_map, epsilon=0.3).power_certified:
                continue
            certified += 1
            image = filtration_service.build_filtration(embed_cloud(subsample, rff_map), d_max=2)
            ratios = filtration_service.simplex_distortion(reference, image)["ratio"]
            assert len(ratios) == len(reference)
            assert ratios.between(0.7 - 1e-12, 1.3 + 1e-12).all()
        assert certified >= 18

    def test_report_fields(self):
        """Report lists one error per pair and one per weight."""
        cloud = WeightedPointCloud.from_points(SMALL_CLOUD, UNIT)
        report = distortion_report(cloud, sample_rff(3, 200, UNIT, seed=0), epsilon=0.25)
        assert len(report.pairs) == 15
        assert len(report.pair_rel_errors) == 15
        assert len(report.weight_rel_errors) == 6
        assert len(report.power_rel_errors) == 21
        assert report.excluded_pairs == 0
        assert 0.0 <= report.fraction_within <= 1.0
        assert report.max_rel_error == pytest.approx(max(report.pair_rel_errors))

    def test_coincident_points_excluded(self):
        """Pairs at zero kernel distance are left out."""
        points = np.vstack([SMALL_CLOUD, SMALL_CLOUD[:1]])
        cloud = WeightedPointCloud.from_points(points, UNIT)
        report = distortion_report(cloud, sample_rff(3, 20, UNIT, seed=0))
        assert report.excluded_pairs == 1
        assert len(report.pairs) == 20

    def test_map_dimension_mismatch(self):
        """The map must match the cloud dimension."""
        cloud = WeightedPointCloud.from_points(SMALL_CLOUD, UNIT)
        with pytest.raises(InputError):
            distortion_report(cloud, sample_rff(2, 20, UNIT, seed=0))


class TestMapPersistence:
    """Test saving and loading maps."""

    def test_save_and_load(self, tmp_path):
        """A loaded map reproduces the embedding exactly."""
        rff_map = sample_rff(3, 12, KernelConfig(sigma=0.7), seed=42)
        path = tmp_path / "map.json"
        save_rff_map(path, rff_map)
        loaded = load_rff_map(path)
        assert loaded.t == 12 and loaded.seed == 42 and loaded.sigma == 0.7
        np.testing.assert_array_equal(apply_rff(loaded, SMALL_CLOUD), apply_rff(rff_map, SMALL_CLOUD))

    def test_malformed_document(self, tmp_path):
        """Missing fields are reported as input errors."""
        path = tmp_path / "map.json"
        path.write_text('{"sigma": 1.0}')
        with pytest.raises(InputError, match="malformed"):
            load_rff_map(path)

    def test_inconsistent_scale_rejected(self, tmp_path):
        """A stored scale other than sqrt(2/t) is rejected on load."""
        rff_map = sample_rff(3, 12, UNIT, seed=1)
        path = tmp_path / "map.json"
        save_rff_map(path, rff_map)
        document = json.loads(path.read_text())
        document["scale"] = 1.0
        path.write_text(json.dumps(document))
        with pytest.raises(InputError, match="scale"):
            load_rff_map(path)

    def test_nonpositive_sigma_rejected(self):
        """The stored bandwidth must be positive."""
        with pytest.raises(InputError, match="sigma"):
            RffMap(omega=np.zeros((4, 2)), sigma=0.0, t=8, seed=0, scale=0.5)

    def test_row_count_checked(self):
        """omega must have t/2 rows."""
        with pytest.raises(InputError):
            RffMap(omega=np.zeros((3, 2)), sigma=1.0, t=8, seed=0, scale=0.5)
