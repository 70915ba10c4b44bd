"""Region sampling and the sample-complexity formulas."""

import numpy as np
import pytest

from pacmodel import (
    NormBallRegion,
    achieved_epsilon,
    derive_seed,
    max_key_features,
    required_samples_full,
    required_samples_margin,
    seed_stream,
    uniform_sample,
)


class TestRegion:
    def test_bounds_without_clip(self):
        region = NormBallRegion(center=np.array([0.5, -0.5]), radius=0.25)
        lo, hi = region.bounds()
        assert lo.tolist() == [0.25, -0.75]
        assert hi.tolist() == [0.75, -0.25]

    def test_clip_trims_the_ball(self):
        region = NormBallRegion(center=np.array([0.8]), radius=0.5, clip=(0.0, 1.0))
        lo, hi = region.bounds()
        assert lo[0] == pytest.approx(0.3) and hi[0] == 1.0

    def test_empty_intersection_rejected(self):
        with pytest.raises(ValueError, match="intersect"):
            NormBallRegion(center=np.array([5.0]), radius=0.5, clip=(0.0, 1.0))

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            NormBallRegion(center=np.zeros(2), radius=0.0)


class TestUniformSample:
    def test_all_points_inside(self):
        region = NormBallRegion(center=np.array([0.9, 0.1]), radius=0.3, clip=(0.0, 1.0))
        batch = uniform_sample(region, 5000, seed=42)
        lo, hi = region.bounds()
        assert np.all(batch.points >= lo) and np.all(batch.points <= hi)
        assert region.contains(batch.points.max(axis=0))

    def test_example_count_in_unit_ball(self):
        region = NormBallRegion(center=np.zeros(2), radius=1.0)
        batch = uniform_sample(region, 2182, seed=7)
        assert batch.points.shape == (2182, 2)
        assert np.all(np.abs(batch.points) <= 1.0)

    def test_same_seed_same_batch(self):
        region = NormBallRegion(center=np.zeros(3), radius=2.0)
        a = uniform_sample(region, 100, seed=99)
        b = uniform_sample(region, 100, seed=99)
        assert a.points.tobytes() == b.points.tobytes()
        assert a.points.tobytes() != uniform_sample(region, 100, seed=98).points.tobytes()

    def test_per_dimension_means_near_center(self):
        region = NormBallRegion(center=np.array([0.25, -1.0, 3.0]), radius=0.4)
        batch = uniform_sample(region, 100_000, seed=1)
        deviation = np.abs(batch.points.mean(axis=0) - region.center)
        assert np.all(deviation <= 0.01 * 2 * region.radius)

    def test_zero_count_rejected(self):
        region = NormBallRegion(center=np.zeros(1), radius=1.0)
        with pytest.raises(ValueError):
            uniform_sample(region, 0, seed=0)


class TestSampleCounts:
    def test_full_counts(self):
        assert required_samples_full(0.01, 0.001, 2, 2) == 2182
        assert required_samples_full(0.4, 0.001, 784, 10) == 35365
        assert required_samples_full(0.02, 0.001, 2, 2) == 1091

    def test_margin_counts(self):
        assert required_samples_margin(0.01, 0.001) == 1582
        assert required_samples_margin(1.0, np.exp(-1.0)) == 4
        assert required_samples_margin(0.02, 0.001) <= required_samples_margin(0.01, 0.001)

    def test_full_dominates_margin(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            eps = float(rng.uniform(0.001, 1.0))
            eta = float(rng.uniform(1e-6, 0.5))
            m = int(rng.integers(1, 2000))
            n = int(rng.integers(2, 100))
            assert required_samples_full(eps, eta, m, n) >= required_samples_margin(eps, eta)

    def test_key_feature_budget(self):
        assert max_key_features(8000, 0.01, 0.001) == 32
        assert max_key_features(11582, 0.01, 0.001) == 50
        with pytest.raises(ValueError, match="too small"):
            max_key_features(100, 0.01, 0.001)

    def test_achieved_epsilon(self):
        assert achieved_epsilon(2182, 0.001, 4) <= 0.01
        assert achieved_epsilon(2182, 0.001, 4) == pytest.approx(0.009997942, abs=1e-9)
        assert achieved_epsilon(1000, 0.01, 3) == 2 * achieved_epsilon(2000, 0.01, 3)
        vacuous = achieved_epsilon(10, 0.001, 4)
        assert vacuous == pytest.approx(2.1815510557964273)
        assert vacuous > 1.0

    def test_round_trip_is_safe(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            eps = float(rng.uniform(0.001, 1.0))
            eta = float(rng.uniform(1e-6, 0.5))
            m = int(rng.integers(1, 500))
            n = int(rng.integers(2, 20))
            k = required_samples_full(eps, eta, m, n)
            assert achieved_epsilon(k, eta, (m + 1) * (n - 1) + 1) <= eps

    def test_parameter_validation(self):
        for bad in [(0.0, 0.001), (1.5, 0.001), (0.01, 0.0), (0.01, 1.0)]:
            with pytest.raises(ValueError):
                required_samples_full(bad[0], bad[1], 2, 2)
            with pytest.raises(ValueError):
                required_samples_margin(*bad)
        with pytest.raises(ValueError):
            required_samples_full(0.01, 0.001, 0, 2)
        with pytest.raises(ValueError):
            required_samples_full(0.01, 0.001, 2, 1)
        with pytest.raises(ValueError):
            achieved_epsilon(0, 0.001, 4)


class TestSeedStreams:
    def test_derive_seed_is_stable_and_keyed(self):
        a = derive_seed(7, "phase1", 0)
        assert a == derive_seed(7, "phase1", 0)
        assert a != derive_seed(7, "phase1", 1)
        assert a != derive_seed(7, "phase2", 0)
        assert a != derive_seed(8, "phase1", 0)

    def test_streams_are_independent_of_draw_order(self):
        first = seed_stream(3, "a").uniform(size=5)
        # Drawing from another stream in between must not disturb the first.
        s_a = seed_stream(3, "a")
        s_b = seed_stream(3, "b")
        s_b.uniform(size=1000)
        assert np.array_equal(s_a.uniform(size=5), first)
