import math

import numpy as np
import pytest

from ojaflow import (
    ConfigError,
    DivergenceError,
    EstimatorState,
    LearningSchedule,
    SampleStream,
    ShapeError,
    SpectralMatrix,
    StiefelPoint,
    alignment_error,
    alignment_targets,
    componentwise_field,
    gso_step,
    run_online,
    sga_step,
)

from conftest import Q1, random_orthogonal


@pytest.fixture
def a3():
    return SpectralMatrix.from_eigenvalues([3.0, 2.0, 1.0])


class TestSampleStream:
    def test_bounded_support(self, a3):
        stream = SampleStream(a3, 1)
        radius = stream.support_radius
        assert radius == pytest.approx(math.sqrt(18.0))
        for _ in range(2000):
            assert np.linalg.norm(stream.draw()) <= radius + 1e-12
        assert stream.count == 2000

    def test_reproducible(self, a3):
        s1, s2 = SampleStream(a3, 9), SampleStream(a3, 9)
        for _ in range(5):
            np.testing.assert_array_equal(s1.draw(), s2.draw())

    def test_covariance_matches(self, a3):
        stream = SampleStream(a3, 2)
        n = 200_000
        acc = np.zeros((3, 3))
        for _ in range(n):
            x = stream.draw()
            acc += np.outer(x, x)
        emp = acc / n
        # entrywise within 3 standard errors (var of x_i^2 for uniform: 4/5 lam^2)
        for i in range(3):
            for j in range(3):
                se = math.sqrt(
                    (a3.eigenvalues[i] * a3.eigenvalues[j] + (i == j) * a3.eigenvalues[i] ** 2)
                    / n
                )
                assert abs(emp[i, j] - a3.matrix[i, j]) <= 3.5 * se


class TestLearningSchedule:
    def test_rules(self):
        assert LearningSchedule("constant", base=0.1).rate(5) == 0.1
        assert LearningSchedule("inverse-k", base=1.0, offset=9.0).rate(1) == 0.1
        power = LearningSchedule("inverse-k-power", base=1.0, offset=0.0, exponent=0.75)
        assert power.rate(16) == pytest.approx(16 ** -0.75)

    def test_floor(self):
        sched = LearningSchedule("inverse-k", base=1.0, offset=0.0, floor=0.25)
        assert sched.rate(100) == 0.25

    def test_validation(self):
        with pytest.raises(ConfigError):
            LearningSchedule("inverse-k-power", base=1.0, exponent=0.4)
        with pytest.raises(ConfigError):
            LearningSchedule("warp")
        with pytest.raises(ConfigError):
            LearningSchedule("constant", base=-1.0)

    def test_boundedness_guard(self, a3):
        stream = SampleStream(a3, 1)
        with pytest.raises(ConfigError):
            LearningSchedule("constant", base=1.0).validate_against(stream.support_radius)

    def test_default_for_spectrum(self, a3):
        sched = LearningSchedule.default_for(a3)
        assert sched.base == pytest.approx(0.5 / 3.0)
        sched.validate_against(SampleStream(a3, 0).support_radius)


class TestSgaStep:
    def test_zero_rate_is_identity(self, a3, rng):
        w = random_orthogonal(rng, 3)
        state = EstimatorState(w, 0)
        out = sga_step(state, SampleStream(a3, 3).draw(), 0.0)
        np.testing.assert_array_equal(out.w, w)
        assert out.k == 1

    def test_zero_sample_is_identity(self, a3, rng):
        w = random_orthogonal(rng, 3)
        out = sga_step(EstimatorState(w, 0), np.zeros(3), 0.05)
        np.testing.assert_array_equal(out.w, w)

    def test_monte_carlo_drift(self, a3, rng):
        w = random_orthogonal(rng, 3)
        state = EstimatorState(w, 0)
        stream = SampleStream(a3, 17)
        eta = 0.01
        n = 100_000
        acc = np.zeros((3, 3))
        acc_sq = np.zeros((3, 3))
        for _ in range(n):
            d = sga_step(state, stream.draw(), eta).w - w
            acc += d
            acc_sq += d * d
        mean = acc / n
        se = np.sqrt(np.maximum(acc_sq / n - mean**2, 0.0) / n)
        expected = eta * componentwise_field(a3, w)
        assert np.all(np.abs(mean - expected) <= 3.0 * np.maximum(se, 1e-15))

    def test_semi_decoupling_bitwise(self, a3, rng):
        w = random_orthogonal(rng, 3)
        x = SampleStream(a3, 23).draw()
        perturbed = w.copy()
        perturbed[:, 2] = rng.standard_normal(3)
        out = sga_step(EstimatorState(w, 0), x, 0.02)
        out_p = sga_step(EstimatorState(perturbed, 0), x, 0.02)
        assert np.array_equal(out.w[:, :2], out_p.w[:, :2])

    def test_divergence_detected(self, a3):
        w = np.full((3, 1), np.nan)
        with pytest.raises(Exception):
            sga_step(EstimatorState(np.eye(3)[:, :1], 0), np.array([np.inf, 0.0, 0.0]), 0.1)


class TestGsoStep:
    def test_zero_rate_keeps_orthonormal_frame(self, a3, rng):
        w = random_orthogonal(rng, 3)
        out = gso_step(EstimatorState(w, 0), SampleStream(a3, 5).draw(), 0.0)
        assert np.linalg.norm(out.w - w) <= 1e-13

    def test_single_column_is_power_step(self, a3, rng):
        w = np.zeros((3, 1))
        w[1, 0] = 1.0
        x = SampleStream(a3, 6).draw()
        eta = 0.05
        out = gso_step(EstimatorState(w, 0), x, eta)
        manual = w[:, 0] + eta * (x @ w[:, 0]) * x
        manual /= np.linalg.norm(manual)
        np.testing.assert_allclose(out.w[:, 0], manual, atol=1e-14)

    def test_output_exactly_orthonormal(self, a3, rng):
        w = random_orthogonal(rng, 3)
        state = EstimatorState(w, 0)
        stream = SampleStream(a3, 7)
        for _ in range(200):
            state = gso_step(state, stream.draw(), 0.02)
            assert state.orthogonality_defect() <= 1e-10


class TestAlignment:
    def test_exact_eigenvectors_give_zero(self, a3):
        angles = alignment_error(np.diag([1.0, -1.0, 1.0]), a3, targets=(1, 2, 3))
        np.testing.assert_allclose(angles, np.zeros(3), atol=1e-12)

    def test_orthogonal_column_gives_right_angle(self, a3):
        w = np.zeros((3, 1))
        w[2, 0] = 1.0
        angles = alignment_error(w, a3, targets=(1,))
        assert angles[0] == pytest.approx(math.pi / 2)

    def test_targets_from_scan(self, a3):
        a4 = SpectralMatrix.from_eigenvalues([4, 3, 2, 1])
        targets = alignment_targets(Q1, a4)
        # column sigma[m-1] heads to direction m: sigma = (2, 3, 1, 4)
        assert targets == (3, 1, 2, 4)

    def test_rectangular_targets_identity(self, a3):
        targets = alignment_targets(np.eye(3)[:, :2], a3)
        assert targets == (1, 2)


class TestRunOnline:
    def test_zero_steps_returns_start(self, a3, rng):
        w0 = StiefelPoint(random_orthogonal(rng, 3))
        state, diag = run_online(
            SampleStream(a3, 8), LearningSchedule.default_for(a3), w0, 0
        )
        np.testing.assert_array_equal(state.w, w0.q)
        assert len(diag.ks) == 1

    def test_gso_run_aligns_top_two(self):
        # inverse-k schedule sized so the first step honors the boundedness
        # validation for this spectrum
        a = SpectralMatrix.from_eigenvalues([1.2, 0.8, 0.3, 0.1])
        rng = np.random.default_rng(31)
        w0 = StiefelPoint(random_orthogonal(rng, 4)[:, :2])
        sched = LearningSchedule("inverse-k", base=2.0, offset=100.0)
        state, diag = run_online(
            SampleStream(a, 12), sched, w0, 100_000, "gso", stride=5000
        )
        angles = alignment_error(state.w, a, targets=(1, 2))
        assert np.all(angles < 0.05)
        assert np.all(diag.orth_defects <= 1e-10)

    def test_truncated_run_is_bitwise_prefix(self, rng):
        a = SpectralMatrix.from_eigenvalues([8, 4, 2, 1])
        sched = LearningSchedule("inverse-k", base=0.5, offset=100.0)
        w0 = random_orthogonal(rng, 4)
        wide, _ = run_online(
            SampleStream(a, 13), sched, StiefelPoint(w0), 3000, "sga", stride=1000
        )
        narrow, _ = run_online(
            SampleStream(a, 13),
            sched,
            StiefelPoint(np.ascontiguousarray(w0[:, :2])),
            3000,
            "sga",
            stride=1000,
            targets=(1, 2),
        )
        assert np.array_equal(narrow.w, wide.w[:, :2])

    def test_column_norms_stay_bounded(self, rng):
        a = SpectralMatrix.from_eigenvalues([8, 4, 2, 1])
        sched = LearningSchedule("inverse-k", base=0.5, offset=100.0)
        w0 = StiefelPoint(random_orthogonal(rng, 4))
        state, diag = run_online(SampleStream(a, 14), sched, w0, 20_000, "sga", stride=500)
        assert float(np.max(np.linalg.norm(state.w, axis=0))) <= 2.0

    def test_angles_trend_downward(self):
        from scipy.stats import kendalltau

        a = SpectralMatrix.from_eigenvalues([8, 4, 2, 1])
        rng = np.random.default_rng(33)
        w0 = StiefelPoint(random_orthogonal(rng, 4))
        sched = LearningSchedule("inverse-k", base=0.5, offset=100.0)
        _, diag = run_online(SampleStream(a, 15), sched, w0, 60_000, "sga", stride=2000)
        burn = len(diag.ks) // 4
        worst = diag.angles[burn:].max(axis=1)
        tau, p = kendalltau(np.arange(worst.size), worst)
        assert tau < 0
        assert p < 0.01

    def test_misconfigured_schedule_rejected(self, a3, rng):
        w0 = StiefelPoint(random_orthogonal(rng, 3))
        with pytest.raises(ConfigError):
            run_online(SampleStream(a3, 16), LearningSchedule("constant", base=0.2), w0, 10)

    def test_csv_format(self, a3, rng, tmp_path):
        w0 = StiefelPoint(random_orthogonal(rng, 3))
        _, diag = run_online(
            SampleStream(a3, 18), LearningSchedule.default_for(a3), w0, 500, stride=100
        )
        path = tmp_path / "series.csv"
        diag.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,eta,col,angle_rad,orth_defect"
        assert len(lines) == 1 + len(diag.ks) * 3
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "1"
