import math

import numpy as np
import pytest

from ojaflow import (
    IntegratorConfig,
    ShapeError,
    SigmaAmbiguityError,
    SpectralMatrix,
    WeightVector,
    convergence_rates,
    integrate,
    is_stable_basin,
    make_flow,
    predict_limit,
    rank_identity_check,
    sigma_invariance_check,
    sigma_permutation,
    verify_exponential,
    weighted_rayleigh,
    z_values,
)
from ojaflow.stable_manifold import RateVector

from conftest import Q1, Q1_LIMIT, random_orthogonal

M_EXAMPLE = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])


class TestSigmaPermutation:
    def test_identity(self):
        assert sigma_permutation(np.eye(5)) == (1, 2, 3, 4, 5)

    def test_scan_example(self):
        assert sigma_permutation(M_EXAMPLE) == (2, 1, 3)

    def test_worked_start(self):
        assert sigma_permutation(Q1) == (2, 3, 1, 4)

    def test_always_bijection(self):
        rng = np.random.default_rng(11)
        for _ in range(400):
            q = random_orthogonal(rng, 5)
            sig = sigma_permutation(q)
            assert sorted(sig) == [1, 2, 3, 4, 5]

    def test_column_scale_invariance(self, rng):
        q = random_orthogonal(rng, 4)
        scaled = q * np.array([1e6, 1.0, 1e-6, 1.0])
        assert sigma_permutation(scaled) == sigma_permutation(q)

    def test_singular_rejected(self):
        with pytest.raises(ShapeError):
            sigma_permutation(np.ones((3, 3)))

    def test_ambiguous_stage(self):
        # rows 1-2 nearly dependent relative to their column scales while the
        # third row keeps the matrix robustly invertible: stage 2 has no
        # pivot above threshold
        m = np.array(
            [
                [1.0, 1.0, 0.0],
                [1.0, 1.0 + 1.27e-7, -1.27e-7],
                [0.0, 100.0, 100.0],
            ]
        )
        with pytest.raises(SigmaAmbiguityError) as err:
            sigma_permutation(m)
        assert err.value.stage == 2


class TestZValues:
    def test_identity(self):
        np.testing.assert_array_equal(z_values(np.eye(4)), np.ones(4))

    def test_worked_start_values(self):
        z = z_values(Q1)
        expected = [math.sqrt(2) / 2, 2 * math.sqrt(3) / 3, -math.sqrt(2) / 2, math.sqrt(3)]
        np.testing.assert_allclose(z, expected, atol=1e-12)

    def test_first_value_is_pivot_entry(self, rng):
        q = random_orthogonal(rng, 5)
        sig = sigma_permutation(q)
        assert z_values(q)[0] == q[0, sig[0] - 1]

    def test_product_telescopes_to_determinant(self, rng):
        # det(Q[1..n; i_n]) telescopes to the product of all ratios
        q = random_orthogonal(rng, 5)
        z = z_values(q)
        assert np.prod(z) == pytest.approx(np.linalg.det(q), rel=1e-9)

    def test_row_representation_residual(self):
        # row m minus its unique combination of rows 1..m-1 (matched on the
        # sorted prefix columns) must vanish left of the pivot and equal z_m
        # at the pivot
        rng = np.random.default_rng(23)
        for _ in range(50):
            q = random_orthogonal(rng, 5)
            sig = sigma_permutation(q)
            z = z_values(q)
            for m in range(2, 6):
                prefix = sorted(sig[:m - 1])
                cols_prev = np.array(prefix) - 1
                sub = q[: m - 1, cols_prev]
                row = q[m - 1, cols_prev]
                c = np.linalg.solve(sub.T, row)
                upto = sig[m - 1]
                resid = q[m - 1, :upto] - c @ q[: m - 1, :upto]
                assert np.max(np.abs(resid[:-1])) <= 1e-10
                assert resid[-1] == pytest.approx(z[m - 1], abs=1e-10)


class TestPredictLimit:
    def test_identity(self):
        pred = predict_limit(np.eye(4))
        np.testing.assert_array_equal(pred.limit, np.eye(4))
        assert pred.sigma == (1, 2, 3, 4)
        np.testing.assert_array_equal(pred.z, np.ones(4))

    def test_worked_start(self, q1_point):
        pred = predict_limit(q1_point)
        assert pred.sigma == (2, 3, 1, 4)
        assert pred.signs == (1, 1, -1, 1)
        np.testing.assert_array_equal(pred.limit, Q1_LIMIT)

    def test_serialization_shape(self, q1_point):
        d = predict_limit(q1_point).as_dict()
        assert set(d) == {"sigma", "z", "signs", "limit"}
        assert d["sigma"] == [2, 3, 1, 4]
        assert len(d["z"]) == 4 and isinstance(d["z"][0], float)
        assert d["signs"] == [1, 1, -1, 1]
        assert len(d["limit"]) == 4

    def test_prefixes_sorted(self, rng):
        q = random_orthogonal(rng, 5)
        pred = predict_limit(q)
        for m, pre in enumerate(pred.prefixes, start=1):
            assert pre == tuple(sorted(pred.sigma[:m]))


class TestRankIdentity:
    def test_identity_matrix(self):
        for m in range(1, 5):
            for j in range(1, 5):
                assert rank_identity_check(np.eye(4), m, j)

    def test_scan_example_by_hand(self):
        # m=2, j=1: rank 1 plus one scan value above 1
        assert rank_identity_check(M_EXAMPLE, 2, 1)

    def test_fuzz(self):
        rng = np.random.default_rng(37)
        for _ in range(200)        :
            q = random_orthogonal(rng, 5)
            for m in range(1, 6):
                for j in range(1, 6):
                    assert rank_identity_check(q, m, j)


class TestStableBasin:
    def test_identity(self):
        assert is_stable_basin(np.eye(4))

    def test_worked_start_excluded(self):
        assert not is_stable_basin(Q1)

    def test_agrees_with_identity_scan(self, rng):
        for _ in range(100):
            q = random_orthogonal(rng, 4)
            assert is_stable_basin(q) == (sigma_permutation(q) == (1, 2, 3, 4))


class TestConvergenceRates:
    def test_uniform_gaps(self):
        a = SpectralMatrix.from_eigenvalues([4, 3, 2, 1])
        np.testing.assert_array_equal(convergence_rates(a).nu, np.ones(4))

    def test_running_minimum(self):
        a = SpectralMatrix.from_eigenvalues([10, 5, 4, 1])
        np.testing.assert_array_equal(convergence_rates(a).nu, [5.0, 1.0, 1.0, 1.0])

    def test_two_dim_repeat(self):
        a = SpectralMatrix.from_eigenvalues([3, 2])
        np.testing.assert_array_equal(convergence_rates(a).nu, [1.0, 1.0])

    def test_entry_bound_uses_min_index(self):
        rv = RateVector(np.array([5.0, 1.0, 1.0, 1.0]))
        assert rv.bound_for_entry(1, 4) == -10.0
        assert rv.bound_for_entry(3, 2) == -2.0

    def test_gap_guard(self):
        a = SpectralMatrix.from_eigenvalues([2.0, 1.0 + 1e-6, 1.0])
        with pytest.raises(ShapeError):
            convergence_rates(a, min_gap=1e-3)


def _run_sga(a, q0, max_time=60.0, threshold=1e-9):
    n = a.dimension
    weights = WeightVector.default(n)
    cfg = IntegratorConfig(max_time=max_time, convergence_threshold=threshold)
    return integrate(
        make_flow("sga", a, weights),
        q0,
        cfg,
        lambda q: weighted_rayleigh(a, weights, q),
    )


class TestVerifyExponential:
    def test_constant_trajectory_all_floor(self):
        times = np.linspace(0.0, 5.0, 40)
        states = np.repeat(np.eye(3)[None, :, :], 40, axis=0)

        class Boxed:
            pass

        traj = Boxed()
        traj.times = times
        traj.states = states
        traj.energy = np.full(40, 14.0)
        rates = convergence_rates(SpectralMatrix.from_eigenvalues([3, 2, 1]))
        report = verify_exponential(traj, rates)
        assert all(e.verdict == "floor" for e in report.entries)
        assert report.all_pass

    def test_seeded_basin_run_passes(self):
        a = SpectralMatrix.from_eigenvalues([3, 2, 1])
        rng = np.random.default_rng(2)
        q0 = random_orthogonal(rng, 3)
        while not is_stable_basin(q0):
            q0 = random_orthogonal(rng, 3)
        traj = _run_sga(a, q0)
        report = verify_exponential(traj, convergence_rates(a), slack=0.1)
        assert report.all_pass
        fitted = [e for e in report.entries if e.verdict == "pass"]
        assert fitted  # at least one entry produced an actual slope

    def test_rejects_thin_window(self):
        a = SpectralMatrix.from_eigenvalues([3, 2, 1])
        rng = np.random.default_rng(3)
        q0 = random_orthogonal(rng, 3)
        while not is_stable_basin(q0):
            q0 = random_orthogonal(rng, 3)
        traj = _run_sga(a, q0)
        with pytest.raises(ShapeError):
            verify_exponential(traj, convergence_rates(a), window=(0.0, 0.05))

    def test_diagonal_entry_bound_for_two_dims(self):
        # top-left residual decays exactly at twice the single gap
        a = SpectralMatrix.from_eigenvalues([2.0, 1.0])
        rng = np.random.default_rng(4)
        q0 = random_orthogonal(rng, 2)
        while not is_stable_basin(q0):
            q0 = random_orthogonal(rng, 2)
        traj = _run_sga(a, q0, max_time=30.0)
        report = verify_exponential(traj, convergence_rates(a))
        entry = next(e for e in report.entries if (e.i, e.j) == (1, 1))
        if entry.verdict == "pass":
            assert entry.slope <= -2.0 * 0.9


class TestSigmaInvariance:
    def test_constant_identity_trajectory(self):
        class Boxed:
            pass

        traj = Boxed()
        traj.times = np.linspace(0, 1, 12)
        traj.states = np.repeat(np.eye(3)[None, :, :], 12, axis=0)
        report = sigma_invariance_check(traj)
        assert report
        assert report.reference == (1, 2, 3)
        assert report.indeterminate_times == ()

    def test_worked_start_keeps_sigma(self, a4):
        traj = _run_sga(a4, Q1, max_time=100.0)
        report = sigma_invariance_check(traj)
        assert report.ok
        assert report.reference == (2, 3, 1, 4)
        assert report.first_violation_time is None

    def test_near_boundary_flags_indeterminate(self):
        # defining pivot starts below a loose tolerance and grows through it
        eps = 1e-7
        c = math.sqrt(1.0 - eps * eps)
        q0 = np.array([[eps, -c], [c, eps]])
        a = SpectralMatrix.from_eigenvalues([2.0, 1.0])
        traj = _run_sga(a, q0, max_time=40.0)
        report = sigma_invariance_check(traj, tol=1e-5, reference=(1, 2))
        assert report.ok
        assert len(report.indeterminate_times) > 0
        assert report.indeterminate_times[0] == 0.0
        # and with the default tolerance the same run is determinate throughout
        strict = sigma_invariance_check(traj)
        assert strict.ok
        assert strict.indeterminate_times == ()

    def test_detects_genuine_change(self):
        # glue two incompatible frames into a fake trajectory: the swap start
        # scans to (2, 1), and the identity sample confidently contradicts it
        # (the skipped leading pivot is 1, far above tolerance)
        class Boxed:
            pass

        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        traj = Boxed()
        traj.times = np.array([0.0, 1.0])
        traj.states = np.stack([swap, np.eye(2)])
        report = sigma_invariance_check(traj)
        assert not report
        assert report.reference == (2, 1)
        assert report.first_violation_time == 1.0

    def test_vanished_reference_pivot_is_indeterminate(self):
        # the reference pivot sitting exactly at zero cannot be told apart
        # from a tiny nonzero value, so the verdict is indeterminate, not a
        # violation
        class Boxed:
            pass

        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        traj = Boxed()
        traj.times = np.array([0.0])
        traj.states = swap[None, :, :]
        report = sigma_invariance_check(traj, reference=(1, 2))
        assert report.ok
        assert report.indeterminate_times == (0.0,)


class TestPredictionAgainstIntegration:
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_limits_match(self, n):
        a = SpectralMatrix.from_eigenvalues(np.arange(n, 0, -1, dtype=float))
        rng = np.random.default_rng(50 + n)
        for _ in range(5):
            q0 = random_orthogonal(rng, n)
            pred = predict_limit(q0)
            traj = _run_sga(a, q0, max_time=80.0)
            assert traj.converged
            assert np.max(np.abs(traj.final_state - pred.limit)) <= 1e-6
