import numpy as np
import pytest

from wglasso import (
    ProblemInstance,
    bcd_solve,
    check_disjoint_images,
    check_pairwise_independence,
    group_image,
    make_dipole_groups,
    verify_disjoint_recovery,
    verify_gamma_scaling,
    verify_single_group_pursuit,
)
from wglasso.theory import (
    default_verification_suite,
    orthogonal_block_instance,
    random_gaussian_instance,
    suite_passed,
)


class TestPairwiseIndependence:
    def test_identity_passes_with_unit_margin(self):
        groups = make_dipole_groups(2)
        ok, margin = check_pairwise_independence(np.eye(6), groups, 0, 1)
        assert ok
        assert margin == pytest.approx(1.0)

    def test_duplicated_column_fails(self):
        rng = np.random.default_rng(0)
        C = rng.standard_normal((10, 6))
        C[:, 3] = C[:, 0]
        ok, margin = check_pairwise_independence(C, make_dipole_groups(2), 0, 1)
        assert not ok
        assert margin <= 1e-12

    def test_margin_matches_svd_oracle(self):
        rng = np.random.default_rng(1)
        C = rng.standard_normal((10, 6))
        groups = make_dipole_groups(2)
        ok, margin = check_pairwise_independence(C, groups, 0, 1)
        s = np.linalg.svd(C, compute_uv=False)  # all six columns: same block
        assert ok
        assert margin == pytest.approx(float(s[-1] / s[0]), rel=1e-12)

    def test_wide_block_fails(self):
        # more combined columns than rows can never be independent
        rng = np.random.default_rng(2)
        C = rng.standard_normal((4, 6))
        ok, _ = check_pairwise_independence(C, make_dipole_groups(2), 0, 1)
        assert not ok

    def test_same_group_rejected(self):
        with pytest.raises(ValueError):
            check_pairwise_independence(np.eye(6), make_dipole_groups(2), 1, 1)


class TestGroupImage:
    def test_block_diagonal_images_are_self(self):
        C, groups = orthogonal_block_instance(4, 3, 3, seed=0)
        for g in range(4):
            assert group_image(C, groups, g) == frozenset({g})

    def test_dense_random_reaches_every_group(self):
        C, groups = random_gaussian_instance(12, 5, 3, seed=1)
        assert group_image(C, groups, 2) == frozenset(range(5))

    def test_orthogonal_pair_excluded(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal((8, 8))
        q, _ = np.linalg.qr(q)
        C = np.zeros((8, 6))
        C[:, :3] = q[:, :3]  # group 0 spans q1..q3
        C[:, 3:] = q[:, 3:6]  # group 1 spans q4..q6, orthogonal to group 0
        groups = make_dipole_groups(2)
        assert 1 not in group_image(C, groups, 0)

    def test_zero_map_warns_and_returns_empty(self):
        C = np.zeros((4, 6))
        groups = make_dipole_groups(2)
        with pytest.warns(UserWarning, match="zero"):
            assert group_image(C, groups, 0) == frozenset()

    def test_monotone_in_tolerance(self):
        C, groups = random_gaussian_instance(10, 4, 3, seed=4)
        for g in range(4):
            loose = group_image(C, groups, g, tol=1e-6)
            tight = group_image(C, groups, g, tol=1e-12)
            assert loose <= tight


class TestDisjointImages:
    def test_block_diagonal_passes(self):
        C, groups = orthogonal_block_instance(6, 3, 3, seed=5)
        ok, witness = check_disjoint_images(C, groups, [0, 2, 4])
        assert ok
        assert witness is None

    def test_dense_random_fails_with_witness(self):
        C, groups = random_gaussian_instance(12, 5, 3, seed=6)
        ok, witness = check_disjoint_images(C, groups, [0, 1])
        assert not ok
        g1, g2, shared = witness
        assert (g1, g2) == (0, 1)
        assert 0 <= shared < 5

    def test_singleton_passes_vacuously(self):
        C, groups = random_gaussian_instance(12, 5, 3, seed=7)
        ok, witness = check_disjoint_images(C, groups, [3])
        assert ok and witness is None


class TestSingleGroupPursuit:
    def test_orthonormal_case(self):
        groups = make_dipole_groups(2)
        report = verify_single_group_pursuit(np.eye(6), groups, 0, np.array([1.0, 2.0, 3.0]))
        assert report.verdict == "pass"
        assert report.error_metrics["relative_error"] <= 1e-10

    def test_random_instances(self):
        for seed in range(5):
            C, groups = random_gaussian_instance(12, 10, 3, seed=seed)
            rng = np.random.default_rng(seed + 100)
            g_star = int(rng.integers(10))
            report = verify_single_group_pursuit(C, groups, g_star, rng.standard_normal(3))
            assert report.verdict == "pass", report.error_metrics
            assert report.error_metrics["relative_error"] <= 1e-5

    def test_degenerate_instance_marked_not_applicable(self):
        rng = np.random.default_rng(8)
        C = rng.standard_normal((12, 30))
        C[:, 3:6] = C[:, 0:3]  # group 1 duplicates group 0
        groups = make_dipole_groups(10)
        report = verify_single_group_pursuit(C, groups, 0, rng.standard_normal(3))
        assert report.verdict == "not_applicable"
        assert not all(c.passed for c in report.assumptions_checked)


class TestDisjointRecovery:
    def test_orthogonal_construction_two_groups(self):
        C, groups = orthogonal_block_instance(8, 3, 3, seed=9)
        rng = np.random.default_rng(10)
        report = verify_disjoint_recovery(
            C, groups, [1, 5], [rng.standard_normal(3), rng.standard_normal(3)]
        )
        assert report.verdict == "pass", report.error_metrics
        assert report.error_metrics["max_relative_error"] <= 1e-5

    def test_orthogonal_construction_three_groups(self):
        C, groups = orthogonal_block_instance(8, 3, 3, seed=11)
        rng = np.random.default_rng(12)
        report = verify_disjoint_recovery(
            C, groups, [0, 3, 6], [rng.standard_normal(3) for _ in range(3)]
        )
        assert report.verdict == "pass", report.error_metrics

    def test_dense_random_not_applicable(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=13)
        rng = np.random.default_rng(14)
        report = verify_disjoint_recovery(
            C, groups, [0, 1], [rng.standard_normal(3), rng.standard_normal(3)]
        )
        assert report.verdict == "not_applicable"
        assert report.error_metrics["witness"] is not None

    def test_randomized_planted_moments_always_recover(self):
        C, groups = orthogonal_block_instance(8, 3, 3, seed=15)
        ok, _ = check_disjoint_images(C, groups, [2, 4])
        assert ok
        for seed in range(5):
            rng = np.random.default_rng(seed + 200)
            report = verify_disjoint_recovery(
                C, groups, [2, 4], [rng.standard_normal(3), rng.standard_normal(3)]
            )
            assert report.verdict == "pass"


class TestGammaScaling:
    def test_half_fraction(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=16)
        rng = np.random.default_rng(17)
        report = verify_gamma_scaling(C, groups, 3, rng.standard_normal(3), (0.5,))
        assert report.verdict == "pass"
        assert report.error_metrics["max_deviation"] <= 1e-6

    def test_small_fraction(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=18)
        rng = np.random.default_rng(19)
        report = verify_gamma_scaling(C, groups, 7, rng.standard_normal(3), (0.01,))
        assert report.verdict == "pass"
        assert report.error_metrics["max_deviation"] <= 1e-6

    def test_fraction_above_one_gives_zero(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=20)
        rng = np.random.default_rng(21)
        report = verify_gamma_scaling(C, groups, 2, rng.standard_normal(3), (1.5,))
        assert report.verdict == "not_applicable"
        assert report.error_metrics["max_deviation"] <= 1e-6  # solution is exactly zero

    def test_deviation_uniformly_small_over_fraction_sweep(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=22)
        rng = np.random.default_rng(23)
        fractions = tuple(np.round(np.arange(0.1, 0.95, 0.1), 2))
        report = verify_gamma_scaling(C, groups, 5, rng.standard_normal(3), fractions)
        assert report.verdict == "pass"
        assert report.error_metrics["max_deviation"] <= 1e-6


class TestUniquenessProbe:
    def test_random_warm_starts_reach_same_minimizer(self):
        C, groups = random_gaussian_instance(12, 10, 3, seed=24)
        rng = np.random.default_rng(25)
        x_star = np.zeros(30)
        x_star[9:12] = rng.standard_normal(3)
        p = ProblemInstance.from_matrix(C, C @ x_star, groups)
        alpha = 0.3 * float(np.linalg.norm(C[:, 9:12] @ x_star[9:12]))
        baseline = bcd_solve(p, alpha)
        for _ in range(10):
            warm = rng.standard_normal(30)
            res = bcd_solve(p, alpha, x0=warm)
            assert np.linalg.norm(res.x - baseline.x) <= 1e-8 * max(
                1.0, np.linalg.norm(baseline.x)
            )


class TestSuite:
    def test_small_suite_passes(self):
        reports = default_verification_suite(
            pursuit_instances=3, gamma_instances=2, disjoint_instances=2
        )
        assert len(reports) == 7
        assert suite_passed(reports)
        assert all(r.verdict == "pass" for r in reports)

    def test_report_serializes(self):
        reports = default_verification_suite(
            pursuit_instances=1, gamma_instances=0, disjoint_instances=0
        )
        d = reports[0].to_dict()
        assert d["theorem_id"] == "single_group_pursuit"
        assert isinstance(d["assumptions_checked"], list)
