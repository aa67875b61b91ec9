import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmel import scoring as S
from mmel.errors import ContractViolation

from oracles import brute_knn, brute_mahalanobis, brute_proto


def unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_index(rng, m=30, d=4, k=3):
    labels = np.concatenate([np.arange(k), rng.integers(0, k, m - k)])
    return S.build_index(unit(rng.standard_normal((m, d))), labels)


class TestIndex:
    def test_single_point(self):
        idx = S.build_index([[0.0, 1.0]], [0])
        assert idx.size == 1
        np.testing.assert_array_equal(idx.class_centers, [[0.0, 1.0]])

    def test_center_is_renormalized_mean(self):
        a, b = unit([1.0, 0.1]), unit([-0.9, 0.3])
        idx = S.build_index([a, b], [0, 0])
        np.testing.assert_allclose(idx.class_centers[0], unit((a + b) / 2), atol=1e-15)

    def test_rebuild_identical(self):
        rng = np.random.default_rng(0)
        emb, lab = unit(rng.standard_normal((20, 3))), rng.integers(0, 2, 20)
        lab[:2] = [0, 1]
        a, b = S.build_index(emb, lab), S.build_index(emb, lab)
        assert a.embeddings.tobytes() == b.embeddings.tobytes()
        assert a.class_centers.tobytes() == b.class_centers.tobytes()

    def test_immutable(self):
        idx = S.build_index([[1.0, 0.0]], [0])
        with pytest.raises(ValueError):
            idx.embeddings[0, 0] = 2.0
        with pytest.raises(AttributeError):
            idx.labels = np.array([1])

    @pytest.mark.parametrize(
        "emb, lab",
        [
            (np.zeros((0, 2)), []),
            ([[1.0, 0.0], [0.0, 1.0]], [0, 2]),
            ([[2.0, 0.0]], [0]),
            ([[1.0, 0.0]], [1]),
        ],
    )
    def test_invalid(self, emb, lab):
        with pytest.raises(ContractViolation):
            S.build_index(emb, lab)


class TestKnn:
    def test_stored_point(self):
        idx = S.build_index(np.eye(3), [0, 1, 2])
        assert S.knn_score(np.eye(3)[1], idx, 1) == 0.0

    def test_line(self):
        pts = unit([[1.0, 0.0], [1.0, 0.2], [1.0, 0.5]])
        idx = S.build_index(pts, [0, 0, 0])
        q = unit([1.0, 0.1])
        d = sorted(float(np.sum((q - p) ** 2)) for p in pts)
        assert S.knn_score(q, idx, 2) == d[1]

    def test_k_out_of_range(self):
        idx = S.build_index(np.eye(2), [0, 1])
        with pytest.raises(ContractViolation):
            S.knn_score([1.0, 0.0], idx, 3)
        with pytest.raises(ContractViolation):
            S.knn_score([1.0, 0.0], idx, 0)

    def test_tie_break_by_storage_order(self):
        pts = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])
        idx = S.build_index(pts, [0, 0, 0, 0])
        np.testing.assert_array_equal(S.knn_neighbors([1.0, 0.0], idx, 4), [[1, 0, 2, 3]])

    @given(st.integers(0, 2**31), st.integers(1, 30))
    @settings(max_examples=50, deadline=None)
    def test_brute_force_and_monotone(self, seed, k):
        rng = np.random.default_rng(seed)
        idx = random_index(rng)
        q = unit(rng.standard_normal((5, 4)))
        got = S.knn_score(q, idx, k)
        for i in range(5):
            assert got[i] == brute_knn(q[i], idx.embeddings, k)
        if k < idx.size:
            assert np.all(S.knn_score(q, idx, k + 1) >= got)


class TestPrototypeAndPknn:
    def test_p_zero(self):
        idx = S.build_index(np.eye(3), [0, 1, 2])
        assert S.prototype_score([0.6, 0.8, 0.0], idx, 0) == 0.0

    def test_at_center(self):
        idx = S.build_index(np.eye(3), [0, 1, 2])
        assert S.prototype_score(np.eye(3)[2], idx, 1) == 0.0

    def test_two_centers_by_hand(self):
        idx = S.build_index([[1.0, 0.0], [0.0, 1.0]], [0, 1])
        q = np.array([0.6, 0.8])
        assert S.prototype_score(q, idx, 2) == pytest.approx(((0.4**2 + 0.8**2) + (0.6**2 + 0.2**2)) / 2, abs=1e-15)

    def test_pknn_zero_at_own_center(self):
        idx = S.build_index(np.eye(3), [0, 1, 2])
        assert S.pknn_score(np.eye(3)[0], idx, S.ScoringConfig(k=1, p=1)) == 0.0

    @given(st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_components(self, seed):
        rng = np.random.default_rng(seed)
        idx = random_index(rng)
        q = unit(rng.standard_normal(4))
        k, p = int(rng.integers(1, 31)), int(rng.integers(0, 4))
        assert S.prototype_score(q, idx, p) == pytest.approx(brute_proto(q, idx.class_centers, p), abs=1e-12)
        expected = brute_knn(q, idx.embeddings, k) + brute_proto(q, idx.class_centers, p)
        assert S.pknn_score(q, idx, S.ScoringConfig(k, p)) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 2**31))
    def test_p_zero_bit_identical(self, seed):
        rng = np.random.default_rng(seed)
        idx = random_index(rng)
        q = unit(rng.standard_normal((20, 4)))
        assert np.array_equal(S.pknn_score(q, idx, S.ScoringConfig(7, 0)), S.knn_score(q, idx, 7))

    def test_config_bounds(self):
        idx = S.build_index(np.eye(2), [0, 1])
        assert S.ScoringConfig(p=1).validated(idx).k == 2
        with pytest.raises(ContractViolation):
            S.ScoringConfig(p=3).validated(idx)
        with pytest.raises(ContractViolation):
            S.ScoringConfig(center_source="elsewhere").validated(idx)

    def test_prototype_center_source(self):
        idx = S.build_index(np.eye(2), [0, 1], prototypes=[[0.0, 1.0], [1.0, 0.0]])
        assert S.prototype_score([1.0, 0.0], idx, 1, "prototypes") == 0.0
        with pytest.raises(ContractViolation):
            S.prototype_score([1.0, 0.0], S.build_index(np.eye(2), [0, 1]), 1, "prototypes")


class TestMahalanobis:
    def test_at_center(self):
        rng = np.random.default_rng(1)
        idx = random_index(rng, m=60, d=3, k=2)
        assert S.mahalanobis_score(idx.class_centers[0], idx) >= 0
        q = idx.class_means[1]
        d = S.mahalanobis_from(q[None, :], idx.class_means, idx.precision)
        assert d[0] == pytest.approx(0.0, abs=1e-12)

    def test_two_class_hand_case(self):
        emb = unit([[1.0, 0.2], [1.0, -0.2], [-0.2, 1.0], [0.2, 1.0]])
        idx = S.build_index(emb, [0, 0, 1, 1])
        means = np.stack([emb[:2].mean(0), emb[2:].mean(0)])
        centered = emb - means[[0, 0, 1, 1]]
        cov = centered.T @ centered / 4 + 1e-6 * np.eye(2)
        q = np.array([0.3, 0.1])
        assert S.mahalanobis_score(q, idx) == pytest.approx(brute_mahalanobis(q, idx.class_centers, cov), rel=1e-10)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        idx = random_index(rng, m=40, d=3, k=3)
        centered = idx.embeddings - idx.class_means[idx.labels]
        cov = centered.T @ centered / idx.size + 1e-6 * np.eye(3)
        q = unit(rng.standard_normal(3))
        assert S.mahalanobis_score(q, idx) == pytest.approx(brute_mahalanobis(q, idx.class_centers, cov), rel=1e-9)

    def test_singular(self):
        emb = np.tile([1.0, 0.0, 0.0], (4, 1))
        idx = S.build_index(emb, [0, 0, 1, 1])
        emb2 = unit(np.array([[1.0, 1e-300, 0.0]] * 4))
        assert np.isfinite(S.mahalanobis_score([1.0, 0.0, 0.0], idx))
        assert np.isfinite(S.mahalanobis_score(emb2[0], idx))


class TestEnrollment:
    def test_single_and_pair(self):
        a, b = unit([1.0, 0.0]), unit([0.0, 1.0])
        np.testing.assert_array_equal(S.enroll_ood([a]).ood_prototype, a)
        np.testing.assert_allclose(S.enroll_ood([a, b]).ood_prototype, [0.5, 0.5])
        with pytest.raises(ContractViolation):
            S.enroll_ood(np.zeros((0, 2)))

    def test_mean_of_ten(self):
        x = np.random.default_rng(2).standard_normal((10, 4))
        total = np.zeros(4)
        for row in x:
            total += row / np.sqrt(sum(v * v for v in row))
        np.testing.assert_allclose(S.enroll_ood(x).ood_prototype, total / 10, atol=1e-15)

    def test_empty_is_pknn(self):
        rng = np.random.default_rng(3)
        idx = random_index(rng)
        q = unit(rng.standard_normal((6, 4)))
        cfg = S.ScoringConfig(5, 2)
        assert np.array_equal(S.adjusted_score(q, idx, cfg, S.EnrollmentSet()), S.pknn_score(q, idx, cfg))
        assert np.array_equal(S.adjusted_score(q, idx, cfg, None), S.pknn_score(q, idx, cfg))

    def test_at_enrolled_prototype(self):
        rng = np.random.default_rng(4)
        idx = random_index(rng)
        z_e = unit(rng.standard_normal(4))
        cfg = S.ScoringConfig(3, 1)
        assert S.adjusted_score(z_e, idx, cfg, S.EnrollmentSet(z_e)) == S.pknn_score(z_e, idx, cfg)

    def test_five_point_term_by_term(self):
        rng = np.random.default_rng(5)
        idx = random_index(rng, m=12, d=3, k=2)
        z = unit(rng.standard_normal((5, 3)))
        z_e = unit(rng.standard_normal(3)) * 0.7
        novel = unit(rng.standard_normal((2, 3)))
        enr = S.EnrollmentSet(z_e, novel)
        cfg = S.ScoringConfig(4, 2)
        got = S.adjusted_score(z, idx, cfg, enr)
        for i in range(5):
            expected = (
                brute_knn(z[i], idx.embeddings, 4)
                + brute_proto(z[i], idx.class_centers, 2)
                - float(np.sum((z[i] - z_e) ** 2))
                + min(float(np.sum((z[i] - n) ** 2)) for n in novel)
            )
            assert got[i] == pytest.approx(expected, abs=1e-12)

    def test_novel_per_class_means(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
        enr = S.enroll_novel(x, labels=[7, 3, 7])
        np.testing.assert_allclose(enr.novel_class_prototypes, [[0.0, 1.0], [1.0, 0.0]])
        assert len(S.enroll_novel(x).novel_class_prototypes) == 3

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            S.EnrollmentSet(np.ones(2), np.ones((1, 3)))
        with pytest.raises(ContractViolation):
            S.EnrollmentSet(np.array([np.nan, 1.0]))


class TestDetect:
    def test_boundary(self):
        assert S.detect(1.5, 1.5).verdict is S.Verdict.ID
        assert S.detect(np.nextafter(1.5, 2), 1.5).verdict is S.Verdict.OOD

    def test_batch(self):
        scores = np.array([0.1, 0.5, 0.9, 0.5])
        out = S.detect(scores, 0.5)
        assert [d.verdict for d in out] == [S.Verdict.ID if s <= 0.5 else S.Verdict.OOD for s in scores]
        assert all(d.threshold == 0.5 for d in out)

    def test_nonfinite(self):
        with pytest.raises(ContractViolation):
            S.detect(np.nan, 1.0)
