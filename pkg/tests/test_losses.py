import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmel import losses as L
from mmel.autodiff import Tensor, normalize_rows
from mmel.errors import ContractViolation
from mmel.geometry import geodesic_distance

from oracles import finite_difference, log_softmax_row, mp_distance, rel_error

TAU = 0.1


def unit(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def brute_hyperbolic(z, labels, augmented, c, tau, distance=None):
    """Term-by-term evaluation of the supervised contrastive sum."""
    distance = distance or (lambda a, b: float(mp_distance(a, b, c)))
    n = len(labels)
    d = [[distance(z[i], z[j]) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        pos = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not pos:
            continue
        den = sum(math.exp(-d[i][a] / tau) for a in range(n) if augmented[a])
        total -= sum(math.log(math.exp(-d[i][p] / tau) / den) for p in pos) / len(pos)
    return total


class TestPosterior:
    def test_orthogonal_is_uniform(self):
        p = L.vmf_class_posterior([[0, 0, 1.0]], np.eye(3)[:2], TAU)
        np.testing.assert_allclose(p, [[0.5, 0.5]], atol=1e-15)

    @given(st.integers(0, 2**31))
    def test_simplex(self, seed):
        rng = np.random.default_rng(seed)
        p = L.vmf_class_posterior(unit(rng.standard_normal((5, 4))), unit(rng.standard_normal((3, 4))), TAU)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)


class TestCompactness:
    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_uniform_posterior_is_log_k(self, k):
        mu = np.eye(k + 1)[:k]
        z = np.tile(np.eye(k + 1)[k], (4, 1))
        loss = float(L.compactness_loss(z, np.arange(4) % k, mu, TAU))
        assert loss == pytest.approx(math.log(k), abs=1e-12)

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        z, mu = unit(rng.standard_normal((3, 4))), unit(rng.standard_normal((3, 4)))
        labels = [2, 0, 2]
        expected = -np.mean([log_softmax_row(list(z[i] @ mu.T / TAU))[labels[i]] for i in range(3)])
        assert float(L.compactness_loss(z, labels, mu, TAU)) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 2**31))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        z, mu = unit(rng.standard_normal((6, 3))), unit(rng.standard_normal((4, 3)))
        assert float(L.compactness_loss(z, rng.integers(0, 4, 6), mu, TAU)) >= 0


class TestDisparity:
    def test_antipodal(self):
        assert float(L.disparity_loss([[1.0, 0], [-1.0, 0]], TAU)) == pytest.approx(-1 / TAU, abs=1e-9)

    def test_orthogonal(self):
        assert float(L.disparity_loss(np.eye(3), TAU)) == pytest.approx(0.0, abs=1e-9)

    def test_identical(self):
        assert float(L.disparity_loss([[1.0, 0], [1.0, 0]], TAU)) == pytest.approx(1 / TAU, abs=1e-9)

    def test_decreases_as_rotated_apart(self):
        angles = np.linspace(0.1, math.pi, 10)
        vals = [float(L.disparity_loss([[1, 0], [math.cos(a), math.sin(a)]], TAU)) for a in angles]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_single_prototype_rejected(self):
        with pytest.raises(ContractViolation):
            L.disparity_loss([[1.0, 0.0]], TAU)

    def test_brute_force(self):
        mu = unit(np.random.default_rng(1).standard_normal((4, 3)))
        k = len(mu)
        expected = np.mean(
            [math.log(sum(math.exp(mu[i] @ mu[j] / TAU) for j in range(k) if j != i) / (k - 1)) for i in range(k)]
        )
        assert float(L.disparity_loss(mu, TAU)) == pytest.approx(expected, abs=1e-12)


class TestHyperbolic:
    def test_all_origin(self):
        n = 6
        labels = np.array([0, 0, 0, 1, 1, 1])
        aug = np.array([False, True, True, False, True, True])
        loss = float(L.hyperbolic_contrastive_loss(np.zeros((n, 3)), labels, aug, 1.0, TAU))
        assert loss == pytest.approx(n * math.log(aug.sum()), abs=1e-12)

    def test_hand_placed_four(self):
        z = np.array([[0.1, 0.2], [0.15, 0.1], [-0.3, 0.05], [-0.2, -0.25]])
        labels = [0, 0, 1, 1]
        aug = [False, True, False, True]
        expected = brute_hyperbolic(z, labels, aug, 1.0, TAU)
        assert float(L.hyperbolic_contrastive_loss(z, labels, aug, 1.0, TAU)) == pytest.approx(expected, rel=1e-10)

    @given(st.integers(0, 2**31), st.sampled_from([0.01, 0.5, 1.0]))
    @settings(max_examples=25, deadline=None)
    def test_random_and_permutation(self, seed, c):
        rng = np.random.default_rng(seed)
        n = 8
        z = rng.standard_normal((n, 3)) * 0.4 / math.sqrt(c) / math.sqrt(3)
        labels = rng.integers(0, 3, n)
        aug = rng.random(n) < 0.6
        aug[0] = True
        got = float(L.hyperbolic_contrastive_loss(z, labels, aug, c, TAU))
        ref = brute_hyperbolic(z, labels, aug, c, TAU, lambda a, b: float(geodesic_distance(a, b, c)))
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)
        perm = rng.permutation(n)
        shuffled = float(L.hyperbolic_contrastive_loss(z[perm], labels[perm], aug[perm], c, TAU))
        assert shuffled == pytest.approx(got, rel=1e-12, abs=1e-12)

    def test_mean_reduction(self):
        z = np.array([[0.1, 0.2], [0.15, 0.1], [-0.3, 0.05], [-0.2, -0.25], [0.0, 0.3]])
        labels, aug = [0, 0, 1, 1, 2], [True] * 5
        total = float(L.hyperbolic_contrastive_loss(z, labels, aug, 1.0, TAU))
        mean = float(L.hyperbolic_contrastive_loss(z, labels, aug, 1.0, TAU, reduction="mean"))
        assert mean == pytest.approx(total / 4, rel=1e-12)
        assert L.count_skipped_anchors(labels) == 1

    def test_no_augmented_rows(self):
        with pytest.raises(ContractViolation):
            L.hyperbolic_contrastive_loss(np.zeros((2, 2)), [0, 0], [False, False], 1.0)

    def test_pairwise_distance_matches_geometry(self):
        rng = np.random.default_rng(3)
        u = rng.uniform(-0.5, 0.5, (5, 3))
        d = L.poincare_pairwise_distance(u, u, 1.0).data
        ref = geodesic_distance(u[:, None, :], u[None, :, :], 1.0)
        np.testing.assert_allclose(d, ref, atol=1e-12)


class TestCrossEntropy:
    def test_uniform(self):
        assert float(L.cross_entropy_loss(np.zeros((3, 4)), [0, 1, 3])) == pytest.approx(math.log(4))

    def test_limit(self):
        logits = np.array([[200.0, 0, 0]])
        assert float(L.cross_entropy_loss(logits, [0])) < 1e-80

    def test_brute_force(self):
        logits = np.random.default_rng(2).standard_normal((2, 3))
        labels = [1, 2]
        expected = -np.mean([log_softmax_row(list(logits[i]))[labels[i]] for i in range(2)])
        assert float(L.cross_entropy_loss(logits, labels)) == pytest.approx(expected, abs=1e-14)


def random_batch(seed, n=4, k=2, d=3):
    rng = np.random.default_rng(seed)
    labels = np.array([i % k for i in range(n)])
    view_ids = np.array([i // k for i in range(n)])
    return L.LabeledEmbeddingBatch(
        unit(rng.standard_normal((n, d))),
        rng.uniform(-0.4, 0.4, (n, d)),
        rng.standard_normal((n, k)),
        labels,
        view_ids,
    ), L.PrototypeSet(unit(rng.standard_normal((k, d))), TAU)


class TestJoint:
    def test_components_match_standalone(self):
        batch, protos = random_batch(0)
        report = L.joint_loss(batch, protos, 1.0)
        assert report.l_com == float(L.compactness_loss(batch.sphere_embeddings, batch.labels, protos.prototypes))
        assert report.l_dis == float(L.disparity_loss(protos.prototypes))
        assert report.l_hypb == float(
            L.hyperbolic_contrastive_loss(batch.hyperbolic_embeddings, batch.labels, batch.augmented, 1.0)
        )
        assert report.l_ce == float(L.cross_entropy_loss(batch.logits, batch.labels))
        assert report.l_total == pytest.approx(report.l_com + report.l_dis + report.l_hypb + report.l_ce, abs=1e-12)

    def test_single_class_origin_batch(self):
        n = 4
        batch = L.LabeledEmbeddingBatch(
            np.tile([1.0, 0, 0], (n, 1)), np.zeros((n, 3)), np.zeros((n, 1)), np.zeros(n), [0, 1, 0, 1]
        )
        report = L.joint_loss(batch, L.PrototypeSet([[1.0, 0, 0]]), 1.0)
        assert report.l_com == 0 and report.l_dis == 0 and report.l_ce == 0
        assert report.l_total == pytest.approx(n * math.log(2), abs=1e-12)

    def test_mismatched_rows(self):
        with pytest.raises(ContractViolation):
            L.LabeledEmbeddingBatch(np.ones((2, 2)), np.zeros((3, 2)), np.zeros((2, 2)), [0, 1], [0, 1])
        with pytest.raises(ContractViolation):
            L.LabeledEmbeddingBatch(unit(np.ones((2, 2))), np.zeros((2, 2)), np.zeros((2, 2)), [0, 2], [0, 1])


@pytest.mark.parametrize("seed", range(5))
def test_joint_gradient_matches_finite_differences(seed):
    batch, protos = random_batch(seed)
    raw_s = batch.sphere_embeddings * 1.3
    raw_mu = protos.prototypes * 0.8

    def total(s, h, logits, mu):
        mu_n = normalize_rows(mu)
        b = L.LabeledEmbeddingBatch(normalize_rows(s), h, logits, batch.labels, batch.view_ids)
        return L.joint_loss_terms(b, mu_n, TAU, 1.0)[0]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in (raw_s, batch.hyperbolic_embeddings, batch.logits, raw_mu)]
    total(*leaves).backward()
    base = [raw_s, batch.hyperbolic_embeddings, batch.logits, raw_mu]
    for i, leaf in enumerate(leaves):
        def f(x, i=i):
            args = [Tensor(b) for b in base]
            args[i] = Tensor(x)
            return float(total(*args))

        assert rel_error(leaf.grad, finite_difference(f, base[i])) <= 1e-4


class TestPrototypes:
    def test_decay_one_unchanged(self):
        protos = L.PrototypeSet(np.eye(3))
        out = L.update_prototypes(protos, unit([[1.0, 1, 0]]), [2], decay=1.0)
        np.testing.assert_array_equal(out.prototypes, protos.prototypes)

    def test_decay_zero_single_sample(self):
        z = unit([[0.3, 0.4, 0.5]])
        out = L.update_prototypes(L.PrototypeSet(np.eye(3)), z, [1], decay=0.0)
        np.testing.assert_allclose(out.prototypes[1], z[0], atol=1e-15)
        np.testing.assert_array_equal(out.prototypes[[0, 2]], np.eye(3)[[0, 2]])

    def test_half_decay_by_hand(self):
        z = unit([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
        mean = z.mean(axis=0)
        expected = unit(0.5 * np.array([1.0, 0, 0]) + 0.5 * mean)
        out = L.update_prototypes(L.PrototypeSet(np.eye(3)), z, [0, 0], decay=0.5)
        np.testing.assert_allclose(out.prototypes[0], expected, atol=1e-15)

    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_unit_norm_restored(self, seed, decay):
        rng = np.random.default_rng(seed)
        protos = L.PrototypeSet(unit(rng.standard_normal((3, 4))))
        out = L.update_prototypes(protos, unit(rng.standard_normal((5, 4))), rng.integers(0, 3, 5), decay)
        np.testing.assert_allclose(np.linalg.norm(out.prototypes, axis=1), 1, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            L.update_prototypes(L.PrototypeSet(np.eye(2)), np.eye(2), [0, 1], decay=1.5)
        with pytest.raises(ContractViolation):
            L.PrototypeSet(np.ones((2, 2)))
