import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetviz.embedding import (Clustering, Embedding2D, conditional_probabilities, joint_probabilities,
                                kl_divergence, kl_gradient, kmeans, nearest_members, pca_fit, pca_inverse,
                                pca_transform, purity, tsne)
from oracles import blobs, central_fd, covariance_loops, rel_err, shannon_perplexity


class TestPCA:
    def test_rank_one_line(self, rng):
        direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        X = rng.normal(size=(30, 1)) * direction + np.array([3.0, 1.0, -1.0])
        m = pca_fit(X, 2)
        assert abs(m.components[0] @ direction) > 0.999
        assert m.explained_variance[1] == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_covariance(self, rng):
        Z = rng.normal(size=(50, 2))
        Z -= Z.mean(axis=0)
        L = np.linalg.cholesky(Z.T @ Z / (len(Z) - 1))
        Z = Z @ np.linalg.inv(L).T        # sample covariance exactly identity
        X = Z * np.array([2.0, 1.0])
        m = pca_fit(X, 2)
        np.testing.assert_allclose(m.explained_variance, [4.0, 1.0], atol=1e-5)
        np.testing.assert_allclose(m.components, np.eye(2), atol=1e-5)

    def test_eigen_oracle_and_reconstruction(self, rng):
        X = rng.normal(size=(20, 6)) @ rng.normal(size=(6, 6))
        m = pca_fit(X, 6)
        eig = np.sort(np.linalg.eigvalsh(covariance_loops(X)))[::-1]
        np.testing.assert_allclose(m.explained_variance, eig, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(pca_inverse(m, pca_transform(m, X)), X, atol=1e-4)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(6), atol=1e-10)

    def test_sign_convention(self, rng):
        m = pca_fit(rng.normal(size=(15, 4)), 3)
        lead = m.components[np.arange(3), np.argmax(np.abs(m.components), axis=1)]
        assert np.all(lead > 0)

    @pytest.mark.parametrize("dims", [0, 5])
    def test_dims_checked(self, rng, dims):
        with pytest.raises(ValueError):
            pca_fit(rng.normal(size=(5, 4)), dims)


class TestAffinities:
    def test_row_perplexity(self, rng):
        X = rng.normal(size=(40, 5))
        P, _ = conditional_probabilities(X, 12.0)
        assert np.all(np.diag(P) == 0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        for row in P:
            assert abs(shannon_perplexity(row) - 12.0) < 1e-3

    def test_joint(self, rng):
        P = joint_probabilities(rng.normal(size=(25, 3)), 5.0)
        np.testing.assert_allclose(P, P.T, atol=1e-15)
        assert P.min() >= 0 and P.sum() == pytest.approx(1.0, abs=1e-6)

    def test_kl_gradient(self, rng):
        P = joint_probabilities(rng.normal(size=(12, 4)), 3.0)
        Y = rng.normal(size=(12, 2))
        fd = central_fd(lambda y: kl_divergence(P, y), Y, eps=1e-5)
        assert rel_err(kl_gradient(P, Y), fd) < 1e-4


class TestTSNE:
    def test_separates_blobs(self, rng):
        X, labels = blobs(rng, per=20, dims=5)
        Y = tsne(X, 10.0, rng_seed=1).points
        D = np.linalg.norm(Y[:, None] - Y[None], axis=2)
        same = labels[:, None] == labels[None]
        off = ~np.eye(len(Y), dtype=bool)
        assert D[~same].mean() >= 3 * D[same & off].mean()

    def test_deterministic(self, rng):
        X = rng.normal(size=(20, 3))
        a, b = tsne(X, 4.0, iters=100, rng_seed=9), tsne(X, 4.0, iters=100, rng_seed=9)
        assert a.points.tobytes() == b.points.tobytes()

    def test_source_ids(self, rng):
        emb = tsne(rng.normal(size=(10, 2)), 2.0, iters=20, source_ids=list(range(100, 110)))
        assert emb.source_ids == list(range(100, 110)) and emb.points.shape == (10, 2)

    @pytest.mark.parametrize("n,perp", [(4, 1.2), (10, 3.0), (10, 1.0)])
    def test_preconditions(self, rng, n, perp):
        with pytest.raises(ValueError):
            tsne(rng.normal(size=(n, 2)), perp)

    def test_identical_points(self):
        with pytest.raises(ValueError):
            tsne(np.ones((10, 3)), 2.0)

    def test_embedding_validation(self):
        with pytest.raises(ValueError):
            Embedding2D(np.zeros((3, 3)), [0, 1, 2])
        with pytest.raises(ValueError):
            Embedding2D(np.zeros((3, 2)), [0, 1])


class TestKMeans:
    def test_k_equals_n(self, rng):
        X = rng.normal(size=(7, 2))
        c = kmeans(X, 7)
        assert sorted(c.assignments) == list(range(7)) and c.inertia == 0

    def test_single_cluster(self, rng):
        X = rng.normal(size=(30, 3))
        np.testing.assert_allclose(kmeans(X, 1).centroids[0], X.mean(axis=0), atol=1e-12)

    def test_planted_blobs(self, rng):
        X, labels = blobs(rng, per=30, sigma=0.5)
        for seed in range(20):
            assert purity(kmeans(X, 3, rng_seed=seed).assignments, labels) >= 0.99

    def test_inertia_non_increasing(self, rng):
        c = kmeans(rng.normal(size=(100, 2)), 6, rng_seed=2)
        assert np.all(np.diff(c.inertia_history) <= 1e-9)

    def test_duplicates_keep_k_clusters(self):
        X = np.array([[0.0, 0], [0, 0], [0, 0], [1, 1]])
        c = kmeans(X, 3)
        assert c.k == 3 and np.isfinite(c.centroids).all()
        assert c.inertia == 0

    @pytest.mark.parametrize("k", [0, 11])
    def test_bad_k(self, rng, k):
        with pytest.raises(ValueError):
            kmeans(rng.normal(size=(10, 2)), k)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_assignment_is_nearest_centroid(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(25, 2))
        c = kmeans(X, k, rng_seed=seed)
        d = np.linalg.norm(X[:, None] - c.centroids[None], axis=2)
        assert np.all(d[np.arange(25), c.assignments] <= d.min(axis=1) + 1e-9)


class TestNearestMembers:
    def test_order_and_ties(self):
        pts = np.array([[1.0, 0], [-1, 0], [0, 2], [5, 5]])
        emb = Embedding2D(pts, [40, 30, 20, 10])
        cl = Clustering(np.array([0, 0, 0, 1]), np.array([[0.0, 0], [5, 5]]))
        assert nearest_members(cl, emb, 0, 2) == [30, 40]
        assert nearest_members(cl, emb, 0, 10) == [30, 40, 20]

    def test_unknown_cluster(self):
        cl = Clustering(np.array([0]), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            nearest_members(cl, Embedding2D(np.zeros((1, 2)), [0]), 3, 1)


def test_purity():
    assert purity([0, 0, 1, 1], ["a", "a", "b", "b"]) == 1.0
    assert purity([0, 0, 0, 0], ["a", "a", "a", "b"]) == 0.75
