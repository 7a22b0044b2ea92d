"""PCA, exact t-SNE and k-means for clustering unit codes."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray           # (out_dims, D), rows orthonormal
    explained_variance: np.ndarray   # (out_dims,), non-increasing

    @property
    def out_dims(self):
        return self.components.shape[0]


@dataclass
class Embedding2D:
    points: np.ndarray
    source_ids: list

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"embedding points must be N x 2, got {self.points.shape}")
        if len(self.source_ids) != len(self.points):
            raise ValueError("source_ids and points differ in length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("embedding has non-finite coordinates")


@dataclass
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.centroids)

    @property
    def inertia(self):
        return self.inertia_history[-1] if self.inertia_history else float("nan")


# --------------------------------------------------------------------------
# PCA

def _as_matrix(x, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what} must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def pca_fit(codes, out_dims):
    X = _as_matrix(codes, "codes")
    n, d = X.shape
    if n < 2:
        raise ValueError(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= out_dims <= min(n - 1, d):
        raise ValueError(f"out_dims={out_dims} must be in [1, {min(n - 1, d)}] for {n}x{d} codes")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:out_dims].copy()
    # sign convention: largest-magnitude coordinate of each component is positive
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(out_dims), lead])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    var = s[:out_dims] ** 2 / (n - 1)
    return PCAModel(mean, comps, var)


def pca_transform(model, codes):
    X = _as_matrix(codes, "codes")
    if X.shape[1] != model.mean.shape[0]:
        raise ValueError(f"codes have {X.shape[1]} columns, model expects {model.mean.shape[0]}")
    return (X - model.mean) @ model.components.T


def pca_inverse(model, z):
    z = _as_matrix(z, "projected codes")
    if z.shape[1] != model.out_dims:
        raise ValueError(f"projected codes have {z.shape[1]} columns, model has {model.out_dims}")
    return z @ model.components + model.mean


# --------------------------------------------------------------------------
# t-SNE

def squared_distances(X):
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _row_distribution(d, beta):
    # d excludes the point itself; shift by the minimum for stability
    w = np.exp(-(d - d.min()) * beta)
    total = w.sum()
    p = w / total
    nz = p > 0
    entropy = -np.sum(p[nz] * np.log(p[nz]))
    return p, entropy


def row_perplexity(p):
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(np.exp(-np.sum(p[nz] * np.log(p[nz]))))


def conditional_probabilities(X, perplexity, tol=1e-5, max_steps=200):
    """Row-conditional Gaussian affinities ``p_{j|i}`` with bandwidths set by
    bisection so each row's perplexity matches ``perplexity``.

    Returns ``(P, betas)`` where ``betas = 1 / (2 sigma^2)``.
    """
    X = _as_matrix(X, "points")
    n = len(X)
    D = squared_distances(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(D[i], i)
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_steps):
            p, h = _row_distribution(d, beta)
            if abs(np.exp(h) - perplexity) < tol:
                break
            if h > target:   # too flat: narrow the kernel
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        P[i, np.arange(n) != i] = p
        betas[i] = beta
    return P, betas


def joint_probabilities(X, perplexity):
    """Symmetrized affinities, summing to 1."""
    Pc, _ = conditional_probabilities(X, perplexity)
    P = Pc + Pc.T
    return P / P.sum()


def _student_t(Y):
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num


def kl_divergence(P, Y):
    num = _student_t(Y)
    Q = np.maximum(num / num.sum(), 1e-300)
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz] / Q[nz])))


def kl_gradient(P, Y):
    num = _student_t(Y)
    Q = num / num.sum()
    W = (P - Q) * num
    return 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y


def tsne(points, perplexity=30.0, iters=1000, rng_seed=0, source_ids=None,
         learning_rate=200.0, exaggeration=4.0, exaggeration_iters=50, momentum_switch=250):
    """Exact t-SNE to two dimensions."""
    X = _as_matrix(points, "points")
    n = len(X)
    if n < 5:
        raise ValueError(f"t-SNE needs at least 5 points, got {n}")
    if not 1 < perplexity < (n - 1) / 3:
        raise ValueError(f"perplexity {perplexity} must be in (1, {(n - 1) / 3:.3f}) for {n} points")
    if np.all(np.ptp(X, axis=0) == 0):
        raise ValueError("all points are identical")
    ids = list(range(n)) if source_ids is None else list(source_ids)

    P = np.maximum(joint_probabilities(X, perplexity), 1e-12)
    rng = np.random.default_rng(rng_seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    step = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(iters):
        exag = exaggeration if it < exaggeration_iters else 1.0
        grad = kl_gradient(exag * P, Y)
        momentum = 0.5 if it < momentum_switch else 0.8
        gains = np.where(np.sign(grad) != np.sign(step), gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        step = momentum * step - learning_rate * gains * grad
        Y = Y + step
        Y -= Y.mean(axis=0)
    return Embedding2D(Y, ids)


# --------------------------------------------------------------------------
# k-means

def _plusplus(X, k, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # only duplicates of existing centers remain
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _assign(X, C):
    d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
    a = np.argmin(d2, axis=1)
    return a, d2[np.arange(len(X)), a]


def kmeans(points, k, rng_seed=0, max_iters=300):
    """k-means++ seeding followed by Lloyd iterations to an assignment fixpoint."""
    X = _as_matrix(points, "points")
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(rng_seed)
    C = _plusplus(X, k, rng)
    assign, d2 = _assign(X, C)
    history = [float(d2.sum())]
    for _ in range(max_iters):
        for c in range(k):
            members = assign == c
            if members.any():
                C[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                C[c] = X[far]
                assign[far] = c
                d2[far] = 0.0
        new_assign, d2 = _assign(X, C)
        history.append(float(d2.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    for c in range(k):
        members = assign == c
        if members.any():
            C[c] = X[members].mean(axis=0)
    return Clustering(assign, C, history)


def nearest_members(clustering, embedding, cluster_id, m):
    """The ``m`` members closest to the cluster centroid; ties go to the lower source id."""
    if not 0 <= cluster_id < clustering.k:
        raise ValueError(f"unknown cluster {cluster_id}; have {clustering.k}")
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = np.flatnonzero(clustering.assignments == cluster_id)
    if len(idx) == 0:
        raise ValueError(f"cluster {cluster_id} is empty")
    d = np.linalg.norm(embedding.points[idx] - clustering.centroids[cluster_id], axis=1)
    order = sorted(range(len(idx)), key=lambda j: (d[j], embedding.source_ids[idx[j]]))
    return [embedding.source_ids[idx[j]] for j in order[:m]]


def purity(assignments, labels):
    """Fraction of points whose cluster's majority label matches their own."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    hits = 0
    for c in np.unique(assignments):
        _, counts = np.unique(labels[assignments == c], return_counts=True)
        hits += counts.max()
    return hits / len(labels)
