"""Multifaceted feature visualization: collect, embed, cluster, then optimize
one visualization per cluster, seeded from the cluster's mean image."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import embedding as emb
from .actmax import AMConfig, PhaseSchedule, center_biased_maximize, maximize
from .errors import DataError
from .network import (forward, layer_codes, predict_proba, receptive_field, unit_activations,
                      validate_selector)
from .tensor_core import center_crop, check_image, lerp_images


@dataclass
class ImageSet:
    """Images gathered for one unit. ``ids`` index into the source dataset."""

    ids: list
    images: np.ndarray
    activations: np.ndarray | None = None
    locations: list | None = None   # conv units: (row, col) of the maximal column
    patches: list | None = None     # conv units: receptive-field box (r0, r1, c0, c1)

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        self.images = np.asarray(self.images, dtype=np.float32)
        if len(self.ids) != len(self.images):
            raise DataError("ids and images differ in length")
        self._rows = {i: r for r, i in enumerate(self.ids)}
        if len(self._rows) != len(self.ids):
            raise DataError("duplicate image ids")

    def __len__(self):
        return len(self.ids)

    def rows(self, ids):
        try:
            return [self._rows[int(i)] for i in ids]
        except KeyError as exc:
            raise DataError(f"unknown image id {exc.args[0]}") from None


@dataclass
class FacetConfig:
    k: int = 10
    m: int = 15
    top_fraction: float = 0.02
    pca_dims: int = 50
    code_layer: str = "fc_code"
    perplexity: float = 30.0
    tsne_iters: int = 1000
    rng_seed: int = 0
    am: AMConfig | PhaseSchedule = field(default_factory=AMConfig)

    def __post_init__(self):
        problems = []
        if not 0 < self.top_fraction <= 1:
            problems.append("top_fraction must be in (0, 1]")
        if self.m < 1:
            problems.append("m must be >= 1")
        if self.k < 1:
            problems.append("k must be >= 1")
        if self.pca_dims < 1:
            problems.append("pca_dims must be >= 1")
        if self.perplexity <= 1:
            problems.append("perplexity must be > 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class FacetCluster:
    member_ids: list
    centroid: np.ndarray
    seed_ids: list
    mean_image: np.ndarray
    visualization: object = None   # AMResult


@dataclass
class FacetSet:
    unit: object
    k: int
    clusters: list
    embedding: emb.Embedding2D
    clustering: emb.Clustering
    perplexity: float = 0.0


# --------------------------------------------------------------------------
# collection

def collect_class_images(dataset, class_id):
    ids = np.flatnonzero(np.asarray(dataset.labels) == class_id)
    if len(ids) == 0:
        if not 0 <= class_id < dataset.num_classes:
            raise DataError(f"unknown class {class_id}")
        raise DataError(f"class {class_id} has no images")
    return ImageSet(ids.tolist(), dataset.images[ids])


def top_count(n, top_fraction):
    # guard against 0.02 * 50000 landing a hair above an integer
    return min(n, max(1, math.ceil(top_fraction * n - 1e-9)))


def collect_top_activating(dataset, net, sel, top_fraction):
    """The ``ceil(top_fraction * N)`` most activating images, highest first."""
    if len(dataset.images) == 0:
        raise DataError("dataset is empty")
    idx = validate_selector(net, sel)
    X = np.asarray(dataset.images, dtype=np.float32)
    acts = unit_activations(net, X, sel)
    order = np.argsort(-acts, kind="stable")[: top_count(len(X), top_fraction)]
    locations = patches = None
    shape = net.shapes[idx]
    if len(shape) == 3:
        if sel.location is not None:
            locations = [tuple(sel.location)] * len(order)
        else:
            locations = []
            for i in order:
                fmap = forward(net, X[i])[idx][..., sel.unit]
                r, c = np.unravel_index(int(np.argmax(fmap)), fmap.shape)
                locations.append((int(r), int(c)))
        patches = [receptive_field(net, sel.layer, r, c) for r, c in locations]
    return ImageSet(order.tolist(), X[order], acts[order], locations, patches)


def mean_image(source, ids):
    """Element-wise mean of the identified images (dataset indices or ImageSet ids)."""
    ids = list(ids)
    if not ids:
        raise ValueError("mean_image needs at least one id")
    if isinstance(source, ImageSet):
        imgs = source.images[source.rows(ids)]
    else:
        imgs = np.asarray(source.images)[np.asarray(ids, dtype=int)]
    return imgs.astype(np.float64).mean(axis=0).astype(np.float32)


# --------------------------------------------------------------------------
# the pipeline

def _codes(net, sel, U, layer):
    shape = net.shapes[net.index(layer)]
    locs = None
    if len(shape) == 3 and layer == sel.layer and U.locations is not None:
        locs = U.locations
    return layer_codes(net, U.images, layer, locs)


def _optimize(net, sel, seed, am, rng_seed):
    if isinstance(am, PhaseSchedule):
        return center_biased_maximize(net, sel, seed, replace(am, rng_seed=rng_seed))
    return maximize(net, sel, replace(am, seed_image=seed, rng_seed=rng_seed))


def _run_all(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def embed_codes(codes, cfg, ids):
    """PCA then t-SNE; returns ``(embedding, perplexity used)``.

    Perplexity is capped just below ``(N - 1) / 3`` for small image sets.
    """
    n, width = codes.shape
    dims = min(cfg.pca_dims, width, n - 1)
    z = emb.pca_transform(emb.pca_fit(codes, dims), codes)
    perp = min(cfg.perplexity, (n - 1) / 3 - 1e-3)
    if perp <= 1:
        raise DataError(f"{n} images are too few to embed")
    return emb.tsne(z, perp, cfg.tsne_iters, cfg.rng_seed, ids), perp


def run_mfv(net, sel, U, cfg, jobs=1, optimize=True):
    """Cluster the unit's images into ``cfg.k`` facets and synthesize one
    visualization per facet, each seeded with its cluster's mean image."""
    validate_selector(net, sel)
    net.index(cfg.code_layer)
    if len(U) < cfg.k:
        raise DataError(f"{len(U)} images are fewer than k={cfg.k}")
    codes = _codes(net, sel, U, cfg.code_layer)
    embedding, perp = embed_codes(codes, cfg, U.ids)
    clustering = emb.kmeans(embedding.points, cfg.k, cfg.rng_seed)
    clusters = []
    for c in range(cfg.k):
        members = [U.ids[i] for i in np.flatnonzero(clustering.assignments == c)]
        seeds = emb.nearest_members(clustering, embedding, c, cfg.m)
        clusters.append(FacetCluster(members, clustering.centroids[c].copy(), seeds,
                                     mean_image(U, seeds)))
    if optimize:
        base_seed = cfg.am.rng_seed
        results = _run_all(lambda ic: _optimize(net, sel, ic[1].mean_image, cfg.am, base_seed + ic[0]),
                           list(enumerate(clusters)), jobs)
        for i, (cl, res) in enumerate(zip(clusters, results)):
            res.label = f"facet_{i}"
            cl.visualization = res
    return FacetSet(sel, cfg.k, clusters, embedding, clustering, perp)


def interpolation_experiment(net, sel, img_a, img_b, steps=8, am_cfg=None, jobs=1):
    """One AM run per seed ``lerp(a, b, t)`` for ``t = i / (steps + 1)``, i = 0..steps+1."""
    a, b = check_image(img_a, "img_a"), check_image(img_b, "img_b")
    if a.shape != b.shape:
        raise ValueError(f"endpoint shapes differ: {a.shape} vs {b.shape}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    am_cfg = am_cfg if am_cfg is not None else AMConfig()
    ts = [i / (steps + 1) for i in range(steps + 2)]
    seed = am_cfg.rng_seed

    def run(t):
        res = _optimize(net, sel, lerp_images(a, b, t), am_cfg, seed)
        res.label = f"t={t:.3f}"
        return res

    return _run_all(run, ts, jobs)


def classify_visualization(net, img):
    """``[(class, softmax score), ...]`` sorted by descending score."""
    x = check_image(img)
    if x.shape != net.input_shape:
        raise ValueError(f"image shape {x.shape} != network input {net.input_shape}")
    p = predict_proba(net, x[None])[0]
    order = np.argsort(-p, kind="stable")
    return [(int(c), float(p[c])) for c in order]


def visualization_window(net, img):
    """Network-input-sized center of a (possibly larger) visualization canvas."""
    return center_crop(img, *net.input_shape[:2])


# --------------------------------------------------------------------------
# planted-facet scoring

def mean_color(img):
    return np.asarray(img, dtype=np.float64).reshape(-1, np.shape(img)[-1]).mean(axis=0)


@dataclass
class FacetColorClassifier:
    """Nearest planted facet by mean-color distance.

    ``references`` maps a facet name to its mean color; ``band`` is the
    half-open central fraction of the segment between two facets that counts
    as a color mixture rather than either facet.
    """

    references: dict
    band: tuple = (0.25, 0.75)

    @classmethod
    def from_dataset(cls, dataset, keys):
        """Reference colors averaged over each planted facet's images.

        ``keys`` maps a name to ``(class_id, facet_id)``.
        """
        refs = {}
        for name, (c, f) in keys.items():
            sel = (np.asarray(dataset.labels) == c) & (np.asarray(dataset.facet_labels) == f)
            if not sel.any():
                raise DataError(f"no images for class {c} facet {f}")
            refs[name] = dataset.images[sel].astype(np.float64).mean(axis=(0, 1, 2))
        return cls(refs)

    def nearest(self, img):
        col = mean_color(img)
        names = list(self.references)
        d = [np.linalg.norm(col - self.references[n]) for n in names]
        return names[int(np.argmin(d))]

    def mix_position(self, img, a, b):
        """Projection of the image's mean color onto the segment from facet a (0) to b (1)."""
        ca, cb = self.references[a], self.references[b]
        seg = cb - ca
        return float(np.dot(mean_color(img) - ca, seg) / np.dot(seg, seg))

    def label(self, img, a, b, span=(0.0, 1.0)):
        """``a``, ``b``, ``"mixture"`` or the name of another facet.

        ``span`` gives the segment positions treated as pure ``a`` and pure
        ``b``; passing the positions of the two endpoint runs cancels any color
        shift the optimizer applies to both facets alike.
        """
        near = self.nearest(img)
        if near not in (a, b):
            return near
        t = (self.mix_position(img, a, b) - span[0]) / (span[1] - span[0])
        if self.band[0] < t < self.band[1]:
            return "mixture"
        return a if t <= self.band[0] else b

    def interpolation_labels(self, results, a, b):
        """Label interpolation runs ordered from facet ``a`` to facet ``b``."""
        imgs = [r.final_image for r in results]
        span = (self.mix_position(imgs[0], a, b), self.mix_position(imgs[-1], a, b))
        if abs(span[1] - span[0]) < 1e-9:
            span = (0.0, 1.0)
        return [self.label(img, a, b, span) for img in imgs]


def cluster_purity(fs, facet_of):
    """Purity of the facet clustering against planted facet labels (id -> label)."""
    assign, labels = [], []
    for ci, cl in enumerate(fs.clusters):
        for i in cl.member_ids:
            assign.append(ci)
            labels.append(facet_of[i])
    return emb.purity(assign, labels)
