"""Synthetic shape datasets with planted facets, and PNG directory ingestion."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

SHAPES = ("square", "circle", "triangle", "cross")
SUPERSAMPLE = 4

RED = (0.90, 0.15, 0.10)
GREEN = (0.15, 0.80, 0.20)
BLUE = (0.15, 0.30, 0.90)
YELLOW = (0.95, 0.85, 0.15)
MAGENTA = (0.80, 0.20, 0.80)
CYAN = (0.10, 0.80, 0.85)
ORANGE = (1.00, 0.55, 0.10)
WHITE = (0.95, 0.95, 0.95)

DARK = (0.15, 0.15, 0.18)
SKY = (0.55, 0.75, 0.95)
GRASS = (0.35, 0.55, 0.25)
SAND = (0.85, 0.78, 0.60)
GRAY = (0.50, 0.50, 0.50)


@dataclass(frozen=True)
class FacetSpec:
    fill: tuple
    background: tuple
    count: int = 1
    jitter: float = 1.5
    shape: str | None = None   # overrides the class shape when set


@dataclass(frozen=True)
class ClassSpec:
    shape: str
    facets: tuple


@dataclass
class ShapesSpec:
    classes: list
    images_per_class: int = 450
    image_size: int = 32
    rng_seed: int = 0
    noise: float = 0.03

    def validate(self):
        problems = []
        if len(self.classes) < 2:
            problems.append("need at least 2 classes")
        if self.images_per_class < 1:
            problems.append("images_per_class must be >= 1")
        if self.image_size < 8:
            problems.append("image_size must be >= 8")
        for i, cls in enumerate(self.classes):
            if cls.shape not in SHAPES:
                problems.append(f"class {i}: unknown shape {cls.shape!r}")
            if not cls.facets:
                problems.append(f"class {i}: no facets")
            looks = [(f.shape or cls.shape, tuple(f.fill), tuple(f.background)) for f in cls.facets]
            if len(set(looks)) != len(looks):
                problems.append(f"class {i}: facets must differ in color")
            for j, f in enumerate(cls.facets):
                if f.count not in (1, 2, 3):
                    problems.append(f"class {i} facet {j}: count must be 1, 2 or 3")
                if f.shape is not None and f.shape not in SHAPES:
                    problems.append(f"class {i} facet {j}: unknown shape {f.shape!r}")
                if f.jitter < 0:
                    problems.append(f"class {i} facet {j}: negative jitter")
        if problems:
            raise DataError("invalid shapes spec: " + "; ".join(problems))


@dataclass
class LabeledDataset:
    """Mean-subtracted images ``(n, H, W, C)`` in [0, 1] units, with labels.

    ``mean_intensity`` holds the per-channel mean that was subtracted.
    """

    images: np.ndarray
    labels: np.ndarray
    mean_intensity: np.ndarray
    facet_labels: np.ndarray | None = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=int)
        self.mean_intensity = np.asarray(self.mean_intensity, dtype=np.float32)
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if self.facet_labels is not None:
            self.facet_labels = np.asarray(self.facet_labels, dtype=int)
            if len(self.facet_labels) != len(self.labels):
                raise DataError("facet labels and labels differ in length")
        if not self.names:
            self.names = [f"img_{i}" for i in range(len(self.images))]

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def raw(self, i):
        """Image ``i`` in [0, 1] display units."""
        return self.images[i] + self.mean_intensity

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.images[idx], self.labels[idx], self.mean_intensity,
                              None if self.facet_labels is None else self.facet_labels[idx],
                              [self.names[i] for i in idx])


def default_spec(images_per_class=450, rng_seed=0):
    """4 classes x 3 facets varying color, background and object count."""
    return ShapesSpec([
        ClassSpec("square", (FacetSpec(RED, DARK, 1), FacetSpec(GREEN, SAND, 2), FacetSpec(BLUE, GRAY, 3))),
        ClassSpec("circle", (FacetSpec(ORANGE, SKY, 1), FacetSpec(MAGENTA, DARK, 2), FacetSpec(CYAN, GRASS, 3))),
        ClassSpec("triangle", (FacetSpec(YELLOW, DARK, 1), FacetSpec(RED, SKY, 2), FacetSpec(WHITE, GRASS, 3))),
        ClassSpec("cross", (FacetSpec(BLUE, SAND, 1), FacetSpec(YELLOW, GRAY, 2), FacetSpec(GREEN, DARK, 3))),
    ], images_per_class=images_per_class, rng_seed=rng_seed)


def planted_spec(images_per_class=200, rng_seed=0):
    """Class 0 mixes two planted facets, red squares and green circles, under one label."""
    return ShapesSpec([
        ClassSpec("square", (FacetSpec(RED, GRAY, 1), FacetSpec(GREEN, GRAY, 1, shape="circle"))),
        ClassSpec("triangle", (FacetSpec(BLUE, GRAY, 1),)),
        ClassSpec("cross", (FacetSpec(YELLOW, GRAY, 1),)),
        ClassSpec("square", (FacetSpec(MAGENTA, GRAY, 1),)),
    ], images_per_class=images_per_class, rng_seed=rng_seed)


def object_spec(images_per_class=150, rng_seed=0, jitter=5.0):
    """10 single-object classes (shape x color) at jittered positions; every class
    appears on the same three backgrounds, so only the object carries class
    information."""
    objects = [("square", RED), ("square", CYAN), ("circle", RED), ("circle", BLUE),
               ("triangle", GREEN), ("triangle", MAGENTA), ("cross", ORANGE), ("cross", BLUE),
               ("circle", YELLOW), ("square", WHITE)]
    backgrounds = (DARK, GRASS, SAND)
    return ShapesSpec([ClassSpec(shape, tuple(FacetSpec(fill, bg, 1, jitter) for bg in backgrounds))
                       for shape, fill in objects],
                      images_per_class=images_per_class, rng_seed=rng_seed)


def _coverage(shape, size, centers, half):
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    mask = np.zeros((n, n), dtype=bool)
    for cy, cx in centers:
        dy, dx = yy - cy, xx - cx
        if shape == "square":
            m = (np.abs(dx) <= half) & (np.abs(dy) <= half)
        elif shape == "circle":
            m = dx * dx + dy * dy <= half * half
        elif shape == "triangle":
            m = (dy <= half) & (np.abs(dx) <= (dy + half) / 2)
        else:
            arm = half / 3
            m = ((np.abs(dx) <= half) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= half) & (np.abs(dx) <= arm))
        mask |= m
    return mask.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


_LAYOUTS = {
    1: [(0.0, 0.0)],
    2: [(0.0, -0.25), (0.0, 0.25)],
    3: [(-0.22, 0.0), (0.2, -0.25), (0.2, 0.25)],
}
_HALF_SIZE = {1: 0.26, 2: 0.15, 3: 0.12}


def render_shape(shape, facet, size, rng):
    """Anti-aliased rendering of one image of ``facet`` in [0, 1] units."""
    half = _HALF_SIZE[facet.count] * size * rng.uniform(0.85, 1.15)
    centers = []
    for oy, ox in _LAYOUTS[facet.count]:
        cy = size / 2 + oy * size + rng.normal(0, facet.jitter)
        cx = size / 2 + ox * size + rng.normal(0, facet.jitter)
        centers.append((cy, cx))
    cov = _coverage(shape, size, centers, half)[..., None]
    img = np.asarray(facet.background) * (1 - cov) + np.asarray(facet.fill) * cov
    return img


def generate_shapes(spec):
    """Deterministic synthetic dataset; facets are sampled uniformly within each class."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    images, labels, facets, names = [], [], [], []
    for ci, cls in enumerate(spec.classes):
        for j in range(spec.images_per_class):
            fi = int(rng.integers(len(cls.facets)))
            facet = cls.facets[fi]
            img = render_shape(facet.shape or cls.shape, facet, spec.image_size, rng)
            if spec.noise > 0:
                img = img + rng.normal(0, spec.noise, img.shape)
            images.append(np.clip(img, 0, 1))
            labels.append(ci)
            facets.append(fi)
            names.append(f"class_{ci}/img_{j}")
    images = np.asarray(images, dtype=np.float32)
    mean = images.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
    return LabeledDataset(images - mean, labels, mean, facets, names)


def split(ds, holdout=0.2, rng_seed=0):
    """Random train/held-out split."""
    order = np.random.default_rng(rng_seed).permutation(len(ds))
    n_test = int(round(holdout * len(ds)))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


# --------------------------------------------------------------------------
# directory export / import

def to_uint8(img01):
    return np.clip(np.round(np.asarray(img01, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def export_directory(ds, path, seed=None):
    """Write ``class_<i>/img_<j>.png`` files plus ``facets.csv`` and ``meta``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    counters = {}
    for i in range(len(ds)):
        c = int(ds.labels[i])
        j = counters.get(c, 0)
        counters[c] = j + 1
        rel = f"class_{c}/img_{j}.png"
        (root / f"class_{c}").mkdir(exist_ok=True)
        Image.fromarray(to_uint8(ds.raw(i))).save(root / rel)
        facet = "" if ds.facet_labels is None else int(ds.facet_labels[i])
        rows.append((rel, c, facet))
    with open(root / "facets.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "class", "facet"])
        w.writerows(rows)
    meta = {"mean_intensity": [float(v) for v in ds.mean_intensity],
            "image_size": list(ds.images.shape[1:]), "seed": seed, "count": len(ds)}
    (root / "meta").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return root


def _read_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr


def _natural_key(p):
    stem = p.stem
    head = stem.rstrip("0123456789")
    tail = stem[len(head):]
    return (head, int(tail) if tail else -1, p.name)


def load_directory(path, class_subdirs=True):
    """Load PNGs; with ``class_subdirs`` each sorted subdirectory is one class.

    Files are ordered by name (numeric suffixes compared numerically). Pixels
    are mapped to [0, 1] and the per-channel mean is subtracted.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    if class_subdirs:
        dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=_natural_key)
    else:
        dirs = [root]
    images, labels, names = [], [], []
    for ci, d in enumerate(dirs):
        for f in sorted((f for f in d.iterdir() if f.is_file()), key=_natural_key):
            if class_subdirs is False and f.name in ("facets.csv", "meta"):
                continue
            images.append(_read_png(f))
            labels.append(ci)
            names.append(f.relative_to(root).with_suffix("").as_posix())
    if not images:
        raise DataError(f"no images found under {root}")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"images under {root} differ in size: {sorted(shapes)}")
    images = np.asarray(images, dtype=np.float32)
    facet_labels = None
    facets_csv = root / "facets.csv"
    if facets_csv.exists():
        with open(facets_csv, newline="") as fh:
            table = {r["image"].rsplit(".", 1)[0]: r["facet"] for r in csv.DictReader(fh)}
        if all(table.get(n, "") != "" for n in names):
            facet_labels = [int(table[n]) for n in names]
    mean = images.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
    return LabeledDataset(images - mean, labels, mean, facet_labels, names)
