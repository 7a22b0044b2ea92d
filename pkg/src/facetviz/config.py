"""Run configuration: an INI-style text file with fixed sections and keys.

Unknown sections and keys are rejected, and every problem in a file is
reported at once. Seeds left out of a section fall back to ``[run] seed``.
"""

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from . import actmax, dataset, network, priors
from .errors import ConfigError, FacetError
from .facets import FacetConfig

SUBCOMMANDS = ("generate", "train", "facets", "actmax", "center", "interpolate", "compare")
DATASET_KINDS = ("shapes", "planted", "objects", "directory")
OPTIMIZERS = ("plain", "center")


# --------------------------------------------------------------------------
# value parsers; each raises ValueError with a short reason

def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _none_or(parse):
    def inner(s):
        return None if s.strip().lower() in ("none", "") else parse(s)
    return inner


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise ValueError(f"seed must be in [0, 2^64), got {s!r}")
    return v


def _pair(parse):
    def inner(s):
        parts = [p.strip() for p in s.split(",")]
        if len(parts) != 2:
            raise ValueError(f"expected two comma-separated values, got {s!r}")
        return parse(parts[0]), parse(parts[1])
    return inner


def _choice(options):
    def inner(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return inner


def _str(s):
    s = s.strip()
    if not s:
        raise ValueError("empty value")
    return s


AM_KEYS = {
    "iterations": int, "learning_rate": _float, "normalize_grad": _bool, "clamp": _pair(_float),
    "seed": _seed, "tv_lambda": _float, "tv_inner_iters": int, "blur_sigma_start": _float,
    "blur_sigma_end": _float, "blur_every": int, "alpha": _float, "alpha_weight": _float,
    "alpha_center": _float, "jitter.canvas": _none_or(int), "jitter.center_box": _none_or(_float),
    "label": str,
}
PHASE_KEYS = {"iterations": int, "learning_rate": _float, "tv_lambda": _float, "canvas": int,
              "jitter_center_box": _none_or(_float), "grad_crop": _none_or(int)}

SCHEMA = {
    "run": {"seed": _seed},
    "dataset": {"kind": _choice(DATASET_KINDS), "path": str, "images_per_class": int,
                "image_size": int, "noise": _float, "seed": _seed, "holdout": _float},
    "network": {"weights": str, "seed": _seed},
    "train": {"learning_rate": _float, "momentum": _float, "epochs": int, "batch_size": int,
              "seed": _seed},
    "unit": {"layer": _str, "unit": int, "location": _none_or(_pair(int))},
    "am": AM_KEYS,
    "schedule": {"tv_inner_iters": int, "reference_size": int, "pixel_range": _float, "seed": _seed,
                 **{f"phase{i}.{k}": v for i in range(1, 6) for k, v in PHASE_KEYS.items()}},
    "facet": {"k": int, "m": int, "top_fraction": _float, "pca_dims": int, "code_layer": _str,
              "perplexity": _float, "tsne_iters": int, "seed": _seed,
              "source": _choice(("class", "top")), "class_id": int, "optimizer": _choice(OPTIMIZERS)},
    "interpolate": {"steps": int, "a": _str, "b": _str, "m": int, "optimizer": _choice(OPTIMIZERS)},
}
VARIANT_PREFIX = "variant."
PATH_KEYS = {("dataset", "path"), ("network", "weights")}


@dataclass
class RunConfig:
    """Parsed configuration: ``values[section][key]`` holds typed values for the
    keys present in the file; everything else takes its documented default."""

    text: str
    values: dict
    base_dir: Path
    seed_override: int | None = None

    @property
    def seed(self):
        if self.seed_override is not None:
            return self.seed_override
        return self.get("run", "seed", 0)

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def has(self, section):
        return section in self.values

    def section_seed(self, section):
        # --seed overrides every seed in the file
        if self.seed_override is not None:
            return self.seed_override
        return self.get(section, "seed", self.seed)

    def path(self, section, key):
        p = self.get(section, key)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def variants(self):
        return [s for s in self.values if s.startswith(VARIANT_PREFIX)]

    # ---- typed views -------------------------------------------------------

    def dataset_spec(self):
        kind = self.get("dataset", "kind", "shapes")
        seed = self.section_seed("dataset")
        kw = {"rng_seed": seed}
        if self.get("dataset", "images_per_class") is not None:
            kw["images_per_class"] = self.get("dataset", "images_per_class")
        if kind == "shapes":
            spec = dataset.default_spec(**kw)
        elif kind == "planted":
            spec = dataset.planted_spec(**kw)
        elif kind == "objects":
            spec = dataset.object_spec(**kw)
        else:
            return None
        spec.image_size = self.get("dataset", "image_size", spec.image_size)
        spec.noise = self.get("dataset", "noise", spec.noise)
        return spec

    def train_config(self):
        d = self.values.get("train", {})
        return network.TrainConfig(
            learning_rate=d.get("learning_rate", 0.01), momentum=d.get("momentum", 0.9),
            epochs=d.get("epochs", 15), batch_size=d.get("batch_size", 32),
            rng_seed=self.section_seed("train"))

    def unit(self):
        d = self.values.get("unit", {})
        return network.UnitSelector(d.get("layer", "fc_class"), d.get("unit", 0), d.get("location"))

    def am_config(self, input_shape, section="am"):
        d = dict(self.values.get("am", {}))
        if section != "am":
            d.update(self.values.get(section, {}))
        base = actmax.tv_jitter_config(input_shape)
        h, w = input_shape[:2]
        canvas = d.get("jitter.canvas", base.reg.jitter.canvas_h)
        jitter = None
        if canvas is not None:
            jitter = priors.JitterConfig(canvas, canvas, h, w, d.get("jitter.center_box"))
        reg = priors.RegularizerConfig(
            tv_lambda=d.get("tv_lambda", base.reg.tv_lambda),
            tv_inner_iters=d.get("tv_inner_iters", base.reg.tv_inner_iters),
            blur_sigma_start=d.get("blur_sigma_start", 0.0), blur_sigma_end=d.get("blur_sigma_end", 0.0),
            blur_every=d.get("blur_every", 0), alpha=d.get("alpha", 6.0),
            alpha_weight=d.get("alpha_weight", 0.0), alpha_center=d.get("alpha_center", 0.0),
            jitter=jitter)
        seed = self.seed_override if self.seed_override is not None else d.get("seed", self.seed)
        label = d.get("label") or (section[len(VARIANT_PREFIX):] if section != "am" else "")
        return actmax.AMConfig(
            iterations=d.get("iterations", base.iterations),
            learning_rate=d.get("learning_rate", base.learning_rate),
            reg=reg, rng_seed=seed, clamp=d.get("clamp", base.clamp),
            normalize_grad=d.get("normalize_grad", base.normalize_grad), label=label)

    def schedule(self):
        d = self.values.get("schedule", {})
        default = actmax.published_schedule()
        phases = []
        for i, p in enumerate(default.phases, start=1):
            kw = {k: d.get(f"phase{i}.{k}", getattr(p, k)) for k in PHASE_KEYS}
            phases.append(actmax.PhaseSpec(**kw))
        sched = actmax.PhaseSchedule(
            phases, tv_inner_iters=d.get("tv_inner_iters", default.tv_inner_iters),
            reference_size=d.get("reference_size", default.reference_size),
            pixel_range=d.get("pixel_range", default.pixel_range),
            rng_seed=self.section_seed("schedule"))
        sched.validate()
        return sched

    def facet_config(self, input_shape):
        d = self.values.get("facet", {})
        am = self.schedule() if d.get("optimizer", "plain") == "center" else self.am_config(input_shape)
        return FacetConfig(k=d.get("k", 10), m=d.get("m", 15), top_fraction=d.get("top_fraction", 0.02),
                           pca_dims=d.get("pca_dims", 50), code_layer=d.get("code_layer", "fc_code"),
                           perplexity=d.get("perplexity", 30.0), tsne_iters=d.get("tsne_iters", 1000),
                           rng_seed=self.section_seed("facet"), am=am)


REQUIRED = {
    "interpolate": [("interpolate", "a"), ("interpolate", "b")],
}


def parse_config(text, base_dir=".", subcommand=None, seed_override=None):
    """Parse and validate config text, raising :class:`ConfigError` listing every problem."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#", ";"), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {' '.join(str(exc).split())}") from None
    problems, values = [], {}
    base_dir = Path(base_dir)
    for section in cp.sections():
        if section.startswith(VARIANT_PREFIX):
            schema = AM_KEYS
        elif section in SCHEMA:
            schema = SCHEMA[section]
        else:
            problems.append(f"[{section}]: unknown section")
            continue
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in schema:
                problems.append(f"[{section}] {key}: unknown key")
                continue
            try:
                values[section][key] = schema[key](raw)
            except ValueError as exc:
                problems.append(f"[{section}] {key}: {exc}")
    for section, key in PATH_KEYS:
        p = values.get(section, {}).get(key)
        if p is not None:
            full = Path(p) if Path(p).is_absolute() else base_dir / p
            if not full.exists():
                problems.append(f"[{section}] {key}: path does not exist: {full}")
    kind = values.get("dataset", {}).get("kind")
    if kind == "directory" and "path" not in values.get("dataset", {}):
        problems.append("[dataset] path: required when kind = directory")
    for section, key in REQUIRED.get(subcommand, []):
        if key not in values.get(section, {}):
            problems.append(f"[{section}] {key}: required for {subcommand}")
    if subcommand == "compare" and not any(s.startswith(VARIANT_PREFIX) for s in values):
        problems.append("compare needs at least one [variant.<name>] section")
    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(text, values, base_dir, seed_override)
    _check_semantics(cfg, subcommand)
    return cfg


def _check_semantics(cfg, subcommand):
    """Construct the typed views so range errors surface as config errors."""
    problems = []
    size = cfg.get("dataset", "image_size", 32)
    shape = (size, size, 3)
    weights = cfg.path("network", "weights")
    if weights is not None:
        try:
            shape = network.load_weights(weights).input_shape
        except (FacetError, OSError):
            pass   # reported when the run loads the file
    checks = [("dataset", cfg.dataset_spec), ("train", cfg.train_config), ("am", lambda: cfg.am_config(shape))]
    if cfg.has("schedule") or subcommand == "center":
        checks.append(("schedule", cfg.schedule))
    if cfg.has("facet") or subcommand == "facets":
        checks.append(("facet", lambda: cfg.facet_config(shape)))
    for v in cfg.variants:
        checks.append((v, lambda v=v: cfg.am_config(shape, v)))
    for section, build in checks:
        try:
            obj = build()
            if hasattr(obj, "validate") and not isinstance(obj, actmax.PhaseSchedule):
                obj.validate()
        except (ValueError, TypeError) as exc:
            problems.append(f"[{section}]: {exc}")
    ip = cfg.values.get("interpolate", {})
    if ip.get("steps", 8) < 2:
        problems.append("[interpolate] steps: must be >= 2")
    if problems:
        raise ConfigError(problems)


def load_config(path, subcommand=None, seed_override=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, subcommand, seed_override)


def schedule_echo(sched):
    """Plain-text table of a phase schedule, one phase per line."""
    def fmt(v):
        return "-" if v is None else f"{v:g}"

    lines = ["phase iterations learning_rate tv_lambda canvas jitter_center_box grad_crop"]
    for i, p in enumerate(sched.phases, start=1):
        lines.append(" ".join([str(i), fmt(p.iterations), fmt(p.learning_rate), fmt(p.tv_lambda),
                               fmt(p.canvas), fmt(p.jitter_center_box), fmt(p.grad_crop)]))
    lines += [f"tv_inner_iters {sched.tv_inner_iters}", f"reference_size {sched.reference_size}",
              f"pixel_range {fmt(sched.pixel_range)}"]
    return "\n".join(lines) + "\n"
