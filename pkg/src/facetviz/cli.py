"""Command-line entry point: ``facetviz <subcommand> --config FILE --out DIR``.

Every run writes into a fresh directory ``<out>/<timestamp>-<config hash>``
holding its artifacts and a ``manifest.json``; ``replay`` re-executes a run
from its manifest and checks that all FLT1 tensors come out byte-identical.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, actmax, dataset, facets, network, render
from .config import SUBCOMMANDS, load_config, parse_config, schedule_echo
from .errors import ConfigError, DataError, FacetError
from .tensor_core import FLT1_MAGIC, lerp_images, resize_bilinear, write_flt1

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
EXIT_CODES = {"CONFIG": EXIT_CONFIG, "DATA": EXIT_DATA}


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(subcommand, text, seed_override):
    key = f"{subcommand}\n{seed_override}\n{text}".encode()
    return hashlib.sha256(key).hexdigest()[:10]


class Run:
    """Run directory plus the manifest being assembled for it."""

    def __init__(self, out, subcommand, cfg, jobs):
        self.subcommand, self.cfg, self.jobs = subcommand, cfg, jobs
        self.hash = config_hash(subcommand, cfg.text, cfg.seed_override)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        base = Path(out) / f"{stamp}-{self.hash}"
        path, n = base, 0
        while path.exists():
            n += 1
            path = base.with_name(f"{base.name}-{n}")
        path.mkdir(parents=True)
        self.dir = path
        self.timings = {}
        self.summary = {}
        self.rows = []
        self._t0 = time.perf_counter()
        (self.dir / "config.ini").write_text(cfg.text)

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = round(time.perf_counter() - self.t, 3)

        return _Timer()

    def sub(self, *parts):
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def finish(self):
        self.timings["total"] = round(time.perf_counter() - self._t0, 3)
        artifacts, flt1 = {}, {}
        for p in sorted(self.dir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                rel = p.relative_to(self.dir).as_posix()
                digest = sha256_file(p)
                artifacts[rel] = digest
                with open(p, "rb") as fh:
                    if fh.read(len(FLT1_MAGIC)) == FLT1_MAGIC:
                        flt1[rel] = digest
        manifest = {
            "tool": "facetviz", "version": __version__, "subcommand": self.subcommand,
            "config_hash": self.hash, "config_text": self.cfg.text,
            "config_dir": str(self.cfg.base_dir.resolve()), "seed": self.cfg.seed,
            "seed_override": self.cfg.seed_override, "jobs": self.jobs,
            "timings": self.timings, "artifacts": artifacts, "flt1": flt1,
            "summary": self.summary, "facets": self.rows,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return manifest


# --------------------------------------------------------------------------
# shared stages

def _dataset(cfg):
    if cfg.get("dataset", "kind", "shapes") == "directory":
        return dataset.load_directory(cfg.path("dataset", "path"))
    return dataset.generate_shapes(cfg.dataset_spec())


def _network(cfg, run, ds=None):
    """Load ``[network] weights`` or train a fresh network on the configured dataset."""
    weights = cfg.path("network", "weights")
    if weights is not None:
        return network.load_weights(weights), ds
    ds = ds if ds is not None else _dataset(cfg)
    with run.stage("train"):
        train_set, test_set = dataset.split(ds, cfg.get("dataset", "holdout", 0.2), cfg.section_seed("dataset"))
        net = network.default_network(ds.num_classes, ds.images.shape[1:], cfg.section_seed("network"))
        net.meta["mean_intensity"] = [float(v) for v in ds.mean_intensity]
        net, metrics = network.train(net, train_set, cfg.train_config())
    network.save_weights(net, run.sub("weights.bin"))
    with open(run.sub("metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for m in metrics:
            w.writerow([m["epoch"], f"{m['loss']:.6f}", f"{m['accuracy']:.6f}"])
    if len(test_set):
        loss, acc = network.evaluate(net, test_set)
        run.summary.update(heldout_loss=round(loss, 6), heldout_accuracy=round(acc, 6))
    return net, ds


def _mean(net):
    return net.meta.get("mean_intensity")


def _write_trace(path, res):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "activation", "phase"])
        bounds = res.phase_boundaries or [0]
        for i, a in enumerate(res.activation_trace):
            phase = sum(b <= i for b in bounds)
            w.writerow([i, f"{a:.6f}", phase])


def _save_result(run, folder, res, net, seed=None):
    write_flt1(run.sub(folder, "viz.flt1"), res.final_image)
    render.save_png(render.to_display(res.final_image, _mean(net)), run.sub(folder, "viz.png"))
    _write_trace(run.sub(folder, "trace.csv"), res)
    if seed is not None:
        write_flt1(run.sub(folder, "seed.flt1"), seed)


def _top1(net, img):
    return facets.classify_visualization(net, facets.visualization_window(net, img))[0]


# --------------------------------------------------------------------------
# subcommands

def cmd_generate(cfg, run):
    with run.stage("generate"):
        ds = _dataset(cfg)
    dataset.export_directory(ds, run.sub("dataset"), seed=cfg.section_seed("dataset"))
    write_flt1(run.sub("images.flt1"), ds.images)
    run.summary.update(images=len(ds), classes=ds.num_classes)


def cmd_train(cfg, run):
    if cfg.path("network", "weights") is not None:
        raise ConfigError("[network] weights: train builds its own network; remove this key")
    _network(cfg, run)


def cmd_actmax(cfg, run):
    net, _ = _network(cfg, run)
    sel = cfg.unit()
    am = cfg.am_config(net.input_shape)
    with run.stage("actmax"):
        res = actmax.maximize(net, sel, am)
    _save_result(run, "actmax", res, net)
    run.summary.update(unit=str(sel), final_activation=round(res.final_activation, 6),
                       top1=_top1(net, res.final_image)[0])


def cmd_center(cfg, run):
    net, _ = _network(cfg, run)
    sel = cfg.unit()
    sched = cfg.schedule()
    (run.dir / "schedule.echo").write_text(schedule_echo(sched))
    with run.stage("center"):
        res = actmax.center_biased_maximize(net, sel, None, sched)
    _save_result(run, "center", res, net)
    size = res.final_image.shape[:2]
    tiles = [render.to_display(resize_bilinear(im, *size), _mean(net)) for im in res.phase_images]
    render.emit_montage(tiles, [f"phase {i + 1}" for i in range(len(tiles))], len(tiles),
                        run.sub("phases.png"), scale=2)
    run.summary.update(unit=str(sel), final_activation=round(res.final_activation, 6),
                       phase_boundaries=res.phase_boundaries, top1=_top1(net, res.final_image)[0])


def _unit_images(cfg, net, sel, ds):
    d = cfg.values.get("facet", {})
    if d.get("source", "class") == "class":
        class_id = d.get("class_id", sel.unit)
        return facets.collect_class_images(ds, class_id)
    return facets.collect_top_activating(ds, net, sel, d.get("top_fraction", 0.02))


def cmd_facets(cfg, run):
    ds = _dataset(cfg)
    net, ds = _network(cfg, run, ds)
    sel = cfg.unit()
    fcfg = cfg.facet_config(net.input_shape)
    U = _unit_images(cfg, net, sel, ds)
    with run.stage("facets"):
        fs = facets.run_mfv(net, sel, U, fcfg, jobs=run.jobs)
    with open(run.sub("embedding.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "cluster"])
        for sid, p, c in zip(fs.embedding.source_ids, fs.embedding.points, fs.clustering.assignments):
            w.writerow([sid, f"{p[0]:.6f}", f"{p[1]:.6f}", int(c)])
    seed_acts = network.unit_activations(net, np.stack([c.mean_image for c in fs.clusters]), sel)
    tiles, labels = [], []
    with open(run.sub("clusters.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "size", "centroid_x", "centroid_y", "seed_ids"])
        for i, cl in enumerate(fs.clusters):
            w.writerow([i, len(cl.member_ids), f"{cl.centroid[0]:.6f}", f"{cl.centroid[1]:.6f}",
                        " ".join(map(str, cl.seed_ids))])
            folder = f"facet_{i}"
            write_flt1(run.sub(folder, "mean.flt1"), cl.mean_image)
            render.save_png(render.to_display(cl.mean_image, ds.mean_intensity), run.sub(folder, "mean.png"))
            _save_result(run, folder, cl.visualization, net)
            top_class, top_score = _top1(net, cl.visualization.final_image)
            run.rows.append({"cluster": i, "size": len(cl.member_ids),
                             "seed_activation": round(float(seed_acts[i]), 6),
                             "final_activation": round(cl.visualization.final_activation, 6),
                             "top1_class": top_class, "top1_score": round(top_score, 6)})
            viz = cl.visualization.final_image
            tiles.append(render.to_display(resize_bilinear(viz, *net.input_shape[:2])
                                           if viz.shape != net.input_shape else viz, ds.mean_intensity))
            labels.append(f"facet {i}")
    render.emit_scatter_svg(fs.embedding, fs.clustering, run.sub("scatter.svg"))
    render.emit_montage(tiles, labels, min(5, len(tiles)), run.sub("montage.png"), scale=2)
    run.summary.update(unit=str(sel), k=fs.k, images=len(U), perplexity=round(fs.perplexity, 6))


def _endpoint(spec, ds, m):
    """``facet:<class>:<facet>`` (mean of the first m images of a planted facet)
    or ``ids:<i>,<j>,...`` (mean of those dataset images)."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "facet":
            c, f = (int(v) for v in rest.split(":"))
            if ds.facet_labels is None:
                raise DataError("dataset has no facet labels")
            ids = np.flatnonzero((ds.labels == c) & (ds.facet_labels == f))[:m]
            name = f"c{c}f{f}"
        elif kind == "ids":
            ids = [int(v) for v in rest.split(",")]
            name = spec
        else:
            raise ValueError(kind)
    except ValueError:
        raise ConfigError(f"[interpolate] endpoint {spec!r}: expected facet:<class>:<facet> or ids:<i>,<j>,...") from None
    if len(ids) == 0:
        raise DataError(f"endpoint {spec!r} selects no images")
    if max(ids) >= len(ds) or min(ids) < 0:
        raise DataError(f"endpoint {spec!r} references images outside the dataset")
    return facets.mean_image(ds, ids), name


def cmd_interpolate(cfg, run):
    ds = _dataset(cfg)
    net, ds = _network(cfg, run, ds)
    sel = cfg.unit()
    d = cfg.values["interpolate"]
    m = d.get("m", 15)
    a, name_a = _endpoint(d["a"], ds, m)
    b, name_b = _endpoint(d["b"], ds, m)
    am = cfg.schedule() if d.get("optimizer", "plain") == "center" else cfg.am_config(net.input_shape)
    steps = d.get("steps", 8)
    with run.stage("interpolate"):
        results = facets.interpolation_experiment(net, sel, a, b, steps, am, jobs=run.jobs)
    labels = [""] * len(results)
    if ds.facet_labels is not None and d["a"].startswith("facet:") and d["b"].startswith("facet:"):
        keys = {f"c{c}f{f}": (int(c), int(f)) for c, f in sorted(set(zip(ds.labels, ds.facet_labels)))}
        clf = facets.FacetColorClassifier.from_dataset(ds, keys)
        labels = clf.interpolation_labels(results, name_a, name_b)
    ts = [i / (steps + 1) for i in range(steps + 2)]
    seeds, tiles = [], []
    with open(run.sub("interpolation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "t", "final_activation", "label"])
        for i, (t, res) in enumerate(zip(ts, results)):
            seed = lerp_images(a, b, t)
            _save_result(run, f"run_{i}", res, net, seed=seed)
            w.writerow([i, f"{t:.6f}", f"{res.final_activation:.6f}", labels[i]])
            seeds.append(render.to_display(seed, ds.mean_intensity))
            tiles.append(render.to_display(facets.visualization_window(net, res.final_image), ds.mean_intensity))
    render.emit_montage(seeds + tiles, [f"t={t:.2f}" for t in ts] + labels, len(ts),
                        run.sub("montage.png"), scale=2)
    endpoint_runs = sum(lab in (name_a, name_b) for lab in labels)
    run.summary.update(unit=str(sel), a=name_a, b=name_b, labels=labels,
                       endpoint_fraction=round(endpoint_runs / len(results), 6) if labels[0] else None)


def cmd_compare(cfg, run):
    net, _ = _network(cfg, run)
    sel = cfg.unit()
    variants = [cfg.am_config(net.input_shape, v) for v in cfg.variants]
    with run.stage("compare"):
        results = actmax.compare_regularizers(net, sel, variants, rng_seed=cfg.section_seed("am"),
                                              jobs=run.jobs)
    tiles = []
    for res in results:
        _save_result(run, f"variant_{res.label}", res, net)
        tiles.append(render.to_display(res.final_image, _mean(net)))
    render.emit_montage(tiles, [r.label for r in results], len(tiles), run.sub("montage.png"), scale=2)
    run.summary.update(unit=str(sel), variants={r.label: round(r.final_activation, 6) for r in results})


HELP = {
    "generate": "render a synthetic dataset to PNGs",
    "train": "train the micro-CNN",
    "facets": "multifaceted visualization of one unit",
    "actmax": "plain regularized activation maximization",
    "center": "five-phase center-biased activation maximization",
    "interpolate": "activation maximization from interpolated seeds",
    "compare": "run several regularizer variants from one seed",
}

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "facets": cmd_facets, "actmax": cmd_actmax,
            "center": cmd_center, "interpolate": cmd_interpolate, "compare": cmd_compare}


def execute(subcommand, cfg, out, jobs=1):
    """Run one subcommand into a fresh run directory; return ``(run_dir, manifest)``."""
    run = Run(out, subcommand, cfg, jobs)
    COMMANDS[subcommand](cfg, run)
    return run.dir, run.finish()


def replay(manifest_path, out, jobs=None):
    """Re-execute a run from its manifest; return ``(run_dir, mismatched FLT1 paths)``."""
    try:
        old = json.loads(Path(manifest_path).read_text())
        sub, text = old["subcommand"], old["config_text"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from None
    cfg = parse_config(text, old.get("config_dir", "."), sub, old.get("seed_override"))
    run_dir, new = execute(sub, cfg, out, old.get("jobs", 1) if jobs is None else jobs)
    mismatched = sorted(k for k in set(old["flt1"]) | set(new["flt1"])
                        if old["flt1"].get(k) != new["flt1"].get(k))
    return run_dir, mismatched


# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="facetviz", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"facetviz {__version__}")
    subs = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = subs.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", default="runs", help="parent directory for run directories")
        p.add_argument("--jobs", type=int, default=1, help="concurrent facet/AM runs")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    p = subs.add_parser("replay", help="re-run from a manifest and compare FLT1 artifacts")
    p.add_argument("manifest")
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=None)
    p = subs.add_parser("echo", help="print the phase schedule of a config")
    p.add_argument("--config", required=True)
    return ap


def _fail(category, message):
    print(f"error: {category}: {' '.join(str(message).split())}", file=sys.stderr)
    return EXIT_CODES.get(category, EXIT_RUNTIME)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be in [0, 2^64)")
        if args.command == "echo":
            sys.stdout.write(schedule_echo(load_config(args.config, "center").schedule()))
            return EXIT_OK
        if args.command == "replay":
            run_dir, mismatched = replay(args.manifest, args.out, args.jobs)
            if mismatched:
                return _fail("RUNTIME", f"replay in {run_dir} differs in {', '.join(mismatched)}")
            print(run_dir)
            return EXIT_OK
        cfg = load_config(args.config, args.command, args.seed)
        run_dir, _ = execute(args.command, cfg, args.out, args.jobs)
        print(run_dir)
        return EXIT_OK
    except FacetError as exc:
        return _fail(exc.category, exc)
    except OSError as exc:
        return _fail("IO", exc)
    except Exception as exc:  # noqa: BLE001 - report anything else as a runtime failure
        return _fail("RUNTIME", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
