"""Regularized activation maximization and the five-phase center-biased schedule.

Each iteration takes a gradient-ascent step on a (possibly jittered)
network-input-sized window of the working canvas, writes the step back into
that window, then applies the image priors to the whole canvas: TV
denoising, optional Gaussian blur, and clamping to the pixel range.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import priors
from .network import activation_and_gradient, unit_activation, validate_selector
from .tensor_core import center_crop, check_image, gaussian_blur, resize_bilinear

# pixel range of mean-subtracted [0, 1] images with a mid-gray mean
DEFAULT_CLAMP = (-0.5, 0.5)


@dataclass
class AMConfig:
    iterations: int = 200
    learning_rate: float = 0.05
    reg: priors.RegularizerConfig = field(default_factory=priors.RegularizerConfig)
    seed_image: np.ndarray | None = None
    rng_seed: int = 0
    clamp: tuple = DEFAULT_CLAMP
    normalize_grad: bool = False
    label: str = ""

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError(f"clamp bounds must satisfy lo < hi, got {self.clamp}")


# jitter canvas relative to the network input, as in a 272 canvas for a 227 input
JITTER_CANVAS_RATIO = 272 / 227


def tv_jitter_config(input_shape, iterations=200, learning_rate=0.01, tv_lambda=100.0, **kw):
    """Plain TV + jitter defaults: normalized-gradient steps of mean size
    ``learning_rate`` on a jitter canvas about 20% larger than the input."""
    h, w = input_shape[:2]
    jitter = priors.JitterConfig(int(round(h * JITTER_CANVAS_RATIO)), int(round(w * JITTER_CANVAS_RATIO)), h, w)
    reg = priors.RegularizerConfig(tv_lambda=tv_lambda, jitter=jitter)
    return AMConfig(iterations=iterations, learning_rate=learning_rate, reg=reg,
                    normalize_grad=True, **kw)


@dataclass
class PhaseSpec:
    """One phase. ``canvas`` and ``grad_crop`` are in reference-input pixels
    (see :class:`PhaseSchedule`); ``jitter_center_box`` is a fraction of the
    canvas extent, ``None`` meaning windows may be placed anywhere."""

    iterations: int
    learning_rate: float
    tv_lambda: float
    canvas: int
    jitter_center_box: float | None
    grad_crop: int | None = None


@dataclass
class PhaseSchedule:
    """Five-phase center-biased schedule.

    Parameters are stored at the scale they were published at: canvas sizes
    relative to a ``reference_size`` input and intensities in
    ``[0, pixel_range]``. Mapping to the working network:

    * canvas and crop sizes scale by ``input / reference_size``;
    * a learning rate is the mean absolute per-pixel step in published
      intensity units (the gradient is normalized by its mean magnitude), so
      the working step is ``lr / pixel_range``;
    * the TV weight scales by ``pixel_range * reference_size / input``: TV
      grows linearly with intensity and image side, the squared fidelity term
      quadratically in both.
    """

    phases: list
    tv_inner_iters: int = 100
    reference_size: int = 227
    pixel_range: float = 255.0
    clamp: tuple = DEFAULT_CLAMP
    rng_seed: int = 0

    def validate(self):
        if len(self.phases) != 5:
            raise ValueError(f"schedule needs exactly 5 phases, got {len(self.phases)}")
        scales = [p.canvas for p in self.phases[:3]]
        if scales != sorted(scales):
            raise ValueError("canvas must not shrink across phases 1-3")
        for i, p in enumerate(self.phases):
            if p.iterations < 0 or p.learning_rate < 0 or p.tv_lambda < 0:
                raise ValueError(f"phase {i + 1}: negative parameter")
            if p.canvas < self.reference_size:
                raise ValueError(f"phase {i + 1}: canvas smaller than the reference input")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError("clamp bounds must satisfy lo < hi")

    @property
    def total_iterations(self):
        return sum(p.iterations for p in self.phases)

    def canvas_px(self, phase, input_size):
        return int(round(input_size * self.phases[phase].canvas / self.reference_size))

    def grad_crop_px(self, phase, input_size):
        crop = self.phases[phase].grad_crop
        return None if crop is None else int(round(input_size * crop / self.reference_size))


def published_schedule(**overrides):
    """The published center-biased schedule. Phases 4-5 reuse phase-3 TV weight
    and learning rate, which are not given for those phases."""
    phases = [
        PhaseSpec(150, 11.0, 0.001, 227, 0.1),
        PhaseSpec(150, 6.0, 0.08, 272, 0.1),
        PhaseSpec(150, 1.0, 2.0, 327, 0.1),
        PhaseSpec(30, 1.0, 2.0, 327, 0.0, grad_crop=127),
        PhaseSpec(10, 1.0, 2.0, 327, None, grad_crop=127),
    ]
    sched = PhaseSchedule(phases, **overrides)
    sched.validate()
    return sched


@dataclass
class AMResult:
    final_image: np.ndarray
    activation_trace: list
    phase_boundaries: list
    label: str = ""
    canvas: np.ndarray | None = None
    phase_images: list = field(default_factory=list)

    @property
    def final_activation(self):
        return self.activation_trace[-1] if self.activation_trace else float("nan")


def _centered_window(canvas, shape):
    return center_crop(canvas, shape[0], shape[1])


def _step(net, sel, canvas, *, lr, reg, rng, it, total, clamp, jitter=None, grad_crop=None,
          normalize=False):
    h, w = net.input_shape[:2]
    if jitter is not None:
        if canvas.shape[:2] != (jitter.canvas_h, jitter.canvas_w):
            raise ValueError(f"canvas {canvas.shape[:2]} does not match jitter canvas "
                             f"{jitter.canvas_h}x{jitter.canvas_w}")
        r, c = priors.jitter_offset(jitter, rng)
    else:
        if canvas.shape[:2] != (h, w):
            raise ValueError(f"canvas {canvas.shape[:2]} must equal the network input without jitter")
        r = c = 0
    canvas = canvas.astype(np.float64)
    window = canvas[r : r + h, c : c + w]
    if lr != 0:
        _, g = activation_and_gradient(net, window.astype(np.float32), sel)
        g = g.astype(np.float64)
        if normalize:
            g /= max(np.abs(g).mean(), 1e-12)
        if reg.alpha_weight > 0:
            g -= priors.alpha_norm_grad(window.astype(np.float32), reg.alpha, reg.alpha_weight, reg.alpha_center)
        if grad_crop is not None and grad_crop < min(h, w):
            mask = np.zeros((h, w, 1))
            r0, c0 = (h - grad_crop) // 2, (w - grad_crop) // 2
            mask[r0 : r0 + grad_crop, c0 : c0 + grad_crop] = 1.0
            g *= mask
        canvas[r : r + h, c : c + w] += lr * g
    out = canvas.astype(np.float32)
    if reg.tv_lambda > 0:
        out = priors.tv_denoise(out, reg.tv_lambda, reg.tv_inner_iters)
    if reg.blur_every > 0 and it % reg.blur_every == 0:
        sigma = priors.blur_sigma_at(reg, it, total)
        if sigma > 0:
            out = gaussian_blur(out, sigma)
    return np.clip(out, clamp[0], clamp[1]).astype(np.float32)


def am_step(net, sel, img, cfg, rng=None, iteration=0):
    """One iteration: ascent on the (jittered) window, then TV, blur and clamp."""
    img = check_image(img)
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    total = max(cfg.iterations, iteration + 1)
    return _step(net, sel, img, lr=cfg.learning_rate, reg=cfg.reg, rng=rng, it=iteration,
                 total=total, clamp=cfg.clamp, jitter=cfg.reg.jitter, normalize=cfg.normalize_grad)


def random_seed_image(shape, clamp, rng):
    return rng.uniform(clamp[0], clamp[1], size=shape).astype(np.float32)


def _pad_to_canvas(img, jitter):
    if jitter is None:
        return img.copy()
    h, w = img.shape[:2]
    top, left = (jitter.canvas_h - h) // 2, (jitter.canvas_w - w) // 2
    pads = ((top, jitter.canvas_h - h - top), (left, jitter.canvas_w - w - left), (0, 0))
    return np.pad(img, pads, mode="edge")


def maximize(net, sel, cfg):
    """Plain regularized activation maximization.

    With jitter the seed is edge-padded to the canvas; ``final_image`` is the
    centered network-input-sized window and ``canvas`` the full working canvas.
    """
    validate_selector(net, sel)
    rng = np.random.default_rng(cfg.rng_seed)
    if cfg.seed_image is None:
        seed = random_seed_image(net.input_shape, cfg.clamp, rng)
    else:
        seed = check_image(cfg.seed_image, "seed_image")
        if seed.shape != net.input_shape:
            raise ValueError(f"seed image shape {seed.shape} != network input {net.input_shape}")
    jitter = cfg.reg.jitter
    canvas = _pad_to_canvas(seed, jitter)
    trace = []
    for it in range(cfg.iterations):
        canvas = _step(net, sel, canvas, lr=cfg.learning_rate, reg=cfg.reg, rng=rng, it=it,
                       total=cfg.iterations, clamp=cfg.clamp, jitter=jitter, normalize=cfg.normalize_grad)
        trace.append(unit_activation(net, _centered_window(canvas, net.input_shape), sel))
    final = _centered_window(canvas, net.input_shape).copy()
    return AMResult(final, trace, [0], label=cfg.label, canvas=canvas)


def center_biased_maximize(net, sel, seed=None, sched=None, reg=None):
    """Five-phase center-biased activation maximization.

    Phases 1-3 upsample the canvas at their start and keep jittered window
    centers inside a small canvas-centered box; phase 4 pins the window to the
    center; phase 5 jitters anywhere. Phases with ``grad_crop`` zero the
    gradient outside a centered square. ``reg`` supplies optional extra
    priors (blur, alpha-norm); its TV weight is replaced per phase.
    """
    sched = sched or published_schedule()
    sched.validate()
    validate_selector(net, sel)
    h, w, _ = net.input_shape
    rng = np.random.default_rng(sched.rng_seed)
    if seed is None:
        seed = random_seed_image(net.input_shape, sched.clamp, rng)
    seed = check_image(seed, "seed")
    base = reg or priors.RegularizerConfig()
    canvas = seed
    trace, boundaries, snapshots = [], [], []
    total = sched.total_iterations
    tv_scale = sched.pixel_range * sched.reference_size / min(h, w)
    it = 0
    for pi, phase in enumerate(sched.phases):
        ch, cw = sched.canvas_px(pi, h), sched.canvas_px(pi, w)
        if canvas.shape[:2] != (ch, cw):
            canvas = resize_bilinear(canvas, ch, cw)
        box = None if phase.jitter_center_box is None else phase.jitter_center_box * min(ch, cw)
        jitter = priors.JitterConfig(ch, cw, h, w, center_box=box)
        phase_reg = replace(base, tv_lambda=phase.tv_lambda * tv_scale,
                            tv_inner_iters=sched.tv_inner_iters, jitter=jitter)
        lr = phase.learning_rate / sched.pixel_range
        crop = sched.grad_crop_px(pi, min(h, w))
        boundaries.append(it)
        for _ in range(phase.iterations):
            canvas = _step(net, sel, canvas, lr=lr, reg=phase_reg, rng=rng, it=it, total=total,
                           clamp=sched.clamp, jitter=jitter, grad_crop=crop, normalize=True)
            trace.append(unit_activation(net, _centered_window(canvas, net.input_shape), sel))
            it += 1
        snapshots.append(canvas.copy())
    return AMResult(canvas.copy(), trace, boundaries, canvas=canvas, phase_images=snapshots)


def compare_regularizers(net, sel, variants, seed_image=None, rng_seed=0, jobs=1):
    """Run each config from one shared seed image and RNG seed."""
    if not variants:
        return []
    if seed_image is None:
        rng = np.random.default_rng(rng_seed)
        seed_image = random_seed_image(net.input_shape, variants[0].clamp, rng)

    def run(item):
        i, cfg = item
        res = maximize(net, sel, replace(cfg, seed_image=seed_image, rng_seed=rng_seed))
        res.label = cfg.label or f"variant_{i}"
        return res

    items = list(enumerate(variants))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, items))
    return [run(it) for it in items]


def center_mass_ratio(img, seed):
    """Mean |img - mean(seed)| over the central third divided by the same over the outer frame."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(seed, dtype=np.float64).mean(axis=(0, 1))
    dev = np.abs(img - ref).mean(axis=2)
    h, w = dev.shape
    r0, r1, c0, c1 = h // 3, h - h // 3, w // 3, w - w // 3
    inner = np.zeros_like(dev, dtype=bool)
    inner[r0:r1, c0:c1] = True
    return float(dev[inner].mean() / max(dev[~inner].mean(), 1e-12))
