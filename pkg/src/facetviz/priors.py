"""Image regularizers for activation maximization.

TV here is the isotropic, per-channel total variation with forward
differences and a replicate boundary (the last difference along each axis
is zero). ``tv_denoise`` solves

    argmin_u  TV(u) + lam/2 * ||u - f||^2

by split Bregman with one Gauss-Seidel sweep per outer iteration for the
quadratic subproblem.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .tensor_core import check_image


@dataclass
class JitterConfig:
    canvas_h: int
    canvas_w: int
    window_h: int
    window_w: int
    center_box: float | None = None

    def __post_init__(self):
        if self.window_h > self.canvas_h or self.window_w > self.canvas_w:
            raise ValueError(f"window {self.window_h}x{self.window_w} does not fit canvas "
                             f"{self.canvas_h}x{self.canvas_w}")
        if min(self.window_h, self.window_w) < 1:
            raise ValueError("window must be non-empty")
        if self.center_box is not None and self.center_box < 0:
            raise ValueError("center_box must be >= 0")


@dataclass
class RegularizerConfig:
    """``tv_lambda == 0`` disables TV; ``blur_every == 0`` disables blur;
    ``alpha_weight == 0`` disables the alpha-norm penalty."""

    tv_lambda: float = 0.0
    tv_inner_iters: int = 100
    blur_sigma_start: float = 0.0
    blur_sigma_end: float = 0.0
    blur_every: int = 0
    alpha: float = 6.0
    alpha_weight: float = 0.0
    alpha_center: float = 0.0
    jitter: JitterConfig | None = None

    def __post_init__(self):
        problems = []
        if self.tv_lambda < 0:
            problems.append("tv_lambda must be >= 0")
        if self.tv_lambda > 0 and self.tv_inner_iters < 1:
            problems.append("tv_inner_iters must be >= 1 when TV is enabled")
        if self.blur_sigma_end > self.blur_sigma_start:
            problems.append("blur_sigma_end must not exceed blur_sigma_start")
        if min(self.blur_sigma_start, self.blur_sigma_end) < 0 or self.blur_every < 0:
            problems.append("blur parameters must be non-negative")
        if self.alpha < 1:
            problems.append("alpha must be >= 1")
        if self.alpha_weight < 0:
            problems.append("alpha_weight must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


# --------------------------------------------------------------------------
# total variation

def _grad(u):
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dy[:-1] = u[1:] - u[:-1]
    return dx, dy


def _grad_adjoint(px, py):
    # adjoint of _grad (a negative divergence)
    out = np.zeros_like(px)
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1] -= py[:-1]
    out[1:] += py[:-1]
    return out


def tv_norm(img):
    """Isotropic TV summed over pixels and channels."""
    check_image(img)
    u = np.asarray(img, dtype=np.float64)
    dx, dy = _grad(u)
    return float(np.sqrt(dx * dx + dy * dy).sum())


def tv_objective(u, f, lam):
    u = np.asarray(u, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return tv_norm(u) + 0.5 * lam * float(((u - f) ** 2).sum())


@njit(cache=True)
def _split_bregman_channel(f, lam, mu, iters, u):
    h, w = f.shape
    dx = np.zeros((h, w))
    dy = np.zeros((h, w))
    bx = np.zeros((h, w))
    by = np.zeros((h, w))
    thresh = 1.0 / mu
    for _ in range(iters):
        # one Gauss-Seidel sweep on (lam + mu * D^T D) u = lam f + mu D^T (d - b)
        for i in range(h):
            for j in range(w):
                acc = lam * f[i, j]
                n = 0.0
                if j > 0:
                    acc += mu * (u[i, j - 1] + dx[i, j - 1] - bx[i, j - 1])
                    n += 1.0
                if j < w - 1:
                    acc += mu * (u[i, j + 1] - dx[i, j] + bx[i, j])
                    n += 1.0
                if i > 0:
                    acc += mu * (u[i - 1, j] + dy[i - 1, j] - by[i - 1, j])
                    n += 1.0
                if i < h - 1:
                    acc += mu * (u[i + 1, j] - dy[i, j] + by[i, j])
                    n += 1.0
                u[i, j] = acc / (lam + mu * n)
        # isotropic shrinkage and Bregman update; boundary differences are zero
        for i in range(h):
            for j in range(w):
                sx = (u[i, j + 1] - u[i, j] if j < w - 1 else 0.0) + bx[i, j]
                sy = (u[i + 1, j] - u[i, j] if i < h - 1 else 0.0) + by[i, j]
                mag = np.sqrt(sx * sx + sy * sy)
                scale = max(mag - thresh, 0.0) / mag if mag > 0 else 0.0
                dx[i, j] = scale * sx
                dy[i, j] = scale * sy
                bx[i, j] = sx - dx[i, j]
                by[i, j] = sy - dy[i, j]
    return u


def tv_denoise(img, lam, iters=100):
    """Split-Bregman TV denoising, per channel, penalty parameter ``mu = 2 * lam``."""
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    f = check_image(img).astype(np.float64)
    u = f.copy()
    for c in range(f.shape[2]):
        fc = np.ascontiguousarray(f[:, :, c])
        u[:, :, c] = _split_bregman_channel(fc, float(lam), 2.0 * lam, int(iters), fc.copy())
    # the input is always feasible; never hand back something worse
    if tv_objective(u, f, lam) > tv_objective(f, f, lam):
        u = f
    return u.astype(np.float32)


# --------------------------------------------------------------------------
# other regularizers

def alpha_norm(img, alpha, weight, center=0.0):
    x = np.asarray(img, dtype=np.float64)
    return weight * float(np.mean(np.abs(x - center) ** alpha))


def alpha_norm_grad(img, alpha, weight, center=0.0):
    """Gradient of ``weight * mean(|x - center| ** alpha)``; zero where ``x == center``."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    x = check_image(img).astype(np.float64)
    # compare at storage precision so an image equal to the center gives zero
    d = x - np.asarray(center, dtype=np.float32).astype(np.float64)
    g = weight * alpha * np.sign(d) * np.abs(d) ** (alpha - 1) / d.size
    return g.astype(np.float32)


def jitter_offset(cfg, rng):
    """Top-left ``(row, col)`` of a window placed uniformly on the canvas.

    With ``center_box`` set, the window center stays within that half-extent of
    the canvas-centered position.
    """
    def draw(canvas, window):
        slack = canvas - window
        lo, hi = 0, slack
        if cfg.center_box is not None:
            mid = slack // 2
            box = int(np.floor(cfg.center_box))
            lo, hi = max(0, mid - box), min(slack, mid + box)
        return int(rng.integers(lo, hi + 1))

    return draw(cfg.canvas_h, cfg.window_h), draw(cfg.canvas_w, cfg.window_w)


def blur_sigma_at(cfg, it, total_iters):
    """Linearly decaying blur radius from ``blur_sigma_start`` to ``blur_sigma_end``."""
    if not 0 <= it < total_iters:
        raise ValueError(f"iteration {it} outside [0, {total_iters})")
    if total_iters == 1:
        return float(cfg.blur_sigma_start)
    frac = it / (total_iters - 1)
    return float(cfg.blur_sigma_start + (cfg.blur_sigma_end - cfg.blur_sigma_start) * frac)
