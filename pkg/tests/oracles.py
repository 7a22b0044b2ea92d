"""Independent reference implementations used as test oracles."""

import numpy as np


def naive_conv(img, kernels, stride=1, pad=0):
    """True convolution by explicit loops over output, kernel and channels."""
    x = np.pad(np.asarray(img, dtype=np.float64), ((pad, pad), (pad, pad), (0, 0)))
    k = np.asarray(kernels, dtype=np.float64)
    kh, kw, cin, cout = k.shape
    ho = (x.shape[0] - kh) // stride + 1
    wo = (x.shape[1] - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for c in range(cin):
                            acc += x[i * stride + a, j * stride + b, c] * k[kh - 1 - a, kw - 1 - b, c, o]
                out[i, j, o] = acc
    return out


def central_fd(f, x, eps=1e-3):
    """Central finite-difference gradient of scalar ``f`` at float64 ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        v = flat[i]
        flat[i] = v + eps
        hi = f(x)
        flat[i] = v - eps
        lo = f(x)
        flat[i] = v
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def tv_loops(img):
    img = np.asarray(img, dtype=np.float64)
    h, w, c = img.shape
    total = 0.0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                dx = img[i, j + 1, ch] - img[i, j, ch] if j + 1 < w else 0.0
                dy = img[i + 1, j, ch] - img[i, j, ch] if i + 1 < h else 0.0
                total += (dx * dx + dy * dy) ** 0.5
    return total


def tv_oracle(f, lam, iters=30000):
    """Minimize TV(u) + lam/2 ||u - f||^2 by projected gradient on the dual.

    With u = f - D^T p / lam the dual is a smooth concave problem over
    pointwise unit-norm fields p; ||D||^2 <= 8 gives the step lam / 8.
    """
    f = np.asarray(f, dtype=np.float64)

    def D(u):
        gx, gy = np.zeros_like(u), np.zeros_like(u)
        gx[:, :-1] = np.diff(u, axis=1)
        gy[:-1] = np.diff(u, axis=0)
        return gx, gy

    def Dt(px, py):
        out = np.zeros_like(px)
        out[:, 1:] += px[:, :-1]
        out[:, :-1] -= px[:, :-1]
        out[1:] += py[:-1]
        out[:-1] -= py[:-1]
        return out

    px, py = np.zeros_like(f), np.zeros_like(f)
    step = lam / 8.0
    for _ in range(iters):
        gx, gy = D(f - Dt(px, py) / lam)
        px, py = px + step * gx, py + step * gy
        norm = np.maximum(1.0, np.sqrt(px * px + py * py))
        px, py = px / norm, py / norm
    return f - Dt(px, py) / lam


def tv_objective_loops(u, f, lam):
    u, f = np.asarray(u, dtype=np.float64), np.asarray(f, dtype=np.float64)
    return tv_loops(u) + 0.5 * lam * float(((u - f) ** 2).sum())


def noisy_step(rng, size=8, channels=1, noise=0.1):
    img = np.zeros((size, size, channels))
    img[:, size // 2 :] = 1.0
    return img + rng.normal(0, noise, img.shape)


def covariance_loops(X):
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    mean = [sum(X[i, j] for i in range(n)) / n for j in range(d)]
    C = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            C[a, b] = sum((X[i, a] - mean[a]) * (X[i, b] - mean[b]) for i in range(n)) / (n - 1)
    return C


def shannon_perplexity(row):
    row = np.asarray(row, dtype=np.float64)
    row = row[row > 0]
    return float(2.0 ** (-np.sum(row * np.log2(row))))


def blobs(rng, per=30, sigma=0.1, dims=2, centers=((0, 0), (10, 0), (0, 10))):
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[1] < dims:
        centers = np.pad(centers, ((0, 0), (0, dims - centers.shape[1])))
    X = np.concatenate([c + rng.normal(0, sigma, size=(per, dims)) for c in centers])
    return X, np.repeat(np.arange(len(centers)), per)
