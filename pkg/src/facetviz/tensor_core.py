"""Image-level tensor primitives.

Images are ``float32`` numpy arrays laid out ``(height, width, channels)``.
Batched variants used by the network take ``(n, height, width, channels)``.
Convolution weights are ``(kh, kw, c_in, c_out)`` and follow the true
(kernel-flipped) convolution convention.
"""

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeError

FLT1_MAGIC = b"FACETFL1"


def check_image(img, name="image"):
    """Validate and return ``img`` as a contiguous float32 (H, W, C) array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty (H, W, C) array, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# convolution

def _im2col(xp, kh, kw, stride, ho, wo):
    # xp: padded (n, H, W, C) -> (n*ho*wo, kh*kw*C), column order (a, b, c)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n, H', W', C, kh, kw
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return win.reshape(-1, kh * kw * xp.shape[3])


def conv2d_batch(x, kernels, bias=None, stride=1, pad=0):
    """Batched convolution. Returns ``(out, cols)``; ``cols`` feeds the backward pass."""
    n, h, w, c = x.shape
    kh, kw, kc, co = kernels.shape
    if kc != c:
        raise ShapeError(f"kernel expects {kc} input channels, input has {c}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride={stride} / pad={pad}")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{w} with pad {pad}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = kernels[::-1, ::-1].reshape(kh * kw * c, co)
    out = cols @ wmat
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, co), cols


def conv2d_backward_batch(x_shape, kernels, cols, grad_out, stride=1, pad=0, need_params=True):
    """Gradients of :func:`conv2d_batch`. Returns ``(dx, dkernels, dbias)``."""
    n, h, w, c = x_shape
    kh, kw, _, co = kernels.shape
    ho, wo = grad_out.shape[1:3]
    g2 = grad_out.reshape(-1, co)
    wmat = kernels[::-1, ::-1].reshape(kh * kw * c, co)
    dk = db = None
    if need_params:
        dk = np.ascontiguousarray((cols.T @ g2).reshape(kh, kw, c, co)[::-1, ::-1])
        db = g2.sum(axis=0)
    dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=grad_out.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[:, a : a + stride * (ho - 1) + 1 : stride, b : b + stride * (wo - 1) + 1 : stride] += dcols[:, :, :, a, b]
    dx = np.ascontiguousarray(dxp[:, pad : pad + h, pad : pad + w])
    return dx, dk, db


def conv2d(img, kernels, stride=1, pad=0):
    """Convolve a single (H, W, C) image with ``(kh, kw, C, C_out)`` kernels."""
    img = check_image(img)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be rank 4, got shape {kernels.shape}")
    out, _ = conv2d_batch(img[None].astype(np.float64), kernels, None, stride, pad)
    return out[0].astype(np.float32)


def conv2d_grads(img, kernels, upstream_grad, stride=1, pad=0):
    """Return ``(input_grad, kernel_grad)`` of ``sum(conv2d(img) * upstream_grad)``."""
    img = check_image(img)
    kernels = np.asarray(kernels, dtype=np.float32)
    if kernels.ndim != 4 or kernels.shape[2] != img.shape[2]:
        raise ShapeError(f"kernel shape {kernels.shape} incompatible with input {img.shape}")
    kh, kw = kernels.shape[:2]
    expected = (conv_output_size(img.shape[0], kh, stride, pad), conv_output_size(img.shape[1], kw, stride, pad), kernels.shape[3])
    upstream_grad = np.asarray(upstream_grad, dtype=np.float32)
    if upstream_grad.shape != expected:
        raise ShapeError(f"upstream gradient shape {upstream_grad.shape} != conv output shape {expected}")
    xp = np.pad(img[None], ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = _im2col(xp.astype(np.float64), kh, kw, stride, expected[0], expected[1])
    dx, dk, _ = conv2d_backward_batch((1,) + img.shape, kernels.astype(np.float64), cols,
                                      upstream_grad[None].astype(np.float64), stride, pad)
    return dx[0].astype(np.float32), dk.astype(np.float32)


# --------------------------------------------------------------------------
# pooling

def maxpool_batch(x, size):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool size {size} larger than input {h}x{w}")
    blocks = x[:, : ho * size, : wo * size].reshape(n, ho, size, wo, size, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward_batch(x_shape, arg, grad_out, size):
    n, h, w, c = x_shape
    ho, wo = grad_out.shape[1:3]
    onehot = np.zeros((n, ho, wo, c, size * size), dtype=grad_out.dtype)
    np.put_along_axis(onehot, arg[..., None], grad_out[..., None], axis=-1)
    onehot = onehot.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x_shape, dtype=grad_out.dtype)
    dx[:, : ho * size, : wo * size] = onehot.reshape(n, ho * size, wo * size, c)
    return dx


# --------------------------------------------------------------------------
# image-level operations

def gaussian_kernel1d(sigma):
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur_axis(arr, k, axis):
    r = (len(k) - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="symmetric")
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    for i, wt in enumerate(k):
        out += wt * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img, sigma):
    """Separable per-channel Gaussian blur, truncated at 3 sigma, reflect-padded.

    ``sigma == 0`` returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    img = check_image(img)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel1d(sigma)
    out = _blur_axis(img.astype(np.float64), k, 0)
    out = _blur_axis(out, k, 1)
    return out.astype(np.float32)


def resize_bilinear(img, new_h, new_w):
    """Bilinear resize with corner-aligned sampling."""
    img = check_image(img)
    if new_h < 1 or new_w < 1:
        raise ShapeError(f"target size must be positive, got {new_h}x{new_w}")
    h, w, _ = img.shape
    if (new_h, new_w) == (h, w):
        return img.copy()

    def coords(n_out, n_in):
        if n_out == 1:
            pos = np.zeros(1)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(new_h, h)
    c0, c1, fc = coords(new_w, w)
    src = img.astype(np.float64)
    top = src[r0][:, c0] * (1 - fc)[None, :, None] + src[r0][:, c1] * fc[None, :, None]
    bot = src[r1][:, c0] * (1 - fc)[None, :, None] + src[r1][:, c1] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bot * fr[:, None, None]
    return out.astype(np.float32)


def lerp_images(a, b, t):
    """Return ``(1 - t) * a + t * b``."""
    a, b = check_image(a, "a"), check_image(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"cannot interpolate shapes {a.shape} and {b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0:
        return a.copy()
    if t == 1:
        return b.copy()
    return ((1.0 - t) * a.astype(np.float64) + t * b.astype(np.float64)).astype(np.float32)


def center_crop(img, h, w):
    H, W = img.shape[:2]
    r, c = (H - h) // 2, (W - w) // 2
    return img[r : r + h, c : c + w]


# --------------------------------------------------------------------------
# FLT1 raw tensor format

def flt1_bytes(arr):
    arr = np.asarray(arr, dtype="<f4")
    header = FLT1_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def parse_flt1(buf, offset=0, what="tensor"):
    """Parse one FLT1 payload from ``buf`` at ``offset``; return ``(array, new_offset)``."""
    def need(n, part):
        have = len(buf) - offset
        if have < n:
            raise FormatError(f"{what}: truncated {part}, expected {n} bytes, found {max(have, 0)} "
                              f"(missing {n - max(have, 0)} bytes)")

    need(8, "magic")
    if bytes(buf[offset : offset + 8]) != FLT1_MAGIC:
        raise FormatError(f"{what}: bad magic {bytes(buf[offset:offset + 8])!r}, expected {FLT1_MAGIC!r}")
    offset += 8
    need(4, "rank")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    need(4 * rank, "extents")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    if any(d < 1 for d in dims):
        raise FormatError(f"{what}: zero extent in shape {dims}")
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    need(nbytes, "element data")
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset).reshape(dims)
    return arr.astype(np.float32), offset + nbytes


def write_flt1(path, arr):
    Path(path).write_bytes(flt1_bytes(arr))


def read_flt1(path):
    buf = Path(path).read_bytes()
    arr, end = parse_flt1(buf, 0, what=str(path))
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after tensor data")
    return arr
