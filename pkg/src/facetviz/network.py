"""A small numpy convnet with activation traces and gradients to the input.

The network is a plain chain of layers. Forward passes keep every layer's
output so that any unit (class logit, dense code unit, conv channel at a
location) can be read back and differentiated with respect to the pixels.
"""

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import DataError, FormatError, ShapeError

LAYER_KINDS = ("conv", "relu", "maxpool", "dense", "softmax")
WEIGHTS_MAGIC = b"FACETNET"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    units: int = 0      # conv output channels or dense width
    kernel: int = 0     # conv kernel size or pool size
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class UnitSelector:
    layer: str
    unit: int
    location: tuple | None = None

    def __str__(self):
        loc = "" if self.location is None else f"@{self.location[0]},{self.location[1]}"
        return f"{self.layer}[{self.unit}]{loc}"


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 15
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(eq=False)
class Network:
    """Layer chain plus parameters. ``params`` maps layer name to ``(weights, bias)``.

    Conv weights are ``(k, k, c_in, c_out)``; dense weights are ``(out, in)``
    and act on the row-major flattened input.
    """

    input_shape: tuple
    layers: list
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)   # JSON-serializable extras, e.g. the data mean

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input shape must be (H, W, C) with positive extents, got {self.input_shape}")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"layer names must be unique: {names}")
        self.shapes = []
        shape = self.input_shape
        for spec in self.layers:
            shape = _infer_shape(spec, shape)
            self.shapes.append(shape)
            if spec.kind in ("conv", "dense"):
                self._check_params(spec)
        self._index = {name: i for i, name in enumerate(names)}
        self._cast = {}

    def _check_params(self, spec):
        if spec.name not in self.params:
            raise ShapeError(f"layer {spec.name!r}: missing parameters")
        w, b = self.params[spec.name]
        want_w, want_b = self.param_shapes(spec)
        if tuple(w.shape) != want_w or tuple(b.shape) != want_b:
            raise ShapeError(f"layer {spec.name!r}: parameter shapes {w.shape}/{b.shape}, "
                             f"expected {want_w}/{want_b}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ShapeError(f"layer {spec.name!r}: non-finite parameters")
        self.params[spec.name] = (np.asarray(w, dtype=np.float32), np.asarray(b, dtype=np.float32))

    def param_shapes(self, spec):
        in_shape = self.input_shape if self.index(spec.name) == 0 else self.shapes[self.index(spec.name) - 1]
        if spec.kind == "conv":
            return (spec.kernel, spec.kernel, in_shape[-1], spec.units), (spec.units,)
        return (spec.units, int(np.prod(in_shape))), (spec.units,)

    def index(self, name):
        try:
            return self._index[name] if hasattr(self, "_index") else [l.name for l in self.layers].index(name)
        except (KeyError, ValueError):
            raise ShapeError(f"no layer named {name!r}") from None

    def layer(self, name):
        return self.layers[self.index(name)]

    def output_shape(self, name):
        return self.shapes[self.index(name)]

    @property
    def num_classes(self):
        return self.shapes[-1][-1]

    def cast_params(self, dtype):
        if dtype not in self._cast:
            self._cast[dtype] = {k: (w.astype(dtype, copy=False), b.astype(dtype, copy=False)) for k, (w, b) in self.params.items()}
        return self._cast[dtype]

    def equals(self, other):
        if self.input_shape != other.input_shape or self.layers != other.layers:
            return False
        return all(np.array_equal(self.params[k][i], other.params[k][i])
                   for k in self.params for i in (0, 1))


def _infer_shape(spec, shape):
    if spec.kind not in LAYER_KINDS:
        raise ShapeError(f"layer {spec.name!r}: unknown kind {spec.kind!r}")
    if spec.kind == "conv":
        if len(shape) != 3:
            raise ShapeError(f"layer {spec.name!r}: conv needs a spatial input, got {shape}")
        if spec.units < 1 or spec.kernel < 1 or spec.stride < 1 or spec.pad < 0:
            raise ShapeError(f"layer {spec.name!r}: invalid conv parameters")
        h = tc.conv_output_size(shape[0], spec.kernel, spec.stride, spec.pad)
        w = tc.conv_output_size(shape[1], spec.kernel, spec.stride, spec.pad)
        if h < 1 or w < 1:
            raise ShapeError(f"layer {spec.name!r}: kernel {spec.kernel} too large for input {shape}")
        return (h, w, spec.units)
    if spec.kind == "maxpool":
        if len(shape) != 3 or spec.kernel < 1 or shape[0] < spec.kernel or shape[1] < spec.kernel:
            raise ShapeError(f"layer {spec.name!r}: cannot pool {shape} with size {spec.kernel}")
        return (shape[0] // spec.kernel, shape[1] // spec.kernel, shape[2])
    if spec.kind == "dense":
        if spec.units < 1:
            raise ShapeError(f"layer {spec.name!r}: dense width must be positive")
        return (spec.units,)
    if spec.kind == "softmax" and len(shape) != 1:
        raise ShapeError(f"layer {spec.name!r}: softmax needs a flat input, got {shape}")
    return shape


def build_network(input_shape, layers, rng_seed=0, zero=False):
    """He-initialized network for the given layer chain."""
    rng = np.random.default_rng(rng_seed)
    params = {}
    shape = tuple(input_shape)
    for spec in layers:
        out = _infer_shape(spec, shape)
        if spec.kind == "conv":
            fan_in = spec.kernel * spec.kernel * shape[-1]
            w_shape = (spec.kernel, spec.kernel, shape[-1], spec.units)
        elif spec.kind == "dense":
            fan_in = int(np.prod(shape))
            w_shape = (spec.units, fan_in)
        else:
            shape = out
            continue
        w = np.zeros(w_shape) if zero else rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w_shape)
        params[spec.name] = (w.astype(np.float32), np.zeros(spec.units, dtype=np.float32))
        shape = out
    return Network(tuple(input_shape), list(layers), params)


def default_layers(num_classes):
    return [
        LayerSpec("conv1", "conv", units=16, kernel=5, pad=2),
        LayerSpec("relu1", "relu"),
        LayerSpec("pool1", "maxpool", kernel=2),
        LayerSpec("conv2", "conv", units=32, kernel=5, pad=2),
        LayerSpec("relu2", "relu"),
        LayerSpec("pool2", "maxpool", kernel=2),
        LayerSpec("fc_code", "dense", units=64),
        LayerSpec("relu3", "relu"),
        LayerSpec("fc_class", "dense", units=num_classes),
        LayerSpec("prob", "softmax"),
    ]


def default_network(num_classes, input_shape=(32, 32, 3), rng_seed=0):
    return build_network(input_shape, default_layers(num_classes), rng_seed)


# --------------------------------------------------------------------------
# forward / backward on batches

def _forward_batch(net, X, dtype=np.float64, upto=None):
    params = net.cast_params(dtype)
    a = np.asarray(X, dtype=dtype)
    outs, caches = [], []
    last = len(net.layers) - 1 if upto is None else upto
    for spec in net.layers[: last + 1]:
        cache = None
        if spec.kind == "conv":
            w, b = params[spec.name]
            cache = a.shape
            a, cols = tc.conv2d_batch(a, w, b, spec.stride, spec.pad)
            cache = (cache, cols)
        elif spec.kind == "relu":
            a = np.maximum(a, 0)
        elif spec.kind == "maxpool":
            cache = a.shape
            a, arg = tc.maxpool_batch(a, spec.kernel)
            cache = (cache, arg)
        elif spec.kind == "dense":
            w, b = params[spec.name]
            cache = a.shape
            a = a.reshape(a.shape[0], -1) @ w.T + b
        elif spec.kind == "softmax":
            z = a - a.max(axis=1, keepdims=True)
            e = np.exp(z)
            a = e / e.sum(axis=1, keepdims=True)
        outs.append(a)
        caches.append(cache)
    return outs, caches


def _backward_batch(net, X, outs, caches, start, grad, dtype=np.float64, need_params=False):
    """Backpropagate ``grad`` (gradient w.r.t. output of layer ``start``) to the input."""
    params = net.cast_params(dtype)
    pgrads = {}
    g = np.asarray(grad, dtype=dtype)
    for i in range(start, -1, -1):
        spec = net.layers[i]
        inp = X if i == 0 else outs[i - 1]
        if spec.kind == "softmax":
            p = outs[i]
            g = p * (g - (g * p).sum(axis=1, keepdims=True))
        elif spec.kind == "dense":
            w, _ = params[spec.name]
            if need_params:
                pgrads[spec.name] = (g.T @ inp.reshape(inp.shape[0], -1), g.sum(axis=0))
            g = (g @ w).reshape(caches[i])
        elif spec.kind == "relu":
            g = g * (inp > 0)
        elif spec.kind == "maxpool":
            shape, arg = caches[i]
            g = tc.maxpool_backward_batch(shape, arg, g, spec.kernel)
        elif spec.kind == "conv":
            w, _ = params[spec.name]
            shape, cols = caches[i]
            g, dk, db = tc.conv2d_backward_batch(shape, w, cols, g, spec.stride, spec.pad,
                                                 need_params=need_params)
            if need_params:
                pgrads[spec.name] = (dk, db)
    return g, pgrads


# --------------------------------------------------------------------------
# unit selection

def _check_input(net, x, batched=False):
    x = np.asarray(x)
    want = net.input_shape
    got = x.shape[1:] if batched else x.shape
    if tuple(got) != want:
        raise ShapeError(f"input shape {tuple(got)} does not match network input {want}")
    return x


def validate_selector(net, sel):
    idx = net.index(sel.layer)
    shape = net.shapes[idx]
    width = shape[-1]
    if not 0 <= sel.unit < width:
        raise ShapeError(f"unit {sel.unit} out of range for layer {sel.layer!r} of width {width}")
    if sel.location is not None:
        if len(shape) != 3:
            raise ShapeError(f"location given for non-spatial layer {sel.layer!r}")
        r, c = sel.location
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise ShapeError(f"location {sel.location} outside {shape[0]}x{shape[1]} map of {sel.layer!r}")
    return idx


def _seed_grad(shape, sel, n, dtype):
    g = np.zeros((n,) + tuple(shape), dtype=dtype)
    if len(shape) == 1:
        g[:, sel.unit] = 1.0
    elif sel.location is not None:
        g[:, sel.location[0], sel.location[1], sel.unit] = 1.0
    else:
        g[..., sel.unit] = 1.0 / (shape[0] * shape[1])
    return g


def _read_unit(out, sel):
    if out.ndim == 2:
        return out[:, sel.unit]
    if sel.location is not None:
        return out[:, sel.location[0], sel.location[1], sel.unit]
    return out[..., sel.unit].mean(axis=(1, 2))


def forward(net, x):
    """Return every layer's output for a single image, as a list of float32 arrays."""
    x = _check_input(net, tc.check_image(x))
    outs, _ = _forward_batch(net, x[None])
    return [o[0].astype(np.float32) for o in outs]


def unit_activation(net, x, sel):
    """Scalar activation of the selected unit."""
    x = _check_input(net, tc.check_image(x))
    idx = validate_selector(net, sel)
    outs, _ = _forward_batch(net, x[None], upto=idx)
    return float(_read_unit(outs[idx], sel)[0])


def unit_activations(net, X, sel, batch_size=256):
    """Selected-unit activation for each image of a batch ``(n, H, W, C)``."""
    X = _check_input(net, X, batched=True)
    idx = validate_selector(net, sel)
    res = []
    for s in range(0, len(X), batch_size):
        outs, _ = _forward_batch(net, X[s : s + batch_size], np.float32, upto=idx)
        res.append(_read_unit(outs[idx], sel).astype(np.float64))
    return np.concatenate(res) if res else np.zeros(0)


def activation_and_gradient(net, x, sel):
    """Return ``(activation, d activation / d x)`` for one image."""
    x = _check_input(net, tc.check_image(x))
    idx = validate_selector(net, sel)
    X = x[None].astype(np.float64)
    outs, caches = _forward_batch(net, X, upto=idx)
    act = float(_read_unit(outs[idx], sel)[0])
    g, _ = _backward_batch(net, X, outs, caches, idx, _seed_grad(net.shapes[idx], sel, 1, np.float64))
    return act, g[0].astype(np.float32)


def input_gradient(net, x, sel):
    """Exact gradient of :func:`unit_activation` with respect to every input element."""
    return activation_and_gradient(net, x, sel)[1]


def layer_codes(net, X, layer_name, locations=None, batch_size=256):
    """Codes for a batch. ``locations`` is None or one (row, col) per image."""
    X = _check_input(net, X, batched=True)
    idx = net.index(layer_name)
    shape = net.shapes[idx]
    if locations is not None and len(shape) != 3:
        raise ShapeError(f"location given for non-spatial layer {layer_name!r}")
    res = []
    for s in range(0, len(X), batch_size):
        outs, _ = _forward_batch(net, X[s : s + batch_size], np.float32, upto=idx)
        o = outs[idx]
        if len(shape) == 1:
            res.append(o)
        elif locations is None:
            res.append(o.mean(axis=(1, 2)))
        else:
            loc = np.asarray(locations[s : s + batch_size], dtype=int).reshape(-1, 2)
            if np.any(loc < 0) or np.any(loc[:, 0] >= shape[0]) or np.any(loc[:, 1] >= shape[1]):
                raise ShapeError(f"location outside {shape[0]}x{shape[1]} map of {layer_name!r}")
            res.append(o[np.arange(len(o)), loc[:, 0], loc[:, 1]])
    return np.concatenate(res).astype(np.float64)


def layer_code(net, x, layer_name, location=None):
    """Dense layers: the full activation vector. Conv layers: the cross-channel
    column at ``location`` (or the spatial mean column when no location is given)."""
    x = _check_input(net, tc.check_image(x))
    idx = net.index(layer_name)
    shape = net.shapes[idx]
    if location is not None:
        if len(shape) != 3:
            raise ShapeError(f"location given for non-spatial layer {layer_name!r}")
        if not (0 <= location[0] < shape[0] and 0 <= location[1] < shape[1]):
            raise ShapeError(f"location {location} outside {shape[0]}x{shape[1]} map of {layer_name!r}")
    outs, _ = _forward_batch(net, x[None], upto=idx)
    o = outs[idx][0]
    if len(shape) == 1:
        return o.copy()
    if location is None:
        return o.mean(axis=(0, 1))
    return o[location[0], location[1]].copy()


def receptive_field(net, layer_name, row, col):
    """Input-pixel box ``(r0, r1, c0, c1)`` (half-open, clipped) seen by one spatial unit."""
    size, jump, start = 1, 1, 0.0
    for spec in net.layers[: net.index(layer_name) + 1]:
        if spec.kind == "conv":
            k, s, p = spec.kernel, spec.stride, spec.pad
        elif spec.kind == "maxpool":
            k, s, p = spec.kernel, spec.kernel, 0
        elif spec.kind == "relu":
            continue
        else:
            raise ShapeError(f"layer {layer_name!r} is not spatial")
        start += ((k - 1) / 2 - p) * jump
        size += (k - 1) * jump
        jump *= s
    h, w = net.input_shape[:2]
    half = (size - 1) / 2
    cr, cc = start + row * jump, start + col * jump
    r0, c0 = int(np.floor(cr - half)), int(np.floor(cc - half))
    return max(r0, 0), min(r0 + size, h), max(c0, 0), min(c0 + size, w)


def predict_proba(net, X, batch_size=256):
    X = _check_input(net, X, batched=True)
    res = []
    for s in range(0, len(X), batch_size):
        outs, _ = _forward_batch(net, X[s : s + batch_size], np.float32)
        res.append(outs[-1])
    return np.concatenate(res).astype(np.float64)


# --------------------------------------------------------------------------
# training

def _as_arrays(dataset):
    if hasattr(dataset, "images"):
        return np.asarray(dataset.images, dtype=np.float32), np.asarray(dataset.labels, dtype=int)
    X, y = dataset
    return np.asarray(X, dtype=np.float32), np.asarray(y, dtype=int)


def evaluate(net, dataset):
    """Return ``(mean cross-entropy, accuracy)``."""
    X, y = _as_arrays(dataset)
    p = predict_proba(net, X)
    loss = -np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-12)))
    return float(loss), float(np.mean(p.argmax(axis=1) == y))


def train(net, dataset, cfg=None):
    """SGD with momentum on softmax cross-entropy. Returns ``(new_net, metrics)``.

    The input network is left untouched. ``metrics`` has one dict per epoch
    with the mean training loss and the training accuracy seen during the epoch.
    """
    cfg = cfg or TrainConfig()
    X, y = _as_arrays(dataset)
    if len(X) == 0:
        raise DataError("cannot train on an empty dataset")
    if net.layers[-1].kind != "softmax":
        raise ShapeError("training needs a network ending in softmax")
    if y.min() < 0 or y.max() >= net.num_classes:
        raise DataError(f"labels must lie in [0, {net.num_classes})")
    _check_input(net, X, batched=True)

    params = {k: (w.copy(), b.copy()) for k, (w, b) in net.params.items()}
    work = Network(net.input_shape, list(net.layers), params)
    velocity = {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in params.items()}
    rng = np.random.default_rng(cfg.rng_seed)
    logit_idx = len(work.layers) - 2
    metrics = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total_loss, correct = 0.0, 0
        for s in range(0, len(X), cfg.batch_size):
            bi = order[s : s + cfg.batch_size]
            xb, yb = X[bi], y[bi]
            outs, caches = _forward_batch(work, xb, np.float32)
            p = outs[-1]
            total_loss += float(-np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-12)).sum())
            correct += int((p.argmax(axis=1) == yb).sum())
            dz = p.copy()
            dz[np.arange(len(yb)), yb] -= 1.0
            dz /= len(yb)
            _, grads = _backward_batch(work, xb, outs, caches, logit_idx, dz, np.float32, need_params=True)
            for name, (gw, gb) in grads.items():
                w, b = work.params[name]
                vw, vb = velocity[name]
                vw *= cfg.momentum
                vw -= cfg.learning_rate * gw
                vb *= cfg.momentum
                vb -= cfg.learning_rate * gb
                w += vw
                b += vb
        metrics.append({"epoch": epoch, "loss": total_loss / len(X), "accuracy": correct / len(X)})
    work._cast.clear()
    return Network(work.input_shape, list(work.layers), work.params, dict(net.meta)), metrics


# --------------------------------------------------------------------------
# weight files

def save_weights(net, path):
    """Write the network to a single weight container file."""
    header = json.dumps({
        "input_shape": list(net.input_shape),
        "layers": [{"name": l.name, "kind": l.kind, "units": l.units, "kernel": l.kernel,
                    "stride": l.stride, "pad": l.pad} for l in net.layers],
        "meta": net.meta,
    }, sort_keys=True).encode()
    parts = [WEIGHTS_MAGIC, bytes([WEIGHTS_VERSION]), struct.pack("<I", len(header)), header]
    for spec in net.layers:
        if spec.kind not in ("conv", "dense"):
            continue
        name = spec.name.encode()
        kind = spec.kind.encode()
        parts += [struct.pack("<H", len(name)), name, struct.pack("<H", len(kind)), kind]
        w, b = net.params[spec.name]
        parts += [tc.flt1_bytes(w), tc.flt1_bytes(b)]
    Path(path).write_bytes(b"".join(parts))


def load_weights(path):
    buf = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        have = len(buf) - pos
        if have < n:
            raise FormatError(f"{path}: truncated {what}, expected {n} bytes, found {have} "
                              f"(missing {n - have} bytes)")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(8, "magic") != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    version = take(1, "version")[0]
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weight format version {version}")
    (hlen,) = struct.unpack("<I", take(4, "header length"))
    try:
        header = json.loads(take(hlen, "header").decode())
        layers = [LayerSpec(**d) for d in header["layers"]]
        input_shape = tuple(header["input_shape"])
        meta = dict(header.get("meta", {}))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None

    params = {}
    for spec in layers:
        if spec.kind not in ("conv", "dense"):
            continue
        (n,) = struct.unpack("<H", take(2, f"name length for layer {spec.name}"))
        name = take(n, "layer name").decode()
        (n,) = struct.unpack("<H", take(2, f"kind length for layer {spec.name}"))
        kind = take(n, "layer kind").decode()
        if name != spec.name or kind != spec.kind:
            raise FormatError(f"{path}: expected entry {spec.name}/{spec.kind}, found {name}/{kind}")
        w, pos = tc.parse_flt1(buf, pos, what=f"{path}: layer {name} weights")
        b, pos = tc.parse_flt1(buf, pos, what=f"{path}: layer {name} bias")
        params[name] = (w, b)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return Network(input_shape, layers, params, meta)


def with_params(net, **updates):
    """Copy of ``net`` with some layers' ``(weights, bias)`` replaced."""
    params = dict(net.params)
    params.update(updates)
    return replace(net, params=params)
