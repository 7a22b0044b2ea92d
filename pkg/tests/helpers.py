"""Small shared fixtures built from the public API."""

import numpy as np

from facetviz.network import LayerSpec, Network, build_network


def small_net(seed=0, input_shape=(8, 8, 2), classes=3):
    """conv -> relu -> pool -> strided conv -> dense -> relu -> dense -> softmax."""
    layers = [
        LayerSpec("conv1", "conv", units=3, kernel=3, pad=1),
        LayerSpec("relu1", "relu"),
        LayerSpec("pool1", "maxpool", kernel=2),
        LayerSpec("conv2", "conv", units=4, kernel=3, stride=2, pad=1),
        LayerSpec("fc_code", "dense", units=5),
        LayerSpec("relu2", "relu"),
        LayerSpec("fc_class", "dense", units=classes),
        LayerSpec("prob", "softmax"),
    ]
    return build_network(input_shape, layers, rng_seed=seed)


def linear_net(weights, bias=None, input_shape=None):
    """Single dense layer; ``weights`` is (units, H*W*C)."""
    w = np.asarray(weights, dtype=np.float32)
    b = np.zeros(w.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return Network(tuple(input_shape), [LayerSpec("fc", "dense", units=w.shape[0])], {"fc": (w, b)})


def identity_conv_net(input_shape):
    c = input_shape[2]
    w = np.zeros((1, 1, c, c), np.float32)
    w[0, 0] = np.eye(c)
    return Network(tuple(input_shape), [LayerSpec("id", "conv", units=c, kernel=1)],
                   {"id": (w, np.zeros(c, np.float32))})


def activation64(net, x, sel):
    """Selected-unit activation evaluated entirely in float64 (no float32 input
    cast), so that finite differences are not limited by input quantization."""
    from facetviz.network import _forward_batch, _read_unit
    idx = net.index(sel.layer)
    outs, _ = _forward_batch(net, np.asarray(x, dtype=np.float64)[None], upto=idx)
    return float(_read_unit(outs[idx], sel)[0])


def grad_fixtures(count, seed=0):
    """``count`` (net, image, selector) triples spread over every layer kind."""
    from facetviz.network import UnitSelector
    r = np.random.default_rng(seed)
    picks = [("conv1", (3, 5)), ("relu1", (2, 2)), ("pool1", (1, 3)), ("conv2", None),
             ("conv2", (1, 0)), ("fc_code", None), ("relu2", None), ("fc_class", None), ("prob", None)]
    out = []
    for i in range(count):
        net = small_net(seed=int(r.integers(1 << 30)))
        layer, loc = picks[i % len(picks)]
        width = net.output_shape(layer)[-1]
        sel = UnitSelector(layer, int(r.integers(width)), loc)
        out.append((net, r.normal(size=net.input_shape), sel))
    return out


# lines printed in the terminal summary by the acceptance suite
ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
