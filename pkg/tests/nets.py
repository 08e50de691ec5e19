"""Small network builders shared by the test modules."""

import numpy as np

from tinycnn.model import infer_shapes, manifest_from_dict, random_weights
from tinycnn.reference import build_verification_set, random_inputs


def make_net(doc):
    return infer_shapes(manifest_from_dict(doc))


def random_small_net(rng, max_dim=16):
    """Random conv/pool/dense stack with every dimension <= max_dim."""
    side = int(rng.choice([s for s in (4, 8, 16) if s <= max_dim]))
    layers = []
    h = side
    for _ in range(int(rng.integers(1, 3))):
        layers.append({"type": "conv2d", "out_channels": int(rng.integers(2, 9)),
                       "kernel": int(rng.choice([1, 3, 3, 5])), "bias": bool(rng.random() < 0.8)})
        layers.append({"type": "relu"})
        if h >= 4 and rng.random() < 0.7:
            layers.append({"type": "maxpool", "size": 2})
            h //= 2
    layers.append({"type": "flatten"})
    if rng.random() < 0.5:
        layers += [{"type": "dense", "units": int(rng.integers(4, 17))}, {"type": "relu"}]
    layers.append({"type": "dense", "units": int(rng.integers(3, 11))})
    doc = {"name": "rand", "input": {"height": side, "width": side,
                                    "channels": int(rng.integers(1, 4))}, "layers": layers}
    return make_net(doc)


def small_setup(seed, count=64, max_dim=16):
    """(spec, weights, verification set) for a seeded random small net."""
    rng = np.random.default_rng(seed)
    spec = random_small_net(rng, max_dim)
    weights = random_weights(spec, seed)
    vset = build_verification_set(spec, weights, random_inputs(spec, count, seed + 1000))
    return spec, weights, vset


TINY = {
    "name": "tiny",
    "input": {"height": 8, "width": 8, "channels": 2},
    "layers": [
        {"type": "conv2d", "out_channels": 4},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "conv2d", "out_channels": 4},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "flatten"},
        {"type": "dense", "units": 6},
        {"type": "relu"},
        {"type": "dense", "units": 3},
    ],
}
