import json

import numpy as np
import pytest

from tinycnn.model import (
    LayerKind,
    ManifestError,
    ShapeError,
    TensorShape,
    WeightError,
    example_network,
    infer_shapes,
    load_model,
    manifest_dict,
    manifest_from_dict,
    param_count,
    parse_manifest,
    random_weights,
    save_weights,
    total_params,
)

from nets import TINY, make_net

# (output h, w, channels) for each layer of the shipped net
CIFAR_SHAPES = [
    (32, 32, 32), (32, 32, 32), (16, 16, 32),
    (16, 16, 64), (16, 16, 64), (8, 8, 64),
    (8, 8, 128), (8, 8, 128), (4, 4, 128),
    (4, 4, 128), (4, 4, 128), (2, 2, 128),
    (1, 1, 512), (1, 1, 100), (1, 1, 100), (1, 1, 10), (1, 1, 10),
]


def test_cifar_shapes():
    spec = example_network()
    got = [(s.height, s.width, s.channels) for s in (spec.out_shape(i) for i in range(len(spec.layers)))]
    assert got == CIFAR_SHAPES


def test_cifar_params():
    spec = example_network()
    counts = [param_count(spec.layers[i], spec.in_shape(i)) for i in spec.param_layer_indices()]
    assert counts == [320, 18496, 73856, 147584, 51300, 1010]
    assert total_params(spec) == 292566


def test_manifest_roundtrip():
    spec = example_network()
    again = infer_shapes(parse_manifest(json.dumps(manifest_dict(spec))))
    assert again.layers == spec.layers
    assert again.per_layer_shapes == spec.per_layer_shapes


def test_no_bias_counts():
    spec = make_net({"input": {"height": 4, "width": 4, "channels": 1},
                     "layers": [{"type": "conv2d", "out_channels": 2, "bias": False}]})
    assert total_params(spec) == 18


@pytest.mark.parametrize("layers, msg", [
    ([], "no layers"),
    ([{"type": "conv2d", "out_channels": 2, "kernel": 2}], "odd"),
    ([{"type": "pool"}], "unknown"),
    ([{"type": "dense", "units": 3}], "flatten"),
    ([{"type": "flatten"}, {"type": "flatten"}], "more than one"),
    ([{"type": "flatten"}, {"type": "conv2d", "out_channels": 2}], "misplaced"),
    ([{"type": "conv2d"}], "out_channels"),
    ([{"type": "conv2d", "out_channels": "4"}], "integer"),
])
def test_manifest_errors(layers, msg):
    with pytest.raises(ManifestError, match=msg):
        manifest_from_dict({"input": {"height": 4, "width": 4, "channels": 1}, "layers": layers})


def test_malformed_json():
    with pytest.raises(ManifestError, match="malformed"):
        parse_manifest("{not json")


def test_pool_must_divide():
    with pytest.raises(ShapeError):
        make_net({"input": {"height": 6, "width": 6, "channels": 1},
                  "layers": [{"type": "maxpool", "size": 4}]})


def test_tensor_shape_positive():
    with pytest.raises(ValueError):
        TensorShape(0, 3, 1)


def test_weights_roundtrip(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 3)
    save_weights(w, spec, tmp_path)
    spec2, w2 = load_model(tmp_path)
    assert spec2.layers == spec.layers
    for i in spec.param_layer_indices():
        assert np.array_equal(w[i].weights, w2[i].weights)
        assert np.array_equal(w[i].bias, w2[i].bias)
    assert spec.layers[0].kind is LayerKind.CONV2D
    assert w2[0].weights.shape == (4, 2, 3, 3)


def test_weights_wrong_size(tmp_path):
    spec = make_net(TINY)
    save_weights(random_weights(spec, 3), spec, tmp_path)
    (tmp_path / "layer1_w.bin").write_bytes(np.zeros(10, "<f4").tobytes())
    with pytest.raises(WeightError, match="expected 144 weights"):
        load_model(tmp_path)


def test_weights_non_finite(tmp_path):
    spec = make_net(TINY)
    save_weights(random_weights(spec, 3), spec, tmp_path)
    b = np.zeros(4, "<f4")
    b[2] = np.nan
    (tmp_path / "layer0_b.bin").write_bytes(b.tobytes())
    with pytest.raises(WeightError, match="flat index 2"):
        load_model(tmp_path)
