import numpy as np
import pytest

from tinycnn.model import example_network, random_weights
from tinycnn.reference import (
    argmax_classes,
    build_verification_set,
    classification_agreement,
    forward_float,
    forward_float_batch,
    im2col,
    load_verification_set,
    make_verification_set,
    maxpool,
    normalize_pixels,
    random_inputs,
    top1_margin,
)

from nets import TINY, make_net


def loop_conv(x, w, b):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros((o, h, wd))
    for oc in range(o):
        for i in range(h):
            for j in range(wd):
                out[oc, i, j] = np.sum(xp[:, i:i + k, j:j + k] * w[oc]) + (b[oc] if b is not None else 0)
    return out


def test_conv_matches_loops():
    spec = make_net({"input": {"height": 5, "width": 6, "channels": 2},
                     "layers": [{"type": "conv2d", "out_channels": 3, "kernel": 5}]})
    w = random_weights(spec, 1)
    x = random_inputs(spec, 1, 2)[0]
    got = forward_float(spec, w, x).outputs[0]
    np.testing.assert_allclose(got, loop_conv(x, w[0].weights, w[0].bias), rtol=1e-12, atol=1e-12)


def test_identity_kernel():
    spec = make_net({"input": {"height": 4, "width": 4, "channels": 1},
                     "layers": [{"type": "conv2d", "out_channels": 1, "bias": False}]})
    w = random_weights(spec, 0)
    w[0].weights[...] = 0
    w[0].weights[0, 0, 1, 1] = 1.0
    x = random_inputs(spec, 1, 0)[0]
    np.testing.assert_array_equal(forward_float(spec, w, x).outputs[0], x)


def test_im2col_and_pool():
    x = np.arange(2 * 4 * 4, dtype=float).reshape(1, 2, 4, 4)
    cols = im2col(x, 3)
    assert cols.shape == (1, 4, 4, 18)
    assert maxpool(x, 2)[0, 1].tolist() == [[21, 23], [29, 31]]


def test_argmax_first_wins_and_margin():
    final = np.array([[1.0, 3.0, 3.0], [0.5, 0.2, 0.1]])
    assert argmax_classes(final).tolist() == [1, 0]
    np.testing.assert_allclose(top1_margin(final), [0.0, 0.3])


def test_agreement():
    assert classification_agreement([1, 2, 3], [1, 2, 0]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        classification_agreement([1], [1, 2])
    with pytest.raises(ValueError):
        classification_agreement([], [])


def test_batch_matches_single():
    spec = make_net(TINY)
    w = random_weights(spec, 5)
    xs = random_inputs(spec, 3, 9)
    outs = forward_float_batch(spec, w, xs)
    one = forward_float(spec, w, xs[1])
    for l in range(len(spec.layers)):
        np.testing.assert_allclose(outs[l][1], one.outputs[l], rtol=1e-12)


def test_cifar_forward_shapes():
    spec = example_network()
    t = forward_float(spec, random_weights(spec, 0), random_inputs(spec, 1, 0)[0])
    assert [o.shape for o in t.outputs][-1] == (10, 1, 1)
    assert 0 <= t.class_index < 10


def test_verification_roundtrip(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    v = make_verification_set(spec, w, random_inputs(spec, 4, 1), tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len([f for f in files if f.startswith("ref_layer")]) == len(spec.layers)
    v2 = load_verification_set(tmp_path, spec)
    np.testing.assert_array_equal(v.inputs, v2.inputs)
    for a, b in zip(v.references, v2.references):
        np.testing.assert_array_equal(a, b)
    assert v.classes.tolist() == v2.classes.tolist()


def test_empty_set_rejected():
    spec = make_net(TINY)
    with pytest.raises(ValueError):
        build_verification_set(spec, random_weights(spec, 0), np.zeros((0, 2, 8, 8)))


def test_random_inputs_seeded():
    spec = make_net(TINY)
    a, b = random_inputs(spec, 3, 7), random_inputs(spec, 3, 7)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() < 1
    assert normalize_pixels([0, 255]).tolist() == [0.0, 255 / 256]
