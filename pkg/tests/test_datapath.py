import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycnn import fixedpoint as fx
from tinycnn.datapath import (
    QPlan,
    conv_fixed,
    conv_via_windows,
    dense_fixed,
    export_fixed_trace,
    feed_windows,
    forward_fixed,
    forward_fixed_batch,
    maxpool_fixed,
    mid_split_plan,
    quantize_params,
    relu_fixed,
    uniform_plan,
    widen_plan,
)
from tinycnn.fixedpoint import QFormat
from tinycnn.model import ShapeError, random_weights
from tinycnn.reference import random_inputs

import oracles
from nets import TINY, make_net


def _raws(rng, shape, width):
    return rng.integers(-(1 << (width - 1)), 1 << (width - 1), size=shape)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_conv_oracle(seed):
    rng = np.random.default_rng(seed)
    width = int(rng.choice([8, 12, 16]))
    c, o, k = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.choice([1, 3, 5]))
    h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    x = _raws(rng, (c, h, w), width)
    wt = _raws(rng, (o, c, k, k), width)
    bias = rng.integers(-(1 << 20), 1 << 20, size=o)
    fi, fw, fo = int(rng.integers(0, width)), int(rng.integers(0, width)), int(rng.integers(0, width))
    got = conv_fixed(x, wt, bias, fi, fw, QFormat(width, fo))
    acc = oracles.conv(x.tolist(), wt.tolist(), bias.tolist())
    want = [[[oracles.requant(v, fi + fw - fo, width) for v in row] for row in plane] for plane in acc]
    assert got.tolist() == want


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    width = int(rng.choice([8, 16, 24]))
    n_in, n_out = int(rng.integers(1, 30)), int(rng.integers(1, 8))
    x = _raws(rng, n_in, width)
    wt = _raws(rng, (n_out, n_in), width)
    bias = None if rng.random() < 0.3 else rng.integers(-(1 << 30), 1 << 30, size=n_out)
    fi, fw, fo = int(rng.integers(0, width)), int(rng.integers(0, width)), int(rng.integers(0, width))
    got = dense_fixed(x, wt, bias, fi, fw, QFormat(width, fo))
    acc = oracles.dense(x.tolist(), wt.tolist(), None if bias is None else bias.tolist())
    assert got.tolist() == [oracles.requant(v, fi + fw - fo, width) for v in acc]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_maxpool_oracle(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    x = _raws(rng, (int(rng.integers(1, 4)), m * int(rng.integers(1, 4)), m * int(rng.integers(1, 4))), 16)
    assert maxpool_fixed(x, m).tolist() == oracles.maxpool(x.tolist(), m)


def test_maxpool_shape_error():
    with pytest.raises(ShapeError):
        maxpool_fixed(np.zeros((1, 5, 4), dtype=np.int64), 2)


def test_relu():
    assert relu_fixed(np.array([-3, 0, 5])).tolist() == [0, 0, 5]


def test_saturating_conv_counts():
    x = np.full((1, 3, 3), 32767)
    w = np.full((1, 1, 3, 3), 32767)
    c = fx.SaturationCounter()
    out = conv_fixed(x, w, None, 15, 15, QFormat(16, 15), c)
    assert out.max() == 32767 and c.count == 9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_windows_match_direct(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3, 5]))
    x = _raws(rng, (2, int(rng.integers(1, 7)), int(rng.integers(1, 7))), 16)
    wt = _raws(rng, (3, 2, k, k), 16)
    bias = rng.integers(-1000, 1000, size=3)
    direct = conv_fixed(x, wt, bias, 8, 12, QFormat(16, 6))
    assert conv_via_windows(x, wt, bias, 8, 12, QFormat(16, 6)).tolist() == direct.tolist()


def test_feed_windows_rows():
    x = np.arange(12).reshape(1, 3, 4)
    wins = list(feed_windows(x, 0))
    assert [w.row for w in wins] == [0, 1, 2]
    assert wins[0].rows.shape == (3, 6)
    assert wins[0].rows[0].tolist() == [0] * 6
    assert wins[1].rows[1].tolist() == [0, 4, 5, 6, 7, 0]


def test_qplan_json_roundtrip(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    plan = mid_split_plan(spec, w, 16)
    plan.save(tmp_path / "q.json")
    assert QPlan.load(tmp_path / "q.json") == plan
    assert plan.input_frac == 8 and set(plan.activation_frac) == {8}
    # only parameterized layers carry a weight format
    assert [f is not None for f in plan.weight_frac] == [l.has_params for l in spec.layers]


def test_qplan_checks():
    spec = make_net(TINY)
    with pytest.raises(ValueError):
        QPlan(16, 8, (8,) * 3, (None,) * 3).check(spec)
    with pytest.raises(ValueError):
        QPlan(16, 16, (8,) * 10, (None,) * 10)


def test_rom_layout():
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    q = quantize_params(spec, w, mid_split_plan(spec, w, 16))
    words = q[0].rom_words()
    assert len(words) == 4 * 2 * 9 + 4
    assert words[:72].tolist() == q[0].weight_raws.reshape(-1).tolist()


def test_bias_alignment_exact():
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    plan = mid_split_plan(spec, w, 16)
    for i, ql in quantize_params(spec, w, plan).items():
        assert ql.bias_format.frac_bits <= ql.acc_frac
        assert (ql.bias_acc == ql.bias_raws * 2**ql.bias_shift).all()


def test_fixed_tracks_float():
    spec = make_net(TINY)
    w = random_weights(spec, 2)
    xs = random_inputs(spec, 8, 3)
    plan = uniform_plan(spec, w, 16, 10)
    from tinycnn.reference import forward_float_batch
    ref = forward_float_batch(spec, w, xs)[-1]
    t = forward_fixed_batch(spec, w, plan, xs)
    np.testing.assert_allclose(t.dequantized(len(spec.layers) - 1), ref, atol=2e-2)


def test_single_matches_batch():
    spec = make_net(TINY)
    w = random_weights(spec, 2)
    xs = random_inputs(spec, 3, 3)
    plan = mid_split_plan(spec, w, 12)
    batch = forward_fixed_batch(spec, w, plan, xs)
    one = forward_fixed(spec, w, plan, xs[2])
    for l in range(len(spec.layers)):
        assert one.outputs[l].tolist() == batch.outputs[l][2].tolist()


def test_widen_plan_keeps_integer_bits():
    spec = make_net(TINY)
    w = random_weights(spec, 2)
    p = mid_split_plan(spec, w, 12)
    wide = widen_plan(p, 4)
    assert wide.width == 16
    assert wide.activation_format(3).int_bits == p.activation_format(3).int_bits


def test_export_trace(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 2)
    plan = mid_split_plan(spec, w, 16)
    t = forward_fixed_batch(spec, w, plan, random_inputs(spec, 2, 0))
    export_fixed_trace(t, plan, tmp_path)
    raw = np.frombuffer((tmp_path / "fixed_layer0.bin").read_bytes(), dtype="<i2")
    assert raw.tolist() == t.outputs[0].reshape(-1).tolist()
    assert (tmp_path / "qplan.json").is_file()
