import difflib
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycnn import fixedpoint as fx
from tinycnn.datapath import mid_split_plan
from tinycnn.hdl import EmitPlan, build_tree, emit_all, emit_memfile, lint_file, lint_tree, parse_memfile
from tinycnn.hdl.emit import memfile_raws
from tinycnn.hdl.units import (
    comparator_tree,
    emit_arbiter,
    emit_conv_unit,
    emit_maxpool,
    emit_precision_adjust,
    emit_unit,
)
from tinycnn.model import example_network, random_weights, total_params
from tinycnn.resources import ConvMode, DeviceSpec, FitError, HardwareConfig, load_device

from nets import TINY, make_net


@pytest.fixture(scope="module")
def cifar():
    spec = example_network()
    w = random_weights(spec, 0)
    return spec, w, mid_split_plan(spec, w, 16)


def _plan(cifar, mode, dsps=(16,)):
    spec, w, q = cifar
    return EmitPlan(spec, w, q, HardwareConfig(conv_mode=mode, dsp_per_conv=dsps))


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 32).flatmap(
    lambda w: st.tuples(st.just(w), st.lists(st.integers(-(1 << (w - 1)), (1 << (w - 1)) - 1), max_size=50))))
def test_memfile_roundtrip(case):
    width, raws = case
    text = emit_memfile(raws, width)
    assert text.count("\n") == len(raws)
    assert not text.endswith("\n\n")
    assert parse_memfile(text, width) == raws


def test_memfile_format():
    assert emit_memfile([1, -1, -32768], 16) == "0001\nffff\n8000\n"
    assert emit_memfile([-1], 10) == "3ff\n"
    with pytest.raises(ValueError):
        emit_memfile([40000], 16)


def test_conv_unit_d_only_changes_parameter():
    a, b = emit_conv_unit(1).splitlines(), emit_conv_unit(16).splitlines()
    changed = [l for l in difflib.unified_diff(a, b, lineterm="", n=0)
               if l[:1] in "+-" and not l.startswith(("+++", "---"))]
    assert changed and all("D =" in l or "N_STATES" in l for l in changed)


def test_comparator_count():
    for m in (1, 2, 3, 4):
        text = emit_maxpool(m)
        assert len(re.findall(r"assign cmp\d+", text)) == m * m - 1
        assert lint_file(text) == []
    lines, root = comparator_tree(["a"])
    assert lines == [] and root == "a"


def test_arbiter_one_hot_formula():
    text = emit_arbiter(4)
    assert "req & (~req + 1'b1)" in text
    for req in range(16):
        pick = req & ((~req + 1) & 0xF)
        assert bin(pick).count("1") == (1 if req else 0)
        assert pick == 0 or (req & (pick - 1)) == 0  # lowest requester wins


def _emulate_adjust(text, din, in_width, width):
    """Bit-level model of the emitted precision-adjust expressions."""
    m = re.search(r">> (\d+);", text)
    if m:
        s = int(m.group(1))
        neg = din < 0
        mag = (abs(din) + (1 << (s - 1))) >> s
        v = -mag if neg else mag
    else:
        m = re.search(r"<<< (\d+)", text) or re.search(r"<< (\d+)", text)
        v = din << (int(m.group(1)) if m else 0)
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    return max(lo, min(hi, v))


@settings(max_examples=200, deadline=None)
@given(st.integers(-(1 << 40), 1 << 40), st.integers(-6, 30))
def test_precision_adjust_matches_engine(acc, shift):
    text = emit_precision_adjust("pa", shift, 48, 16)
    assert lint_file(text) == []
    want = int(fx.requantize_array(np.array([acc]), shift + 10, fx.QFormat(16, 10))[0])
    assert _emulate_adjust(text, acc, 48, 16) == want


def test_dispatcher():
    assert "module relu_unit" in emit_unit("relu", width=8)
    with pytest.raises(ValueError):
        emit_unit("softmax")


def test_exclusive_top(cifar):
    files = build_tree(_plan(cifar, ConvMode.EXCLUSIVE, (32, 16, 8, 4)))
    top = files["top.v"]
    assert len(re.findall(r"^\s*conv_unit\b", top, re.M)) == 4
    assert "conv_arbiter" not in top and "units/conv_arbiter.v" not in files


def test_shared_top(cifar):
    files = build_tree(_plan(cifar, ConvMode.SHARED))
    top = files["top.v"]
    assert len(re.findall(r"^\s*conv_unit\b", top, re.M)) == 1
    assert re.search(r"conv_arbiter #\(\.N\(4\)\)", top)
    assert "parameter N = 4" in files["units/conv_arbiter.v"]


def test_ram_and_rom_depths(cifar):
    spec = cifar[0]
    files = build_tree(_plan(cifar, ConvMode.SHARED))
    ff3 = files["units/feedforward_l3.v"]
    assert "RAM_DEPTH = 8192" in ff3
    assert "ROM_DEPTH = 18496" in ff3
    mems = {k: v for k, v in files.items() if k.endswith(".mem")}
    assert sum(v.count("\n") for v in mems.values()) == total_params(spec) == 292566


def test_memfiles_match_simulated_weights(cifar):
    plan = _plan(cifar, ConvMode.SHARED)
    files = build_tree(plan)
    raws = memfile_raws(plan)
    for p, i in enumerate(cifar[0].param_layer_indices()):
        assert parse_memfile(files[f"weights/layer{p}.mem"], 16) == raws[i].tolist()


def test_lint_clean_both_modes(cifar):
    for mode in ConvMode:
        files = build_tree(_plan(cifar, mode))
        assert lint_tree(files, set(files)) == []


def test_lint_catches_problems():
    bad = "module m (\n    input wire a,\n    output wire b\n);\n    assign b = 1'b0;\n"
    problems = lint_file(bad)
    assert any("endmodule" in p for p in problems)
    assert any("port a" in p for p in lint_file(bad + "endmodule\n"))
    assert any("begin" in p for p in lint_file(bad.replace("assign", "begin assign") + "endmodule\n"))
    tree = {"top.v": "module top (\n    input wire a\n);\n    foo u_x (.a(a));\n"
                     "    initial $readmemh(\"w.mem\", r);\nendmodule\n"}
    problems = lint_tree(tree, set(tree))
    assert any("undefined module foo" in p for p in problems)
    assert any("w.mem" in p for p in problems)


def test_emit_all_deterministic(tmp_path, cifar):
    plan = _plan(cifar, ConvMode.EXCLUSIVE)
    m1 = emit_all(plan, tmp_path / "a", load_device())
    m2 = emit_all(plan, tmp_path / "b", load_device())
    assert m1 == m2
    for entry in m1["files"]:
        assert (tmp_path / "a" / entry["path"]).read_bytes() == (tmp_path / "b" / entry["path"]).read_bytes()
    assert (tmp_path / "a" / "emit_manifest.json").read_bytes() == (tmp_path / "b" / "emit_manifest.json").read_bytes()


def test_emit_refuses_unfit(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    plan = EmitPlan(spec, w, mid_split_plan(spec, w, 16), HardwareConfig())
    with pytest.raises(FitError):
        emit_all(plan, tmp_path, DeviceSpec("nano", 1, 4))
    assert not any(tmp_path.iterdir())


def test_small_net_tree(tmp_path):
    spec = make_net(TINY)
    w = random_weights(spec, 0)
    plan = EmitPlan(spec, w, mid_split_plan(spec, w, 12), HardwareConfig(ConvMode.EXCLUSIVE, (8, 4), dsp_dense=4))
    manifest = emit_all(plan, tmp_path, load_device())
    paths = {f["path"] for f in manifest["files"]}
    assert {"top.v", "weights/layer0.mem", "units/dense_unit_l9.v"} <= paths
    assert (tmp_path / "weights/layer0.mem").read_text().splitlines()[0] == \
        fx.to_hex_word(int(memfile_raws(plan)[0][0]), 12)
