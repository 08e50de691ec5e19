import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinycnn.model import example_network, total_params
from tinycnn.resources import (
    ConvMode,
    DeviceSpec,
    HardwareConfig,
    check_fit,
    dsp_needed,
    load_device,
    memory_footprint,
    validate_config,
)

from nets import TINY, make_net


def test_device_builtin():
    d = load_device()
    assert (d.name, d.bram36_count, d.dsp_count) == ("xc7z020", 140, 220)
    assert d.bram_bits == 5_160_960


def test_device_env_path(tmp_path, monkeypatch):
    (tmp_path / "tiny.json").write_text(json.dumps({"name": "tiny", "bram36": 2, "dsp": 4}))
    monkeypatch.setenv("TINYCNN_DEVICE_DIR", str(tmp_path))
    assert load_device("tiny").dsp_count == 4
    with pytest.raises(FileNotFoundError):
        load_device("missing_device")


def test_cifar_fits_at_16():
    spec = example_network()
    fit = check_fit(spec, load_device(), 16)
    assert fit.weight_bits == 4_681_056 == total_params(spec) * 16
    assert fit.fits and fit.reasons == []
    assert fit.half_blocks_needed <= fit.half_blocks_available == 280


def test_cifar_fails_at_32_on_bram():
    fit = check_fit(example_network(), load_device(), 32)
    assert not fit.fits and fit.reasons == ["BRAM"]


def test_breakdown_kinds():
    spec = example_network()
    entries = memory_footprint(spec, 16)
    roms = [e for e in entries if e.kind == "weight_rom"]
    rams = [e for e in entries if e.kind == "fmap_ram"]
    assert len(roms) == len(rams) == 6
    assert rams[0].depth == 32 * 32 and rams[-1].depth == 100
    doubled = memory_footprint(spec, 16, HardwareConfig(double_buffer=True))
    assert sum(e.bits for e in doubled) > sum(e.bits for e in entries)


def test_dsp_binding():
    spec = make_net(TINY)
    dev = DeviceSpec("small", 100, 10)
    fit = check_fit(spec, dev, 16, HardwareConfig(ConvMode.EXCLUSIVE, (8, 4), dsp_dense=4))
    assert fit.reasons == ["DSP"] and fit.dsp_needed == 16


def test_dsp_counting():
    spec = example_network()
    assert dsp_needed(spec, HardwareConfig(ConvMode.SHARED, (32,), dsp_dense=8)) == 40
    assert dsp_needed(spec, HardwareConfig(ConvMode.EXCLUSIVE, (32, 16, 8, 4), dsp_dense=8)) == 68


def test_config_validation():
    spec = example_network()
    with pytest.raises(ValueError):
        HardwareConfig(ConvMode.SHARED, (4, 4))
    with pytest.raises(ValueError):
        HardwareConfig(dsp_per_conv=(0,))
    with pytest.raises(ValueError):
        validate_config(spec, HardwareConfig(ConvMode.EXCLUSIVE, (16, 16, 16, 32)))  # last fmap is 4x4
    with pytest.raises(ValueError):
        validate_config(spec, HardwareConfig(ConvMode.EXCLUSIVE, (16, 16, 16)))
    validate_config(spec, HardwareConfig(ConvMode.SHARED, (1024,)))


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 32))
def test_bits_grow_with_width(width):
    spec = example_network()
    a = check_fit(spec, load_device(), width)
    b = check_fit(spec, load_device(), width + 1) if width < 32 else a
    assert b.total_bits >= a.total_bits
    assert a.weight_bits == total_params(spec) * width
