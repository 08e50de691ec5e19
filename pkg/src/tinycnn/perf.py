"""Closed-form cycle model for shared and exclusive convolution modes.

The constants are estimates, not board measurements: a conv unit with D DSPs
retires D MACs per cycle and pays ``row_overhead`` cycles per (output row,
input channel, output channel) handoff from the feedforward unit; elementwise
units retire one output per cycle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import LayerKind, LayerSpec, NetworkSpec, TensorShape, ceil_div
from .resources import ConvMode, HardwareConfig, validate_config


def layer_cycles(layer: LayerSpec, in_shape: TensorShape, dsps: int = 1, row_overhead: int = 4) -> int:
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        bound = in_shape.height * in_shape.width
        if not 1 <= dsps <= bound:
            raise ValueError(f"conv DSP count {dsps} outside [1, {bound}]")
        h, w, c = in_shape.height, in_shape.width, in_shape.channels
        macs = h * w * layer.out_channels * c * layer.kernel**2
        return ceil_div(macs, dsps) + row_overhead * h * c * layer.out_channels
    if kind is LayerKind.DENSE:
        n_in = in_shape.size
        if not 1 <= dsps <= n_in:
            raise ValueError(f"dense DSP count {dsps} outside [1, {n_in}]")
        return ceil_div(n_in * layer.units, dsps) + layer.units
    if kind is LayerKind.MAXPOOL:
        m = layer.pool_size
        return (in_shape.height // m) * (in_shape.width // m) * in_shape.channels
    # relu, flatten: the unit (or bare precision adjust) emits one word per cycle
    return in_shape.size


@dataclass
class PerfReport:
    mode: ConvMode
    layer_cycles: list[int]
    stage_cycles: list[int]      # pipeline stages: [pre-conv], conv+tail per conv layer, dense tail
    total_cycles: int
    clock_mhz: float
    sw_baseline_ms: float | None = None

    @property
    def runtime_ms(self) -> float:
        return self.total_cycles / (self.clock_mhz * 1000.0)

    @property
    def speedup(self) -> float | None:
        if self.sw_baseline_ms is None:
            return None
        return speedup_report(self, self.sw_baseline_ms)

    def to_dict(self) -> dict:
        speedup = self.speedup
        return {
            "mode": self.mode.value,
            "clock_mhz": self.clock_mhz,
            "layer_cycles": self.layer_cycles,
            "stage_cycles": self.stage_cycles,
            "total_cycles": self.total_cycles,
            "runtime_ms": self.runtime_ms,
            "sw_baseline_ms": self.sw_baseline_ms,
            "speedup": speedup,
            "speedup_rounded": None if speedup is None else round(speedup, 3),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def per_layer_dsps(spec: NetworkSpec, config: HardwareConfig) -> list[int]:
    """DSPs each layer actually uses (shared units cannot use more than the fed fmap has pixels)."""
    convs = spec.conv_layer_indices()
    conv_d = dict(zip(convs, config.conv_dsps(len(convs))))
    out = []
    for i, layer in enumerate(spec.layers):
        s = spec.in_shape(i)
        if layer.kind is LayerKind.CONV2D:
            out.append(min(conv_d[i], s.height * s.width))
        elif layer.kind is LayerKind.DENSE:
            out.append(min(config.dsp_dense, s.size))
        else:
            out.append(1)
    return out


def pipeline_stages(spec: NetworkSpec) -> list[list[int]]:
    """Group layer indices: each conv with the elementwise layers after it; flatten onward is one stage."""
    stages: list[list[int]] = []
    current: list[int] = []
    in_tail = False
    for i, layer in enumerate(spec.layers):
        if layer.kind in (LayerKind.FLATTEN, LayerKind.DENSE) and not in_tail:
            if current:
                stages.append(current)
            current, in_tail = [], True
        elif layer.kind is LayerKind.CONV2D and current:
            stages.append(current)
            current = []
        current.append(i)
    if current:
        stages.append(current)
    return stages


def total_cycles(spec: NetworkSpec, config: HardwareConfig, sw_baseline_ms: float | None = None) -> PerfReport:
    validate_config(spec, config)
    dsps = per_layer_dsps(spec, config)
    cycles = [
        layer_cycles(layer, spec.in_shape(i), dsps[i], config.row_overhead)
        for i, layer in enumerate(spec.layers)
    ]
    stages = [sum(cycles[i] for i in stage) for stage in pipeline_stages(spec)]
    if config.conv_mode is ConvMode.SHARED:
        n_conv = len(spec.conv_layer_indices())
        total = sum(cycles) + config.arbitration_cycles * n_conv
    else:
        # steady state: one image per slowest stage
        total = max(stages)
    return PerfReport(config.conv_mode, cycles, stages, total, config.clock_mhz, sw_baseline_ms)


def speedup_report(hw: PerfReport | float, sw_baseline_ms: float) -> float:
    """Software runtime over accelerator runtime. ``hw`` may be a report or a runtime in ms."""
    hw_ms = hw.runtime_ms if isinstance(hw, PerfReport) else float(hw)
    if hw_ms <= 0 or sw_baseline_ms <= 0:
        raise ValueError("runtimes must be positive")
    return sw_baseline_ms / hw_ms


def format_speedup(ratio: float) -> str:
    return f"{ratio:.2f}×"
