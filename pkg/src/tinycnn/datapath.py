"""Bit-accurate models of the accelerator's datapath units.

Tensors are raw two's-complement integers in channel-major layout, optionally
with a leading batch axis. Every unit that produces a layer output ends in the
inter-layer precision adjustment (``requantize_array``) to that layer's format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import fixedpoint as fx
from .fixedpoint import QFormat, SaturationCounter
from .model import LayerKind, NetworkSpec, ShapeError, WeightBundle
from .reference import argmax_classes, im2col


# ---------------------------------------------------------------- plans


@dataclass(frozen=True)
class QPlan:
    width: int
    input_frac: int
    activation_frac: tuple[int, ...]          # one per network layer
    weight_frac: tuple[int | None, ...]       # None for layers without weights

    def __post_init__(self):
        if not fx.MIN_WIDTH <= self.width <= fx.MAX_WIDTH:
            raise ValueError(f"width must be in [{fx.MIN_WIDTH}, {fx.MAX_WIDTH}], got {self.width}")
        if len(self.activation_frac) != len(self.weight_frac):
            raise ValueError("activation and weight format lists differ in length")
        for f in (self.input_frac, *self.activation_frac,
                  *(f for f in self.weight_frac if f is not None)):
            QFormat(self.width, f)

    @property
    def input_format(self) -> QFormat:
        return QFormat(self.width, self.input_frac)

    def activation_format(self, index: int) -> QFormat:
        return QFormat(self.width, self.activation_frac[index])

    def weight_format(self, index: int) -> QFormat:
        f = self.weight_frac[index]
        if f is None:
            raise ValueError(f"layer {index} has no weights")
        return QFormat(self.width, f)

    def frac_before(self, index: int) -> int:
        """Fraction bits of the tensor entering layer ``index``."""
        return self.input_frac if index == 0 else self.activation_frac[index - 1]

    def with_activation(self, index: int, frac: int) -> "QPlan":
        fracs = list(self.activation_frac)
        fracs[index] = frac
        return replace(self, activation_frac=tuple(fracs))

    def check(self, spec: NetworkSpec) -> None:
        if len(self.activation_frac) != len(spec.layers):
            raise ValueError(
                f"plan covers {len(self.activation_frac)} layers, network has {len(spec.layers)}"
            )
        for i, layer in enumerate(spec.layers):
            if layer.has_params != (self.weight_frac[i] is not None):
                raise ValueError(f"layer {i}: weight format presence does not match layer kind")

    def to_dict(self) -> dict:
        layers = []
        for i, (a, w) in enumerate(zip(self.activation_frac, self.weight_frac)):
            layers.append({"index": i, "activation_f": a, "weight_f": w})
        return {"width": self.width, "input_f": self.input_frac, "layers": layers}

    @classmethod
    def from_dict(cls, doc: dict) -> "QPlan":
        layers = sorted(doc["layers"], key=lambda e: e["index"])
        if [e["index"] for e in layers] != list(range(len(layers))):
            raise ValueError("qplan layer indices must be 0..n-1")
        return cls(
            int(doc["width"]),
            int(doc["input_f"]),
            tuple(int(e["activation_f"]) for e in layers),
            tuple(None if e.get("weight_f") is None else int(e["weight_f"]) for e in layers),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "QPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def weight_fracs(spec: NetworkSpec, weights: WeightBundle, width: int) -> tuple[int | None, ...]:
    return tuple(
        fx.choose_weight_format(weights[i].weights, width).frac_bits if layer.has_params else None
        for i, layer in enumerate(spec.layers)
    )


def uniform_plan(spec: NetworkSpec, weights: WeightBundle, width: int,
                 activation_frac: int, input_frac: int | None = None) -> QPlan:
    """Same activation format everywhere; weights get their analytic formats."""
    n = len(spec.layers)
    return QPlan(
        width,
        activation_frac if input_frac is None else input_frac,
        (activation_frac,) * n,
        weight_fracs(spec, weights, width),
    )


def mid_split_plan(spec: NetworkSpec, weights: WeightBundle, width: int) -> QPlan:
    """Naive baseline: F = W/2 for the input and every layer output."""
    return uniform_plan(spec, weights, width, width // 2)


def widen_plan(plan: QPlan, extra_bits: int) -> QPlan:
    """Add ``extra_bits`` of width, all of it to the fraction (same ranges, finer steps)."""
    return QPlan(
        plan.width + extra_bits,
        plan.input_frac + extra_bits,
        tuple(f + extra_bits for f in plan.activation_frac),
        tuple(None if f is None else f + extra_bits for f in plan.weight_frac),
    )


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class QuantizedLayer:
    weight_raws: np.ndarray   # W-bit raws, canonical layout
    bias_raws: np.ndarray     # W-bit raws in bias_format (empty when no bias)
    bias_format: QFormat | None
    acc_frac: int             # F_in + F_w

    @property
    def bias_acc(self) -> np.ndarray:
        """Biases aligned to the accumulator scale (exact left shift)."""
        if self.bias_format is None:
            return np.zeros(0, dtype=np.int64)
        return fx.shift_round_array(self.bias_raws, self.bias_format.frac_bits - self.acc_frac)

    @property
    def bias_shift(self) -> int:
        return 0 if self.bias_format is None else self.acc_frac - self.bias_format.frac_bits

    def rom_words(self) -> np.ndarray:
        """ROM contents: weights in canonical order followed by biases."""
        return np.concatenate([self.weight_raws.reshape(-1), self.bias_raws])


def bias_format(bias, width: int, acc_frac: int) -> QFormat:
    """Finest W-bit format that holds the biases without exceeding the accumulator scale."""
    q = fx.choose_format(bias, width)
    return QFormat(width, min(q.frac_bits, acc_frac))


def quantize_layer(weights_f, bias_f, plan: QPlan, index: int) -> QuantizedLayer:
    wq = plan.weight_format(index)
    acc_frac = plan.frac_before(index) + wq.frac_bits
    w_raws = fx.quantize_array(weights_f, wq)
    if bias_f is None or len(bias_f) == 0:
        return QuantizedLayer(w_raws, np.zeros(0, dtype=np.int64), None, acc_frac)
    bq = bias_format(bias_f, plan.width, acc_frac)
    return QuantizedLayer(w_raws, fx.quantize_array(bias_f, bq), bq, acc_frac)


def quantize_params(spec: NetworkSpec, weights: WeightBundle, plan: QPlan) -> dict[int, QuantizedLayer]:
    """The single source of quantized weights, shared by simulation and ROM emission."""
    plan.check(spec)
    return {
        i: quantize_layer(weights[i].weights, weights[i].bias, plan, i)
        for i in spec.param_layer_indices()
    }


# ---------------------------------------------------------------- units


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == ndim:
        return x[None], True
    return x, False


def conv_accumulate(in_raws, weight_raws, bias_acc=None, acc_bits: int = fx.DSP_ACC_BITS) -> np.ndarray:
    """Full-precision conv accumulators ``[(N)][out][h][w]`` before precision adjustment."""
    x, single = _batched(in_raws, 3)
    w = np.asarray(weight_raws)
    out_ch, _, k, _ = w.shape
    cols = im2col(x, k)
    acc = fx.int_matmul(cols, w.reshape(out_ch, -1).T)
    if bias_acc is not None and len(bias_acc):
        acc = fx.add_exact(acc, np.asarray(bias_acc))
    fx.check_accumulator(acc, acc_bits)
    acc = acc.transpose(0, 3, 1, 2)
    return acc[0] if single else acc


def conv_fixed(in_raws, weight_raws, bias_acc, in_frac: int, weight_frac: int, out_format: QFormat,
               counter: SaturationCounter | None = None) -> np.ndarray:
    acc = conv_accumulate(in_raws, weight_raws, bias_acc, fx.accumulator_bits(out_format.width))
    return fx.requantize_array(acc, in_frac + weight_frac, out_format, counter)


def dense_accumulate(in_raws, weight_raws, bias_acc=None, acc_bits: int = fx.DSP_ACC_BITS) -> np.ndarray:
    x = np.asarray(in_raws)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x.reshape(len(x), -1)
    acc = fx.int_matmul(x, np.asarray(weight_raws).T)
    if bias_acc is not None and len(bias_acc):
        acc = fx.add_exact(acc, np.asarray(bias_acc))
    fx.check_accumulator(acc, acc_bits)
    return acc[0] if single else acc


def dense_fixed(in_raws, weight_raws, bias_acc, in_frac: int, weight_frac: int, out_format: QFormat,
                counter: SaturationCounter | None = None) -> np.ndarray:
    acc = dense_accumulate(in_raws, weight_raws, bias_acc, fx.accumulator_bits(out_format.width))
    return fx.requantize_array(acc, in_frac + weight_frac, out_format, counter)


def relu_fixed(t) -> np.ndarray:
    return np.maximum(np.asarray(t), 0)


def maxpool_fixed(t, m: int) -> np.ndarray:
    x, single = _batched(t, 3)
    n, c, h, w = x.shape
    if m < 1 or h % m or w % m:
        raise ShapeError(f"pool size {m} does not divide {h}x{w}")
    y = x.reshape(n, c, h // m, m, w // m, m).max(axis=(3, 5))
    return y[0] if single else y


# ---------------------------------------------------------------- feedforward unit


@dataclass(frozen=True)
class LineWindow:
    row: int             # output row this window produces
    channel: int
    rows: np.ndarray     # [K][width + K - 1] padded input rows
    taps: np.ndarray | None = None  # [K][K] filter applied to this window


def feed_windows(fmap_raws, channel: int, kernel: int = 3, taps=None) -> Iterator[LineWindow]:
    """Yield one K-line window per output row from a fully buffered fmap ``[ch][h][w]``."""
    fmap = np.asarray(fmap_raws)
    _, h, w = fmap.shape
    p = (kernel - 1) // 2
    padded = np.zeros((h + 2 * p, w + 2 * p), dtype=fmap.dtype)
    padded[p:p + h, p:p + w] = fmap[channel]
    for r in range(h):
        yield LineWindow(r, channel, padded[r:r + kernel].copy(),
                         None if taps is None else np.asarray(taps))


def conv_via_windows(in_raws, weight_raws, bias_acc, in_frac: int, weight_frac: int,
                     out_format: QFormat, counter: SaturationCounter | None = None) -> np.ndarray:
    """Convolution driven the way the hardware feeds it: one K-line window at a time."""
    x = np.asarray(in_raws)
    w = np.asarray(weight_raws)
    out_ch, in_ch, k, _ = w.shape
    _, h, width = x.shape
    acc = np.zeros((out_ch, h, width), dtype=object)
    for o in range(out_ch):
        if bias_acc is not None and len(bias_acc):
            acc[o] += int(bias_acc[o])
        for c in range(in_ch):
            for win in feed_windows(x, c, k, taps=w[o, c]):
                row = acc[o, win.row]
                for kh in range(k):
                    for kw in range(k):
                        row += win.rows[kh, kw:kw + width].astype(object) * int(win.taps[kh, kw])
    fx.check_accumulator(acc, fx.accumulator_bits(out_format.width))
    return fx.requantize_array(acc, in_frac + weight_frac, out_format, counter)


# ---------------------------------------------------------------- network


@dataclass(frozen=True)
class FixedTrace:
    outputs: list            # per layer raws, [N][ch][h][w]
    formats: list            # per layer QFormat
    classes: np.ndarray      # [N]
    saturations: list        # per layer saturated-element counts
    input_saturations: int = 0

    @property
    def class_index(self) -> int:
        return int(self.classes[0])

    def dequantized(self, index: int) -> np.ndarray:
        return fx.dequantize_array(self.outputs[index], self.formats[index].frac_bits)


def layer_accumulate(spec: NetworkSpec, index: int, x: np.ndarray, x_frac: int,
                     qparams: dict[int, QuantizedLayer], width: int) -> tuple[np.ndarray, int]:
    """Run one layer's unit up to (not including) its precision adjustment.

    Returns the pre-adjustment values and their fraction bits.
    """
    layer = spec.layers[index]
    kind = layer.kind
    acc_bits = fx.accumulator_bits(width)
    if kind is LayerKind.CONV2D:
        q = qparams[index]
        return conv_accumulate(x, q.weight_raws, q.bias_acc, acc_bits), q.acc_frac
    if kind is LayerKind.DENSE:
        q = qparams[index]
        acc = dense_accumulate(x.reshape(len(x), -1), q.weight_raws, q.bias_acc, acc_bits)
        return acc.reshape(len(x), -1, 1, 1), q.acc_frac
    if kind is LayerKind.RELU:
        return relu_fixed(x), x_frac
    if kind is LayerKind.MAXPOOL:
        return maxpool_fixed(x, layer.pool_size), x_frac
    if kind is LayerKind.FLATTEN:
        return x.reshape(len(x), -1, 1, 1), x_frac
    raise ValueError(f"unsupported layer kind {kind}")


def quantize_inputs(images, plan: QPlan, counter: SaturationCounter | None = None) -> np.ndarray:
    return fx.quantize_array(images, plan.input_format, counter)


def forward_fixed_batch(spec: NetworkSpec, weights: WeightBundle, plan: QPlan, images,
                        qparams: dict[int, QuantizedLayer] | None = None) -> FixedTrace:
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != spec.input_shape.array_shape:
        raise ShapeError(f"input shape {images.shape[1:]} does not match network input")
    if qparams is None:
        qparams = quantize_params(spec, weights, plan)
    in_counter = SaturationCounter()
    x = quantize_inputs(images, plan, in_counter)
    frac = plan.input_frac
    outputs, formats, sats = [], [], []
    for i in range(len(spec.layers)):
        acc, acc_frac = layer_accumulate(spec, i, x, frac, qparams, plan.width)
        out_q = plan.activation_format(i)
        counter = SaturationCounter()
        x = fx.requantize_array(acc, acc_frac, out_q, counter)
        frac = out_q.frac_bits
        outputs.append(x)
        formats.append(out_q)
        sats.append(counter.count)
    return FixedTrace(outputs, formats, argmax_classes(outputs[-1]), sats, in_counter.count)


def forward_fixed(spec: NetworkSpec, weights: WeightBundle, plan: QPlan, image) -> FixedTrace:
    image = np.asarray(image, dtype=np.float64)
    t = forward_fixed_batch(spec, weights, plan, image[None])
    return FixedTrace([o[0] for o in t.outputs], t.formats, t.classes, t.saturations,
                      t.input_saturations)


def export_fixed_trace(trace: FixedTrace, plan: QPlan, out) -> None:
    """Write ``fixed_layer{l}.bin`` (little-endian two's complement) and ``qplan.json``."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    dtype = "<i2" if plan.width <= 16 else "<i4"
    for l, raws in enumerate(trace.outputs):
        (root / f"fixed_layer{l}.bin").write_bytes(np.asarray(raws).astype(dtype).tobytes())
    plan.save(root / "qplan.json")
