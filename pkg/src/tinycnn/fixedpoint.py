"""Signed fixed-point arithmetic: Q formats, rounding, saturation, MAC and requantize.

Rounding is half away from zero everywhere; overflow always saturates. Scalar
helpers operate on Python ints; the ``*_array`` variants operate on numpy int64
(or object, for accumulators wider than 63 bits) arrays with identical results.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

DEFAULT_WIDTH = 16
MIN_WIDTH, MAX_WIDTH = 4, 32
DSP_ACC_BITS = 48


class AccumulatorOverflow(ArithmeticError):
    pass


def accumulator_bits(width: int) -> int:
    """48 bits (the DSP48 path) unless the operand width needs more headroom."""
    return max(DSP_ACC_BITS, 2 * width + 16)


@dataclass(frozen=True)
class QFormat:
    width: int = DEFAULT_WIDTH
    frac_bits: int = DEFAULT_WIDTH - 1

    def __post_init__(self):
        if self.width < 2:
            raise ValueError(f"width must be >= 2, got {self.width}")
        if not 0 <= self.frac_bits <= self.width - 1:
            raise ValueError(f"frac_bits must be in [0, {self.width - 1}], got {self.frac_bits}")

    @property
    def int_bits(self) -> int:
        return self.width - 1 - self.frac_bits

    @property
    def min_raw(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def resolution(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def min_value(self) -> float:
        return math.ldexp(self.min_raw, -self.frac_bits)

    @property
    def max_value(self) -> float:
        return math.ldexp(self.max_raw, -self.frac_bits)

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"


@dataclass(frozen=True)
class FixedValue:
    raw: int
    format: QFormat

    def __post_init__(self):
        if not self.format.min_raw <= self.raw <= self.format.max_raw:
            raise ValueError(f"raw {self.raw} does not fit {self.format.width} bits")

    @property
    def value(self) -> float:
        return dequantize(self)


@dataclass(frozen=True)
class Accumulator:
    raw: int = 0
    frac_bits: int = 0
    width: int = DSP_ACC_BITS

    @property
    def value(self) -> float:
        return math.ldexp(self.raw, -self.frac_bits)


class SaturationCounter:
    """Thread-safe tally of saturated conversions."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        if n:
            with self._lock:
                self.count += int(n)


def _round_half_away(y: float) -> int:
    r = math.floor(abs(y) + 0.5)
    return -r if y < 0 else r


def _saturate(raw: int, q: QFormat, counter: SaturationCounter | None) -> int:
    if raw > q.max_raw:
        if counter is not None:
            counter.add(1)
        return q.max_raw
    if raw < q.min_raw:
        if counter is not None:
            counter.add(1)
        return q.min_raw
    return raw


def quantize(x: float, q: QFormat, counter: SaturationCounter | None = None) -> FixedValue:
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x}")
    return FixedValue(_saturate(_round_half_away(math.ldexp(x, q.frac_bits)), q, counter), q)


def dequantize(v: FixedValue) -> float:
    return math.ldexp(v.raw, -v.format.frac_bits)


def choose_format(values, width: int = DEFAULT_WIDTH) -> QFormat:
    """Smallest integer part that holds ``max|values|``; remaining bits go to the fraction."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot choose a format for an empty value list")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    peak = float(np.max(np.abs(arr)))
    int_bits = max(0, math.floor(math.log2(peak)) + 1) if peak >= 1 else 0
    int_bits = min(int_bits, width - 1)
    return QFormat(width, width - 1 - int_bits)


choose_weight_format = choose_format


def mac(acc: Accumulator, a: FixedValue, b: FixedValue) -> Accumulator:
    if acc.frac_bits != a.format.frac_bits + b.format.frac_bits:
        raise ValueError(
            f"accumulator frac {acc.frac_bits} != {a.format.frac_bits} + {b.format.frac_bits}"
        )
    raw = acc.raw + a.raw * b.raw
    if not -(1 << (acc.width - 1)) <= raw < (1 << (acc.width - 1)):
        raise AccumulatorOverflow(f"{acc.width}-bit accumulator overflow ({raw})")
    return Accumulator(raw, acc.frac_bits, acc.width)


def shift_round(raw: int, shift: int) -> int:
    """``raw * 2**-shift`` rounded half away from zero (left shift when negative)."""
    if shift <= 0:
        return raw << -shift
    half = 1 << (shift - 1)
    mag = (abs(raw) + half) >> shift
    return -mag if raw < 0 else mag


def requantize(acc: Accumulator, out_q: QFormat,
               counter: SaturationCounter | None = None) -> FixedValue:
    raw = shift_round(acc.raw, acc.frac_bits - out_q.frac_bits)
    return FixedValue(_saturate(raw, out_q, counter), out_q)


# ---------------------------------------------------------------- arrays


def quantize_array(x, q: QFormat, counter: SaturationCounter | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    y = np.ldexp(x, q.frac_bits)
    r = np.floor(np.abs(y) + 0.5)
    r = np.where(y < 0, -r, r)
    if counter is not None:
        counter.add(np.count_nonzero((r > q.max_raw) | (r < q.min_raw)))
    return np.clip(r, q.min_raw, q.max_raw).astype(np.int64)


def dequantize_array(raws, frac_bits: int) -> np.ndarray:
    return np.ldexp(np.asarray(raws).astype(np.float64), -frac_bits)


def shift_round_array(raws: np.ndarray, shift: int) -> np.ndarray:
    if shift == 0:
        return raws
    if shift < 0:
        if raws.dtype != object and _max_abs(raws).bit_length() - shift > 62:
            raws = raws.astype(object)
        return raws << -shift
    half = 1 << (shift - 1)
    mag = (np.abs(raws) + half) >> shift
    return np.where(raws < 0, -mag, mag)


def _max_abs(raws: np.ndarray) -> int:
    return int(np.max(np.abs(raws))) if raws.size else 0


def saturate_array(raws: np.ndarray, q: QFormat,
                   counter: SaturationCounter | None = None) -> np.ndarray:
    if counter is not None:
        counter.add(np.count_nonzero((raws > q.max_raw) | (raws < q.min_raw)))
    return np.minimum(np.maximum(raws, q.min_raw), q.max_raw).astype(np.int64)


def requantize_array(acc: np.ndarray, acc_frac: int, out_q: QFormat,
                     counter: SaturationCounter | None = None) -> np.ndarray:
    return saturate_array(shift_round_array(acc, acc_frac - out_q.frac_bits), out_q, counter)


def check_accumulator(acc: np.ndarray, acc_bits: int) -> None:
    # two's complement wraparound in intermediate sums is harmless if the final sum fits
    limit = 1 << (acc_bits - 1)
    if acc.size and (_max_abs(acc) >= limit):
        raise AccumulatorOverflow(f"{acc_bits}-bit accumulator overflow")


def int_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integer ``a @ b``.

    Uses float64 BLAS when every partial sum stays below 2**53 (exact there),
    int64 when below 2**62, and Python ints otherwise.
    """
    taps = a.shape[-1]
    bound = taps * max(_max_abs(a), 1) * max(_max_abs(b), 1)
    if bound < (1 << 53):
        return np.rint(a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)
    if bound < (1 << 62):
        return a.astype(np.int64) @ b.astype(np.int64)
    return a.astype(object) @ b.astype(object)


def add_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype != object and b.dtype != object:
        if max(_max_abs(a), _max_abs(b)) < (1 << 61):
            return a + b
    return a.astype(object) + b.astype(object)


def to_hex_word(raw: int, width: int) -> str:
    digits = -(-width // 4)
    if not -(1 << (width - 1)) <= raw < (1 << (width - 1)):
        raise ValueError(f"raw {raw} does not fit {width} bits")
    return format(raw & ((1 << width) - 1), f"0{digits}x")


def from_hex_word(text: str, width: int) -> int:
    value = int(text, 16)
    if value >> width:
        raise ValueError(f"word {text!r} wider than {width} bits")
    if value & (1 << (width - 1)):
        value -= 1 << width
    return value
