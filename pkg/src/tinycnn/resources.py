"""Device budgets, hardware configuration and the BRAM/DSP fit check."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import LayerKind, NetworkSpec, ceil_div, param_count

BRAM36_BITS = 36864
BRAM18_BITS = BRAM36_BITS // 2
DEVICE_DIR_ENV = "TINYCNN_DEVICE_DIR"


class ConvMode(str, enum.Enum):
    SHARED = "shared"
    EXCLUSIVE = "exclusive"


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    bram36_count: int
    dsp_count: int
    bram36_bits: int = BRAM36_BITS
    default_clock_mhz: float = 100.0

    def __post_init__(self):
        if min(self.bram36_count, self.dsp_count, self.bram36_bits) < 1:
            raise ValueError(f"device {self.name}: resource counts must be >= 1")

    @property
    def bram_bits(self) -> int:
        return self.bram36_count * self.bram36_bits

    @classmethod
    def from_dict(cls, doc: dict) -> "DeviceSpec":
        return cls(
            name=str(doc["name"]),
            bram36_count=int(doc["bram36"]),
            dsp_count=int(doc["dsp"]),
            bram36_bits=int(doc.get("bram36_bits", BRAM36_BITS)),
            default_clock_mhz=float(doc.get("clock_mhz", 100.0)),
        )

    def to_dict(self) -> dict:
        return {"name": self.name, "bram36": self.bram36_count, "bram36_bits": self.bram36_bits,
                "dsp": self.dsp_count, "clock_mhz": self.default_clock_mhz}


def builtin_device_dir() -> Path:
    return Path(__file__).parent / "data"


def find_device(name_or_path: str) -> Path:
    """Resolve a device spec: an existing path, else ``<name>.json`` on the search path."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    dirs = [Path(d) for d in os.environ.get(DEVICE_DIR_ENV, "").split(os.pathsep) if d]
    dirs.append(builtin_device_dir())
    for d in dirs:
        for cand in (d / name_or_path, d / f"{name_or_path}.json"):
            if cand.is_file():
                return cand
    raise FileNotFoundError(f"device spec {name_or_path!r} not found")


def load_device(name_or_path: str = "xc7z020") -> DeviceSpec:
    return DeviceSpec.from_dict(json.loads(find_device(name_or_path).read_text()))


@dataclass(frozen=True)
class HardwareConfig:
    conv_mode: ConvMode = ConvMode.SHARED
    dsp_per_conv: tuple[int, ...] = (16,)   # shared: one value; exclusive: one per conv layer (or one, broadcast)
    dsp_dense: int = 16
    clock_mhz: float = 100.0
    double_buffer: bool = False
    row_overhead: int = 4          # cycles per (row, in_ch, out_ch) handoff
    arbitration_cycles: int = 16   # per conv-layer grant in shared mode

    def __post_init__(self):
        object.__setattr__(self, "conv_mode", ConvMode(self.conv_mode))
        object.__setattr__(self, "dsp_per_conv", tuple(int(d) for d in self.dsp_per_conv))
        if not self.dsp_per_conv or min(self.dsp_per_conv) < 1:
            raise ValueError("DSP allocations must be >= 1")
        if self.conv_mode is ConvMode.SHARED and len(self.dsp_per_conv) != 1:
            raise ValueError("shared mode takes a single DSP allocation")
        if self.dsp_dense < 1:
            raise ValueError("dsp_dense must be >= 1")
        if self.clock_mhz <= 0:
            raise ValueError("clock_mhz must be positive")
        if self.row_overhead < 0 or self.arbitration_cycles < 0:
            raise ValueError("overhead constants must be >= 0")

    def conv_dsps(self, n_conv: int) -> list[int]:
        """DSPs per conv layer, in conv order."""
        if self.conv_mode is ConvMode.SHARED or len(self.dsp_per_conv) == 1:
            return [self.dsp_per_conv[0]] * n_conv
        if len(self.dsp_per_conv) != n_conv:
            raise ValueError(f"exclusive mode needs 1 or {n_conv} DSP allocations, "
                             f"got {len(self.dsp_per_conv)}")
        return list(self.dsp_per_conv)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_mode"] = self.conv_mode.value
        d["dsp_per_conv"] = list(self.dsp_per_conv)
        return d


def conv_dsp_bound(spec: NetworkSpec, index: int) -> int:
    """Largest useful DSP count for a conv layer: the pixel count of the fmap it is fed."""
    s = spec.in_shape(index)
    return s.height * s.width


def dense_dsp_bound(spec: NetworkSpec, index: int) -> int:
    return spec.in_shape(index).size


def validate_config(spec: NetworkSpec, config: HardwareConfig) -> None:
    convs = spec.conv_layer_indices()
    dsps = config.conv_dsps(len(convs))
    if config.conv_mode is ConvMode.SHARED:
        if convs:
            bound = max(conv_dsp_bound(spec, i) for i in convs)
            if dsps[0] > bound:
                raise ValueError(f"shared conv unit: {dsps[0]} DSPs exceeds the largest fmap ({bound} px)")
    else:
        for i, d in zip(convs, dsps):
            bound = conv_dsp_bound(spec, i)
            if d > bound:
                raise ValueError(f"layer {i}: {d} DSPs exceeds its {bound}-pixel input fmap")
    dense = [i for i, l in enumerate(spec.layers) if l.kind is LayerKind.DENSE]
    if dense and config.dsp_dense > max(dense_dsp_bound(spec, i) for i in dense):
        raise ValueError(f"dense unit: {config.dsp_dense} DSPs exceeds its input length")


# ---------------------------------------------------------------- memory


@dataclass(frozen=True)
class MemoryEntry:
    name: str
    kind: str          # "weight_rom" or "fmap_ram"
    layer_index: int
    depth: int         # words
    bits: int

    @property
    def half_blocks(self) -> int:
        return ceil_div(self.bits, BRAM18_BITS)


def memory_footprint(spec: NetworkSpec, width: int, config: HardwareConfig | None = None) -> list[MemoryEntry]:
    """One ROM per parameterized layer, one input fmap RAM per conv/dense layer."""
    double = 2 if (config is not None and config.double_buffer) else 1
    entries = []
    for i, layer in enumerate(spec.layers):
        if not layer.has_params:
            continue
        in_shape = spec.in_shape(i)
        n_params = param_count(layer, in_shape)
        entries.append(MemoryEntry(f"rom_l{i}", "weight_rom", i, n_params, n_params * width))
        depth = in_shape.size * double
        entries.append(MemoryEntry(f"fmap_l{i}", "fmap_ram", i, depth, depth * width))
    return entries


@dataclass
class FitResult:
    fits: bool
    weight_bits: int
    fmap_bits: int
    half_blocks_needed: int
    half_blocks_available: int
    dsp_needed: int
    dsp_available: int
    breakdown: list[MemoryEntry] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)   # binding resources when it does not fit

    @property
    def total_bram_blocks_needed(self) -> float:
        """BRAM36 equivalents at half-block granularity."""
        return self.half_blocks_needed / 2

    @property
    def total_bits(self) -> int:
        return self.weight_bits + self.fmap_bits

    def to_dict(self) -> dict:
        return {
            "fits": self.fits,
            "reasons": self.reasons,
            "weight_bits": self.weight_bits,
            "fmap_bits": self.fmap_bits,
            "total_bits": self.total_bits,
            "bram36_needed": self.total_bram_blocks_needed,
            "bram18_needed": self.half_blocks_needed,
            "bram18_available": self.half_blocks_available,
            "dsp_needed": self.dsp_needed,
            "dsp_available": self.dsp_available,
            "breakdown": [
                {"name": e.name, "kind": e.kind, "layer": e.layer_index, "depth": e.depth,
                 "bits": e.bits, "bram18": e.half_blocks}
                for e in self.breakdown
            ],
        }


def dsp_needed(spec: NetworkSpec, config: HardwareConfig) -> int:
    n_conv = len(spec.conv_layer_indices())
    dsps = config.conv_dsps(n_conv)
    if n_conv == 0:
        conv = 0
    elif config.conv_mode is ConvMode.SHARED:
        conv = dsps[0]
    else:
        conv = sum(dsps)
    has_dense = any(l.kind is LayerKind.DENSE for l in spec.layers)
    return conv + (config.dsp_dense if has_dense else 0)


def check_fit(spec: NetworkSpec, device: DeviceSpec, width: int,
              config: HardwareConfig | None = None) -> FitResult:
    config = config or HardwareConfig()
    entries = memory_footprint(spec, width, config)
    weight_bits = sum(e.bits for e in entries if e.kind == "weight_rom")
    fmap_bits = sum(e.bits for e in entries if e.kind == "fmap_ram")
    half_blocks = sum(e.half_blocks for e in entries)
    available = 2 * device.bram36_count * device.bram36_bits // BRAM36_BITS
    dsps = dsp_needed(spec, config)
    reasons = []
    if half_blocks > available:
        reasons.append("BRAM")
    if dsps > device.dsp_count:
        reasons.append("DSP")
    return FitResult(
        fits=not reasons,
        weight_bits=weight_bits,
        fmap_bits=fmap_bits,
        half_blocks_needed=half_blocks,
        half_blocks_available=available,
        dsp_needed=dsps,
        dsp_available=device.dsp_count,
        breakdown=entries,
        reasons=reasons,
    )


class FitError(RuntimeError):
    def __init__(self, result: FitResult):
        self.result = result
        super().__init__(f"design does not fit the device: {', '.join(result.reasons)} exhausted")
