"""Network manifests, shape inference, parameter counting and weight bundles."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ManifestError(ValueError):
    """Malformed manifest. ``layer_index`` is None for document-level errors."""

    def __init__(self, message: str, layer_index: int | None = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


class ShapeError(ValueError):
    pass


class WeightError(ValueError):
    pass


class LayerKind(str, enum.Enum):
    CONV2D = "conv2d"
    RELU = "relu"
    MAXPOOL = "maxpool"
    FLATTEN = "flatten"
    DENSE = "dense"


SPATIAL_KINDS = (LayerKind.CONV2D, LayerKind.MAXPOOL)
PARAM_KINDS = (LayerKind.CONV2D, LayerKind.DENSE)


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ShapeError(f"tensor dimensions must be >= 1, got {self}")

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    @property
    def array_shape(self) -> tuple[int, int, int]:
        """Storage layout: channel-major ``[ch][h][w]``."""
        return (self.channels, self.height, self.width)

    def __str__(self):
        return f"{self.height}x{self.width}x{self.channels}"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    out_channels: int = 0
    kernel: int = 3
    pool_size: int = 0
    units: int = 0
    has_bias: bool = True

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS

    def describe(self) -> str:
        if self.kind is LayerKind.CONV2D:
            return f"conv{self.kernel}x{self.kernel}/{self.out_channels}"
        if self.kind is LayerKind.MAXPOOL:
            return f"maxpool{self.pool_size}"
        if self.kind is LayerKind.DENSE:
            return f"dense/{self.units}"
        return self.kind.value


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: TensorShape
    layers: tuple[LayerSpec, ...]
    # (in, out) per layer; empty until infer_shapes has run
    per_layer_shapes: tuple[tuple[TensorShape, TensorShape], ...] = ()

    @property
    def shapes_inferred(self) -> bool:
        return len(self.per_layer_shapes) == len(self.layers)

    def in_shape(self, index: int) -> TensorShape:
        self._require_shapes()
        return self.per_layer_shapes[index][0]

    def out_shape(self, index: int) -> TensorShape:
        self._require_shapes()
        return self.per_layer_shapes[index][1]

    @property
    def output_shape(self) -> TensorShape:
        return self.out_shape(len(self.layers) - 1)

    def param_layer_indices(self) -> list[int]:
        """Network indices of conv/dense layers, in order (bundle file numbering)."""
        return [i for i, layer in enumerate(self.layers) if layer.has_params]

    def conv_layer_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind is LayerKind.CONV2D]

    def _require_shapes(self):
        if not self.shapes_inferred:
            raise ShapeError("shapes not inferred; call infer_shapes first")


# ---------------------------------------------------------------- manifests


def _get_int(doc: dict, key: str, index: int | None, default=None) -> int:
    value = doc.get(key, default)
    if value is None:
        raise ManifestError(f"missing field {key!r}", index)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ManifestError(f"field {key!r} must be an integer, got {value!r}", index)
    return value


def _parse_layer(doc, index: int) -> LayerSpec:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ManifestError("layer entry must be an object with a 'type'", index)
    try:
        kind = LayerKind(doc["type"])
    except ValueError:
        raise ManifestError(f"unknown layer kind {doc['type']!r}", index) from None
    bias = doc.get("bias", True)
    if not isinstance(bias, bool):
        raise ManifestError("field 'bias' must be a boolean", index)

    if kind is LayerKind.CONV2D:
        out_ch = _get_int(doc, "out_channels", index)
        kernel = _get_int(doc, "kernel", index, default=3)
        padding = doc.get("padding", "same")
        if padding != "same":
            raise ManifestError(f"unsupported padding {padding!r}", index)
        if out_ch < 1:
            raise ManifestError("out_channels must be >= 1", index)
        if kernel < 1 or kernel % 2 == 0:
            raise ManifestError(f"kernel must be odd and >= 1, got {kernel}", index)
        return LayerSpec(kind, out_channels=out_ch, kernel=kernel, has_bias=bias)
    if kind is LayerKind.MAXPOOL:
        size = _get_int(doc, "size", index)
        if size < 1:
            raise ManifestError(f"maxpool size must be >= 1, got {size}", index)
        return LayerSpec(kind, pool_size=size)
    if kind is LayerKind.DENSE:
        units = _get_int(doc, "units", index)
        if units < 1:
            raise ManifestError("units must be >= 1", index)
        return LayerSpec(kind, units=units, has_bias=bias)
    return LayerSpec(kind)


def _check_layer_order(layers: list[LayerSpec]):
    flattens = [i for i, layer in enumerate(layers) if layer.kind is LayerKind.FLATTEN]
    denses = [i for i, layer in enumerate(layers) if layer.kind is LayerKind.DENSE]
    if len(flattens) > 1:
        raise ManifestError("more than one flatten layer", flattens[1])
    if denses and not flattens:
        raise ManifestError("dense layer requires a preceding flatten", denses[0])
    if flattens:
        f = flattens[0]
        for i in range(f + 1, len(layers)):
            if layers[i].kind in SPATIAL_KINDS:
                raise ManifestError("flatten misplaced: spatial layer follows it", f)
        if denses and denses[0] < f:
            raise ManifestError("flatten misplaced: dense layer precedes it", f)


def manifest_from_dict(doc) -> NetworkSpec:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    name = doc.get("name", "network")
    if not isinstance(name, str):
        raise ManifestError("'name' must be a string")
    inp = doc.get("input")
    if not isinstance(inp, dict):
        raise ManifestError("missing 'input' object")
    dims = [_get_int(inp, k, None) for k in ("height", "width", "channels")]
    if min(dims) < 1:
        raise ManifestError(f"input dimensions must be >= 1, got {dims}")
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list):
        raise ManifestError("missing 'layers' list")
    if not raw_layers:
        raise ManifestError("network has no layers")
    layers = [_parse_layer(entry, i) for i, entry in enumerate(raw_layers)]
    _check_layer_order(layers)
    return NetworkSpec(name, TensorShape(*dims), tuple(layers))


def parse_manifest(text: str) -> NetworkSpec:
    """Parse a JSON manifest. Shapes are not inferred."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from None
    return manifest_from_dict(doc)


def manifest_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry: dict = {"type": layer.kind.value}
        if layer.kind is LayerKind.CONV2D:
            entry.update(out_channels=layer.out_channels, kernel=layer.kernel, bias=layer.has_bias)
        elif layer.kind is LayerKind.MAXPOOL:
            entry["size"] = layer.pool_size
        elif layer.kind is LayerKind.DENSE:
            entry.update(units=layer.units, bias=layer.has_bias)
        layers.append(entry)
    s = spec.input_shape
    return {
        "name": spec.name,
        "input": {"height": s.height, "width": s.width, "channels": s.channels},
        "layers": layers,
    }


def load_manifest(path) -> NetworkSpec:
    return infer_shapes(parse_manifest(Path(path).read_text()))


def example_manifest_path() -> Path:
    return Path(__file__).parent / "data" / "cifar_gray.json"


def example_network() -> NetworkSpec:
    """The 17-layer grayscale CIFAR-10 network shipped with the package."""
    return load_manifest(example_manifest_path())


# ---------------------------------------------------------------- shapes


def _layer_out_shape(layer: LayerSpec, shape: TensorShape, index: int) -> TensorShape:
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        return TensorShape(shape.height, shape.width, layer.out_channels)
    if kind is LayerKind.RELU:
        return shape
    if kind is LayerKind.MAXPOOL:
        m = layer.pool_size
        if shape.height % m or shape.width % m:
            raise ShapeError(
                f"layer {index}: pool size {m} does not divide input {shape.height}x{shape.width}"
            )
        return TensorShape(shape.height // m, shape.width // m, shape.channels)
    if kind is LayerKind.FLATTEN:
        return TensorShape(1, 1, shape.size)
    if kind is LayerKind.DENSE:
        return TensorShape(1, 1, layer.units)
    raise ShapeError(f"layer {index}: unknown kind {kind}")


def infer_shapes(spec: NetworkSpec) -> NetworkSpec:
    shapes = []
    current = spec.input_shape
    flattened = False
    for i, layer in enumerate(spec.layers):
        if layer.kind is LayerKind.DENSE and not flattened:
            raise ShapeError(f"layer {i}: dense layer encountered before flatten")
        if layer.kind is LayerKind.FLATTEN:
            flattened = True
        out = _layer_out_shape(layer, current, i)
        shapes.append((current, out))
        current = out
    return replace(spec, per_layer_shapes=tuple(shapes))


# ---------------------------------------------------------------- parameters


def weight_count(layer: LayerSpec, in_shape: TensorShape) -> int:
    if layer.kind is LayerKind.CONV2D:
        return layer.out_channels * in_shape.channels * layer.kernel**2
    if layer.kind is LayerKind.DENSE:
        return layer.units * in_shape.size
    return 0


def bias_count(layer: LayerSpec) -> int:
    if not layer.has_bias:
        return 0
    if layer.kind is LayerKind.CONV2D:
        return layer.out_channels
    if layer.kind is LayerKind.DENSE:
        return layer.units
    return 0


def param_count(layer: LayerSpec, in_shape: TensorShape) -> int:
    return weight_count(layer, in_shape) + bias_count(layer)


def total_params(spec: NetworkSpec) -> int:
    return sum(param_count(layer, spec.in_shape(i)) for i, layer in enumerate(spec.layers))


def weight_array_shape(layer: LayerSpec, in_shape: TensorShape) -> tuple[int, ...]:
    if layer.kind is LayerKind.CONV2D:
        return (layer.out_channels, in_shape.channels, layer.kernel, layer.kernel)
    if layer.kind is LayerKind.DENSE:
        return (layer.units, in_shape.size)
    raise ValueError(f"{layer.kind.value} layer has no weights")


# ---------------------------------------------------------------- weights


@dataclass(frozen=True)
class LayerWeights:
    layer_index: int
    weights: np.ndarray
    bias: np.ndarray | None

    @property
    def size(self) -> int:
        return self.weights.size + (0 if self.bias is None else self.bias.size)


@dataclass(frozen=True)
class WeightBundle:
    # keyed by network layer index; conv [out][in][kh][kw], dense [out][in]
    layers: dict[int, LayerWeights] = field(default_factory=dict)

    def __getitem__(self, layer_index: int) -> LayerWeights:
        return self.layers[layer_index]

    @property
    def total_size(self) -> int:
        return sum(lw.size for lw in self.layers.values())


def _read_f32(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) % 4:
        raise WeightError(f"{path.name}: size {len(data)} bytes is not a multiple of 4")
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def load_weights(path, spec: NetworkSpec) -> WeightBundle:
    root = Path(path)
    layers = {}
    for p, index in enumerate(spec.param_layer_indices()):
        layer = spec.layers[index]
        in_shape = spec.in_shape(index)
        n_w, n_b = weight_count(layer, in_shape), bias_count(layer)
        w_path, b_path = root / f"layer{p}_w.bin", root / f"layer{p}_b.bin"
        if not w_path.exists():
            raise WeightError(f"missing weight file {w_path}")
        if n_b and not b_path.exists():
            raise WeightError(f"missing bias file {b_path}")
        w = _read_f32(w_path)
        b = _read_f32(b_path) if b_path.exists() else np.zeros(0)
        if w.size != n_w or b.size != n_b:
            raise WeightError(
                f"layer{p} ({layer.describe()}): expected {n_w} weights + {n_b} biases, "
                f"found {w.size} + {b.size}"
            )
        for name, arr in (("weights", w), ("biases", b)):
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise WeightError(
                    f"layer{p} ({layer.describe()}): non-finite value in {name} at flat index {bad[0]}"
                )
        layers[index] = LayerWeights(
            index, w.reshape(weight_array_shape(layer, in_shape)), b if n_b else None
        )
    return WeightBundle(layers)


def save_weights(bundle: WeightBundle, spec: NetworkSpec, path) -> None:
    """Write a bundle directory: manifest copy plus little-endian float32 files."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps(manifest_dict(spec), indent=2) + "\n")
    for p, index in enumerate(spec.param_layer_indices()):
        lw = bundle[index]
        (root / f"layer{p}_w.bin").write_bytes(lw.weights.astype("<f4").tobytes())
        if lw.bias is not None:
            (root / f"layer{p}_b.bin").write_bytes(lw.bias.astype("<f4").tobytes())


def random_weights(spec: NetworkSpec, seed: int = 0, scale: float = 0.5) -> WeightBundle:
    """Uniform weights in [-scale, scale], rounded through float32 like a saved bundle."""
    rng = np.random.default_rng(seed)
    layers = {}
    for index in spec.param_layer_indices():
        layer = spec.layers[index]
        shape = weight_array_shape(layer, spec.in_shape(index))
        w = rng.uniform(-scale, scale, size=shape).astype(np.float32).astype(np.float64)
        b = None
        if layer.has_bias:
            n = bias_count(layer)
            b = rng.uniform(-scale, scale, size=n).astype(np.float32).astype(np.float64)
        layers[index] = LayerWeights(index, w, b)
    return WeightBundle(layers)


def load_model(path) -> tuple[NetworkSpec, WeightBundle]:
    """Load ``manifest.json`` and the weight files from a bundle directory."""
    root = Path(path)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise ManifestError(f"missing {manifest}")
    spec = load_manifest(manifest)
    return spec, load_weights(root, spec)


def pixel_count(shape: TensorShape) -> int:
    return shape.height * shape.width


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "LayerKind", "LayerSpec", "TensorShape", "NetworkSpec", "LayerWeights", "WeightBundle",
    "ManifestError", "ShapeError", "WeightError", "parse_manifest", "manifest_from_dict",
    "manifest_dict", "load_manifest", "example_network", "example_manifest_path",
    "infer_shapes", "param_count", "weight_count", "bias_count", "total_params",
    "weight_array_shape", "load_weights", "save_weights", "random_weights", "load_model",
    "pixel_count", "ceil_div",
]
