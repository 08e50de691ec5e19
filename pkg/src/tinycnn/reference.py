"""Float reference engine and verification-data generation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import LayerKind, NetworkSpec, ShapeError, WeightBundle

DEFAULT_VERIFY_COUNT = 32


@dataclass(frozen=True)
class LayerTrace:
    outputs: list  # one [ch][h][w] array per network layer
    class_index: int


@dataclass(frozen=True)
class VerificationSet:
    inputs: np.ndarray       # [N][ch][h][w]
    references: list         # per layer: [N][ch][h][w]
    classes: np.ndarray      # [N]

    def __post_init__(self):
        if len(self.inputs) < 1:
            raise ValueError("verification set must be non-empty")
        if any(len(r) != len(self.inputs) for r in self.references):
            raise ValueError("every reference must hold one entry per input")

    def __len__(self):
        return len(self.inputs)

    def trace(self, i: int) -> LayerTrace:
        return LayerTrace([r[i] for r in self.references], int(self.classes[i]))


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded patches of ``x`` [N][C][H][W] -> [N][H][W][C*k*k] (ch outer, kh, kw inner)."""
    p = (k - 1) // 2
    n, c, h, w = x.shape
    padded = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    padded[:, :, p:p + h, p:p + w] = x
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # [N][C][H][W][k][k]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * k * k)


def maxpool(x: np.ndarray, m: int) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // m, m, w // m, m).max(axis=(3, 5))


def argmax_classes(final: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: lowest index wins ties
    return np.argmax(final.reshape(len(final), -1), axis=1)


def _check_input(spec: NetworkSpec, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    want = spec.input_shape.array_shape
    if images.ndim != 4 or images.shape[1:] != want:
        raise ShapeError(f"input shape {images.shape[1:]} does not match network input {want}")
    return images


def forward_float_batch(spec: NetworkSpec, weights: WeightBundle, images) -> list[np.ndarray]:
    """Per-layer outputs for a batch ``[N][ch][h][w]``, computed in float64."""
    x = _check_input(spec, images)
    outputs = []
    n = len(x)
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind is LayerKind.CONV2D:
            lw = weights[i]
            k = layer.kernel
            cols = im2col(x, k)
            y = cols @ lw.weights.reshape(layer.out_channels, -1).T
            if lw.bias is not None:
                y = y + lw.bias
            x = y.transpose(0, 3, 1, 2)
        elif kind is LayerKind.RELU:
            x = np.maximum(x, 0.0)
        elif kind is LayerKind.MAXPOOL:
            x = maxpool(x, layer.pool_size)
        elif kind is LayerKind.FLATTEN:
            x = x.reshape(n, -1, 1, 1)
        elif kind is LayerKind.DENSE:
            lw = weights[i]
            y = x.reshape(n, -1) @ lw.weights.T
            if lw.bias is not None:
                y = y + lw.bias
            x = y.reshape(n, -1, 1, 1)
        x = np.ascontiguousarray(x)
        outputs.append(x)
    return outputs


def forward_float(spec: NetworkSpec, weights: WeightBundle, image) -> LayerTrace:
    image = np.asarray(image, dtype=np.float64)
    outs = forward_float_batch(spec, weights, image[None])
    return LayerTrace([o[0] for o in outs], int(argmax_classes(outs[-1])[0]))


def classification_agreement(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("cannot compare empty classification lists")
    return float(np.count_nonzero(a == b)) / a.size


def top1_margin(final: np.ndarray) -> np.ndarray:
    """Gap between the largest and second-largest score, per input."""
    flat = np.sort(final.reshape(len(final), -1), axis=1)
    if flat.shape[1] < 2:
        return np.full(len(flat), np.inf)
    return flat[:, -1] - flat[:, -2]


def normalize_pixels(pixels) -> np.ndarray:
    """8-bit pixel values to [0, 1)."""
    return np.asarray(pixels, dtype=np.float64) / 256.0


def random_inputs(spec: NetworkSpec, count: int, seed: int = 0) -> np.ndarray:
    """Seeded uniform [0, 1) images, rounded through float32 like a saved set."""
    rng = np.random.default_rng(seed)
    shape = (count, *spec.input_shape.array_shape)
    return rng.random(shape).astype(np.float32).astype(np.float64)


def build_verification_set(spec: NetworkSpec, weights: WeightBundle, images) -> VerificationSet:
    images = np.asarray(images, dtype=np.float32).astype(np.float64)
    if len(images) == 0:
        raise ValueError("verification set must be non-empty")
    outs = forward_float_batch(spec, weights, images)
    classes = argmax_classes(outs[-1])
    # references are persisted as float32; keep the in-memory copy identical
    refs = [o.astype(np.float32).astype(np.float64) for o in outs]
    return VerificationSet(images, refs, classes)


def make_verification_set(spec: NetworkSpec, weights: WeightBundle, images, out) -> VerificationSet:
    if len(images) == 0:
        raise ValueError("verification set must be non-empty")
    vset = build_verification_set(spec, weights, images)
    save_verification_set(vset, out)
    return vset


def save_verification_set(vset: VerificationSet, out) -> None:
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "inputs.bin").write_bytes(vset.inputs.astype("<f4").tobytes())
    files = {"inputs.bin": list(vset.inputs.shape[1:])}
    for l, ref in enumerate(vset.references):
        name = f"ref_layer{l}.bin"
        (root / name).write_bytes(ref.astype("<f4").tobytes())
        files[name] = list(ref.shape[1:])
    manifest = {"count": len(vset), "files": files, "classes": [int(c) for c in vset.classes]}
    (root / "verify_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_verification_set(path, spec: NetworkSpec | None = None) -> VerificationSet:
    root = Path(path)
    manifest = json.loads((root / "verify_manifest.json").read_text())
    n = manifest["count"]
    files = manifest["files"]

    def read(name):
        shape = (n, *files[name])
        data = np.frombuffer((root / name).read_bytes(), dtype="<f4")
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{name}: expected {int(np.prod(shape))} floats, found {data.size}")
        return data.reshape(shape).astype(np.float64)

    inputs = read("inputs.bin")
    n_layers = sum(1 for k in files if k.startswith("ref_layer"))
    refs = [read(f"ref_layer{l}.bin") for l in range(n_layers)]
    if spec is not None:
        if inputs.shape[1:] != spec.input_shape.array_shape or n_layers != len(spec.layers):
            raise ShapeError("verification set does not match the network")
        for l, ref in enumerate(refs):
            if ref.shape[1:] != spec.out_shape(l).array_shape:
                raise ShapeError(f"ref_layer{l}.bin shape {ref.shape[1:]} does not match network")
    classes = np.asarray(manifest.get("classes") or argmax_classes(refs[-1]))
    return VerificationSet(inputs, refs, classes)
