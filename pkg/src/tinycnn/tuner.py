"""Per-layer fixed-point format search against float references.

Passes run front to back. At each layer every fraction width 0..W-1 is tried
with the rest of the plan held fixed, and the one giving the lowest NMSE at
that layer's own output is kept (ties go to the finer format). A layer's output
depends only on the layers before it, so each candidate is scored from the
cached pre-adjustment accumulators instead of re-running the whole network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fixedpoint as fx
from .datapath import (
    FixedTrace,
    QPlan,
    forward_fixed_batch,
    layer_accumulate,
    mid_split_plan,
    quantize_inputs,
    quantize_layer,
    weight_fracs,
)
from .model import NetworkSpec, WeightBundle
from .reference import VerificationSet, classification_agreement

NMSE_EPS = 1e-12
DEFAULT_MAX_PASSES = 5


def layer_error(fixed_out, float_ref) -> float:
    """Normalized squared error of a dequantized tensor set against its reference."""
    fixed_out = np.asarray(fixed_out, dtype=np.float64)
    float_ref = np.asarray(float_ref, dtype=np.float64)
    if fixed_out.shape != float_ref.shape:
        raise ValueError(f"shape mismatch: {fixed_out.shape} vs {float_ref.shape}")
    num = float(np.sum((fixed_out - float_ref) ** 2))
    den = float(np.sum(float_ref**2))
    return num / max(den, NMSE_EPS)


@dataclass
class TuneReport:
    plan: QPlan
    layer_nmse: list[float]
    final_nmse: float
    agreement: float
    saturations: list[int]
    # one entry per pass: {"pass", "changed", "layer_nmse", "final_nmse"}; pass 0 is the start plan
    passes: list[dict] = field(default_factory=list)
    converged: bool = True

    @property
    def pass_count(self) -> int:
        return max(0, len(self.passes) - 1)

    def to_dict(self) -> dict:
        return {
            "qplan": self.plan.to_dict(),
            "pass_count": self.pass_count,
            "converged": self.converged,
            "final_nmse": self.final_nmse,
            "layer_nmse": self.layer_nmse,
            "agreement": self.agreement,
            "saturations": self.saturations,
            "passes": self.passes,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _score(spec: NetworkSpec, vset: VerificationSet, trace: FixedTrace) -> tuple[list[float], float]:
    errs = [layer_error(trace.dequantized(l), vset.references[l]) for l in range(len(spec.layers))]
    return errs, errs[-1]


def evaluate_plan(spec: NetworkSpec, weights: WeightBundle, vset: VerificationSet,
                  plan: QPlan) -> TuneReport:
    if len(vset) == 0:
        raise ValueError("verification set must be non-empty")
    trace = forward_fixed_batch(spec, weights, plan, vset.inputs)
    errs, final = _score(spec, vset, trace)
    return TuneReport(
        plan=plan,
        layer_nmse=errs,
        final_nmse=final,
        agreement=classification_agreement(trace.classes, vset.classes),
        saturations=list(trace.saturations),
        passes=[{"pass": 0, "changed": 0, "layer_nmse": errs, "final_nmse": final}],
    )


def start_plan(spec: NetworkSpec, weights: WeightBundle, vset: VerificationSet, width: int) -> QPlan:
    """Mid-split activations, input format sized to the verification inputs."""
    base = mid_split_plan(spec, weights, width)
    input_frac = fx.choose_format(vset.inputs, width).frac_bits
    return QPlan(width, input_frac, base.activation_frac, weight_fracs(spec, weights, width))


def best_frac(acc: np.ndarray, acc_frac: int, ref: np.ndarray, width: int) -> tuple[int, float]:
    best_f, best_err = width - 1, np.inf
    for f in range(width - 1, -1, -1):
        out = fx.requantize_array(acc, acc_frac, fx.QFormat(width, f))
        err = layer_error(fx.dequantize_array(out, f), ref)
        if err < best_err:
            best_f, best_err = f, err
    return best_f, best_err


def tune_pass(spec: NetworkSpec, weights: WeightBundle, vset: VerificationSet,
              plan: QPlan) -> tuple[QPlan, int]:
    x = quantize_inputs(vset.inputs, plan)
    frac = plan.input_frac
    changed = 0
    for l, layer in enumerate(spec.layers):
        qparams = {}
        if layer.has_params:
            qparams[l] = quantize_layer(weights[l].weights, weights[l].bias, plan, l)
        acc, acc_frac = layer_accumulate(spec, l, x, frac, qparams, plan.width)
        f, _ = best_frac(acc, acc_frac, vset.references[l], plan.width)
        if f != plan.activation_frac[l]:
            plan = plan.with_activation(l, f)
            changed += 1
        x = fx.requantize_array(acc, acc_frac, plan.activation_format(l))
        frac = f
    return plan, changed


def tune(spec: NetworkSpec, weights: WeightBundle, vset: VerificationSet,
         width: int = fx.DEFAULT_WIDTH, max_passes: int = DEFAULT_MAX_PASSES,
         initial: QPlan | None = None) -> TuneReport:
    if len(vset) == 0:
        raise ValueError("verification set must be non-empty")
    if max_passes < 1:
        raise ValueError("max_passes must be >= 1")
    plan = initial or start_plan(spec, weights, vset, width)
    report = evaluate_plan(spec, weights, vset, plan)
    passes = report.passes
    converged = False
    for k in range(1, max_passes + 1):
        plan, changed = tune_pass(spec, weights, vset, plan)
        report = evaluate_plan(spec, weights, vset, plan)
        passes.append({"pass": k, "changed": changed,
                       "layer_nmse": report.layer_nmse, "final_nmse": report.final_nmse})
        if changed == 0:
            converged = True
            break
    report.passes = passes
    report.converged = converged
    return report
