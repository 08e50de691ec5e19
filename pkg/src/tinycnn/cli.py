"""Command-line driver: check, verifset, tune, simulate, perf, emit, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fixedpoint as fx
from .datapath import QPlan, export_fixed_trace, forward_fixed_batch, mid_split_plan
from .model import (
    ManifestError,
    NetworkSpec,
    ShapeError,
    WeightError,
    example_network,
    load_manifest,
    load_model,
    random_weights,
    save_weights,
    total_params,
)
from .perf import format_speedup, total_cycles
from .reference import (
    classification_agreement,
    forward_float_batch,
    load_verification_set,
    make_verification_set,
    random_inputs,
)
from .resources import ConvMode, FitError, HardwareConfig, check_fit, load_device
from .tuner import evaluate_plan, layer_error, tune

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_SW_BASELINE_MS = 42.54
DEFAULT_VERIF_COUNT = 32


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _dsp_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad DSP list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("DSP counts must be >= 1")
    return vals


def _out(args) -> Path:
    return Path(args.out)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_spec(args) -> NetworkSpec:
    """Network structure only; ``--model`` may be a bundle directory or a manifest file."""
    if args.model is None:
        return example_network()
    p = Path(args.model)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise FileNotFoundError(f"model manifest {p} not found")
    return load_manifest(p)


def load_bundle(args):
    """Network plus weights. Without ``--model`` the shipped net gets seeded random weights."""
    if args.model is None:
        spec = example_network()
        return spec, random_weights(spec, args.seed)
    p = Path(args.model)
    if not p.is_dir():
        raise FileNotFoundError(f"model directory {p} not found")
    return load_model(p)


def hardware_config(args) -> HardwareConfig:
    return HardwareConfig(
        conv_mode=ConvMode(args.mode),
        dsp_per_conv=args.dsp,
        dsp_dense=args.dsp_dense,
        clock_mhz=args.clock_mhz,
        double_buffer=args.double_buffer,
    )


def _verif_dir(args) -> Path:
    return Path(args.verif) if args.verif else _out(args) / "verif"


def _qplan_path(args) -> Path:
    return Path(args.qplan) if args.qplan else _out(args) / "qplan.json"


def _load_qplan(args, spec: NetworkSpec) -> QPlan:
    path = _qplan_path(args)
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found (run `tinycnn tune` first)")
    plan = QPlan.load(path)
    plan.check(spec)
    return plan


# ---------------------------------------------------------------- commands


def cmd_check(args) -> int:
    spec = load_spec(args)
    device = load_device(args.device)
    fit = check_fit(spec, device, args.width, hardware_config(args))
    print(f"network {spec.name}: {len(spec.layers)} layers, {total_params(spec):,} parameters")
    print(f"device {device.name}: {device.bram36_count} BRAM36 ({device.bram_bits:,} bits), "
          f"{device.dsp_count} DSP")
    for e in fit.breakdown:
        print(f"  {e.name:<10} {e.kind:<10} depth {e.depth:>8,}  {e.bits:>11,} bits  {e.half_blocks:>4} BRAM18")
    print(f"weight bits: {fit.weight_bits:,}")
    print(f"fmap bits: {fit.fmap_bits:,}")
    print(f"BRAM18: {fit.half_blocks_needed} / {fit.half_blocks_available}")
    print(f"DSP: {fit.dsp_needed} / {fit.dsp_available}")
    _write_json(_out(args) / "fit_report.json", fit.to_dict())
    if fit.fits:
        print("fits: yes")
        return EXIT_OK
    print(f"fits: no (binding: {', '.join(fit.reasons)})")
    return EXIT_FAIL


def cmd_verifset(args) -> int:
    spec, weights = load_bundle(args)
    if args.images is not None:
        raw = np.fromfile(args.images, dtype="<f4")
        per = spec.input_shape.size
        if raw.size == 0 or raw.size % per:
            raise UsageError(f"{args.images}: {raw.size} floats is not a whole number of "
                             f"{spec.input_shape.array_shape} images")
        images = raw.reshape(-1, *spec.input_shape.array_shape)
    else:
        count = DEFAULT_VERIF_COUNT if args.random is None else args.random
        if count < 1:
            raise UsageError("--random needs at least one image")
        images = random_inputs(spec, count, args.seed)
    out = _verif_dir(args)
    vset = make_verification_set(spec, weights, images, out)
    print(f"wrote {len(vset)} images and {len(vset.references)} reference layers to {out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    spec, weights = load_bundle(args)
    vset = load_verification_set(_verif_dir(args), spec)
    report = tune(spec, weights, vset, args.width, args.max_passes)
    baseline = evaluate_plan(spec, weights, vset, mid_split_plan(spec, weights, args.width))
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    report.plan.save(out / "qplan.json")
    doc = report.to_dict()
    doc["mid_split_final_nmse"] = baseline.final_nmse
    doc["mid_split_agreement"] = baseline.agreement
    _write_json(out / "tune_report.json", doc)
    for l, layer in enumerate(spec.layers):
        f = report.plan.activation_frac[l]
        print(f"  layer {l:>2} {layer.describe():<24} Q{args.width - 1 - f}.{f}  nmse {report.layer_nmse[l]:.3e}")
    print(f"passes: {report.pass_count} (converged: {report.converged})")
    print(f"final nmse: {report.final_nmse:.6e}  (mid-split {baseline.final_nmse:.6e})")
    print(f"agreement: {report.agreement:.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec, weights = load_bundle(args)
    vset = load_verification_set(_verif_dir(args), spec)
    plan = _load_qplan(args, spec)
    floats = forward_float_batch(spec, weights, vset.inputs)
    fixed = forward_fixed_batch(spec, weights, plan, vset.inputs)
    float_agree = classification_agreement(np.argmax(floats[-1].reshape(len(vset), -1), axis=1),
                                           vset.classes)
    agree = classification_agreement(fixed.classes, vset.classes)
    nmse = [layer_error(fixed.dequantized(l), vset.references[l]) for l in range(len(spec.layers))]
    doc = {
        "images": len(vset),
        "width": plan.width,
        "float_agreement": float_agree,
        "fixed_agreement": agree,
        "layer_nmse": nmse,
        "final_nmse": nmse[-1],
        "saturations": list(fixed.saturations),
        "input_saturations": fixed.input_saturations,
    }
    out = _out(args)
    _write_json(out / "simulate_report.json", doc)
    if args.trace:
        export_fixed_trace(fixed, plan, out / "fixed_trace")
    for l, layer in enumerate(spec.layers):
        print(f"  layer {l:>2} {layer.describe():<24} nmse {nmse[l]:.3e}  saturated {fixed.saturations[l]}")
    print(f"float agreement: {float_agree:.4f}")
    print(f"fixed agreement: {agree:.4f}")
    return EXIT_OK


def cmd_perf(args) -> int:
    spec = load_spec(args)
    report = total_cycles(spec, hardware_config(args), args.sw_baseline_ms)
    _out(args).mkdir(parents=True, exist_ok=True)
    report.save(_out(args) / "perf_report.json")
    for l, layer in enumerate(spec.layers):
        print(f"  layer {l:>2} {layer.describe():<24} {report.layer_cycles[l]:>10,} cycles")
    print(f"mode: {report.mode.value}")
    print(f"total cycles: {report.total_cycles:,}")
    print(f"runtime: {report.runtime_ms:.4f} ms at {report.clock_mhz:g} MHz")
    print(f"speedup: {report.speedup:.3f} ({format_speedup(report.speedup)}) "
          f"vs {args.sw_baseline_ms:g} ms software")
    return EXIT_OK


def cmd_emit(args) -> int:
    from .hdl import EmitPlan, emit_all

    spec, weights = load_bundle(args)
    plan = _load_qplan(args, spec)
    if plan.width != args.width:
        print(f"note: using the qplan width W={plan.width}", file=sys.stderr)
    device = load_device(args.device)
    out = _out(args) / "hdl"
    try:
        manifest = emit_all(EmitPlan(spec, weights, plan, hardware_config(args)), out, device)
    except FitError as e:
        print(f"refusing to emit: {e}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {len(manifest['files'])} files to {out}")
    return EXIT_OK


REPORT_FILES = ("fit_report.json", "tune_report.json", "simulate_report.json", "perf_report.json")


def cmd_report(args) -> int:
    out = _out(args)
    summary = {}
    for name in REPORT_FILES:
        path = out / name
        if path.is_file():
            summary[name.removesuffix(".json")] = json.loads(path.read_text())
    hdl = out / "hdl" / "emit_manifest.json"
    if hdl.is_file():
        summary["emit_manifest"] = json.loads(hdl.read_text())
    if not summary:
        raise FileNotFoundError(f"no reports under {out}")
    _write_json(out / "report.json", summary)
    if "fit_report" in summary:
        fit = summary["fit_report"]
        print(f"fit: {'yes' if fit['fits'] else 'no'}  BRAM18 {fit['bram18_needed']}/{fit['bram18_available']}")
    if "tune_report" in summary:
        print(f"tuned final nmse: {summary['tune_report']['final_nmse']:.6e}")
    if "simulate_report" in summary:
        print(f"fixed agreement: {summary['simulate_report']['fixed_agreement']:.4f}")
    if "perf_report" in summary:
        p = summary["perf_report"]
        print(f"{p['mode']}: {p['total_cycles']:,} cycles, {p['runtime_ms']:.4f} ms")
    if "emit_manifest" in summary:
        print(f"hdl files: {len(summary['emit_manifest']['files'])}")
    return EXIT_OK


def cmd_example(args) -> int:
    """Write the shipped network with seeded random weights as a model bundle."""
    spec = example_network()
    out = Path(args.out)
    save_weights(random_weights(spec, args.seed), spec, out)
    print(f"wrote {spec.name} bundle ({total_params(spec):,} parameters) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model bundle directory (default: shipped net, random weights)")
    common.add_argument("--device", default="xc7z020", help="device spec name or JSON path")
    common.add_argument("--width", type=int, default=fx.DEFAULT_WIDTH, help="word width W")
    common.add_argument("--mode", choices=[m.value for m in ConvMode], default="shared")
    common.add_argument("--dsp", type=_dsp_list, default=(16,), help="DSPs per conv unit, N or N,N,...")
    common.add_argument("--dsp-dense", type=int, default=16)
    common.add_argument("--clock-mhz", type=float, default=100.0)
    common.add_argument("--sw-baseline-ms", type=float, default=DEFAULT_SW_BASELINE_MS)
    common.add_argument("--double-buffer", action="store_true", help="two fmap buffers per layer")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="build", help="output directory")

    p = argparse.ArgumentParser(prog="tinycnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("check", parents=[common], help="BRAM/DSP fit check").set_defaults(func=cmd_check)

    s = sub.add_parser("verifset", parents=[common], help="build the verification set")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--random", type=int, metavar="N", help="N seeded uniform images (default 32)")
    g.add_argument("--images", help="float32 file of [N][C][H][W] images")
    s.add_argument("--verif", help="output directory (default OUT/verif)")
    s.set_defaults(func=cmd_verifset)

    s = sub.add_parser("tune", parents=[common], help="search per-layer fixed-point formats")
    s.add_argument("--verif", help="verification directory (default OUT/verif)")
    s.add_argument("--max-passes", type=int, default=5)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("simulate", parents=[common], help="compare fixed and float engines")
    s.add_argument("--verif")
    s.add_argument("--qplan", help="plan file (default OUT/qplan.json)")
    s.add_argument("--trace", action="store_true", help="also dump fixed per-layer raws")
    s.set_defaults(func=cmd_simulate)

    sub.add_parser("perf", parents=[common], help="cycle model and speedup").set_defaults(func=cmd_perf)

    s = sub.add_parser("emit", parents=[common], help="write the Verilog tree")
    s.add_argument("--qplan")
    s.set_defaults(func=cmd_emit)

    sub.add_parser("report", parents=[common], help="collect reports into OUT/report.json").set_defaults(
        func=cmd_report)
    sub.add_parser("example", parents=[common], help="write the shipped net as a bundle").set_defaults(
        func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not fx.MIN_WIDTH <= args.width <= fx.MAX_WIDTH:
        print(f"error: --width must be in [{fx.MIN_WIDTH}, {fx.MAX_WIDTH}]", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, OSError, ManifestError, ShapeError, WeightError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
